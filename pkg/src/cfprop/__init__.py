"""Semi-supervised individual treatment effect estimation by counterfactual propagation."""

__version__ = "0.1.0"
