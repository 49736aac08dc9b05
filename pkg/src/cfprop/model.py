"""Two-headed outcome network (shared ReLU representation, one head per arm) and Adam."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "CFPROP-TARNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Hidden widths of the shared trunk and of each head.

    Every shared layer is followed by a ReLU.  Heads apply ReLU after their
    hidden layers and end in a single linear unit, so the default
    ``head_widths=()`` gives linear heads on a one-layer representation.
    """

    shared_widths: tuple[int, ...] = (64,)
    head_widths: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shared_widths", tuple(int(w) for w in self.shared_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if not self.shared_widths:
            raise ValueError("the shared trunk needs at least one layer")
        if any(w <= 0 for w in self.shared_widths + self.head_widths):
            raise ValueError("layer widths must be positive")


@dataclass
class TarnetParams:
    """Layer lists of ``[W, b]`` pairs; ``W`` has shape (fan_in, fan_out)."""

    shared: list
    head0: list
    head1: list

    def blocks(self):
        """Yield ``(name, array)`` for every parameter array in a fixed order."""
        for part in ("shared", "head0", "head1"):
            for k, (w, b) in enumerate(getattr(self, part)):
                yield f"{part}.{k}.weight", w
                yield f"{part}.{k}.bias", b

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.blocks()]

    def map(self, fn) -> "TarnetParams":
        return TarnetParams(*([[fn(w), fn(b)] for w, b in getattr(self, p)] for p in ("shared", "head0", "head1")))

    def copy(self) -> "TarnetParams":
        return self.map(np.copy)

    def zeros_like(self) -> "TarnetParams":
        return self.map(np.zeros_like)

    @property
    def input_dim(self) -> int:
        return self.shared[0][0].shape[0]


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(d: int, arch: ArchSpec, rng: np.random.Generator) -> TarnetParams:
    """Glorot-uniform weights, zero biases."""
    if d <= 0:
        raise ValueError("input dimension must be positive")

    def stack(dims):
        return [[_glorot(rng, a, b), np.zeros(b)] for a, b in zip(dims[:-1], dims[1:])]

    shared = stack((d,) + arch.shared_widths)
    r = arch.shared_widths[-1]
    head_dims = (r,) + arch.head_widths + (1,)
    head0 = stack(head_dims)
    head1 = stack(head_dims)
    return TarnetParams(shared, head0, head1)


@dataclass
class ForwardCache:
    inputs: list  # activations entering each shared layer
    pre: list  # shared pre-activations
    rep: np.ndarray
    head_inputs: tuple  # per head: activations entering each layer
    head_pre: tuple  # per head: hidden pre-activations


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected input of shape (n, {params.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in model input")
    return x


def _head_forward(layers, h):
    inputs, pre = [h], []
    u = h
    for w, b in layers[:-1]:
        v = u @ w + b
        pre.append(v)
        u = np.maximum(v, 0.0)
        inputs.append(u)
    w, b = layers[-1]
    return (u @ w + b)[:, 0], inputs, pre


def forward_both(params: TarnetParams, x) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Predictions of both heads with one pass through the shared trunk."""
    x = _check_input(params, x)
    inputs, pre = [], []
    a = x
    for w, b in params.shared:
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    out0, in0, pre0 = _head_forward(params.head0, a)
    out1, in1, pre1 = _head_forward(params.head1, a)
    return out0, out1, ForwardCache(inputs, pre, a, (in0, in1), (pre0, pre1))


def forward(params: TarnetParams, x, t):
    """Predict ``f(x, t)``; ``t`` is a single arm (0/1) or one arm per row."""
    out0, out1, cache = forward_both(params, x)
    t = np.asarray(t)
    if t.ndim == 0:
        if int(t) not in (0, 1):
            raise ValueError("treatment arm must be 0 or 1")
        return (out1 if int(t) == 1 else out0), cache
    return np.where(t == 1, out1, out0), cache


def predict_ite(params: TarnetParams, x) -> np.ndarray:
    out0, out1, _ = forward_both(params, x)
    return out1 - out0


def predict_outcomes(params: TarnetParams, x) -> tuple[np.ndarray, np.ndarray]:
    out0, out1, _ = forward_both(params, x)
    return out0, out1


def _head_backward(layers, grads, inputs, pre, g_out):
    g = g_out[:, None]
    w, _ = layers[-1]
    grads[-1][0] += inputs[-1].T @ g
    grads[-1][1] += g.sum(axis=0)
    g = g @ w.T
    for k in range(len(layers) - 2, -1, -1):
        g = g * (pre[k] > 0.0)
        grads[k][0] += inputs[k].T @ g
        grads[k][1] += g.sum(axis=0)
        g = g @ layers[k][0].T
    return g


def backward(params: TarnetParams, cache: ForwardCache, g_out0, g_out1, grads: TarnetParams | None = None) -> TarnetParams:
    """Accumulate parameter gradients given d(loss)/d(head outputs).

    ``grads`` is updated in place when supplied, otherwise a fresh buffer is
    returned.
    """
    if grads is None:
        grads = params.zeros_like()
    g_rep = _head_backward(params.head0, grads.head0, cache.head_inputs[0], cache.head_pre[0], g_out0)
    g_rep = g_rep + _head_backward(params.head1, grads.head1, cache.head_inputs[1], cache.head_pre[1], g_out1)
    g = g_rep
    for k in range(len(params.shared) - 1, -1, -1):
        g = g * (cache.pre[k] > 0.0)
        grads.shared[k][0] += cache.inputs[k].T @ g
        grads.shared[k][1] += g.sum(axis=0)
        if k:
            g = g @ params.shared[k][0].T
    return grads


@dataclass
class AdamState:
    m: TarnetParams
    v: TarnetParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: TarnetParams, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), lr=lr, **kw)


def adam_step(state: AdamState, params: TarnetParams, grads: TarnetParams):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    names = [name for name, _ in params.blocks()]
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr):
        raise ValueError("gradient buffers are not congruent with parameters")
    for name, p, g in zip(names, p_arr, g_arr):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(p_arr, g_arr, state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def save_params(path, params: TarnetParams, arch: ArchSpec, seed: int | None = None) -> None:
    """Write a JSON checkpoint: magic, version, arch, seed and row-major blocks."""
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "arch": {k: list(v) for k, v in asdict(arch).items()},
        "input_dim": params.input_dim,
        "seed": seed,
        "blocks": [{"name": n, "shape": list(a.shape), "data": a.ravel().tolist()} for n, a in params.blocks()],
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> tuple[TarnetParams, ArchSpec, int | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arch = ArchSpec(**doc["arch"])
    params = init_params(doc["input_dim"], arch, np.random.default_rng(0))
    blocks = {b["name"]: b for b in doc["blocks"]}
    for name, arr in params.blocks():
        blk = blocks.get(name)
        if blk is None or tuple(blk["shape"]) != arr.shape:
            raise ValueError(f"{path}: block {name} missing or mis-shaped")
        arr[...] = np.asarray(blk["data"], dtype=np.float64).reshape(arr.shape)
    return params, arch, doc.get("seed")
