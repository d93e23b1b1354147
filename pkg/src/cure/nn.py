"""Small deterministic dense-network engine.

Everything here is float64 numpy. Networks are plain stacks of affine
layers followed by an elementwise activation. Inputs may be a single
vector of shape ``(in,)`` or a batch of shape ``(batch, in)``; gradients
coming back from a batch are summed over rows, so losses should already
carry their own ``1/batch`` factor.

Random initialisation uses numpy's ``PCG64`` bit generator seeded with a
single 64-bit integer; weights are drawn layer by layer, each weight
matrix in row-major (out, in) order, so a given ``(spec, seed)`` always
produces the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ShapeError, ValidationError

BCE_EPS = 1e-7


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(np.float64)


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


def _identity(z):
    return z.copy()


def _identity_grad(z, a):
    return np.ones_like(z)


class Activation(NamedTuple):
    fn: Callable[[np.ndarray], np.ndarray]
    # derivative expressed with both pre-activation z and output a
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]


ACTIVATIONS: dict[str, Activation] = {
    "relu": Activation(_relu, _relu_grad),
    "sigmoid": Activation(_sigmoid, _sigmoid_grad),
    "identity": Activation(_identity, _identity_grad),
}


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return _sigmoid(np.atleast_1d(z)).reshape(z.shape)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: input width plus ``(width, activation)`` per layer."""

    input_dim: int
    layers: tuple[tuple[int, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((int(w), str(a)) for w, a in self.layers))
        if self.input_dim < 1:
            raise ValidationError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.layers:
            raise ValidationError("MlpSpec needs at least one layer")
        for width, act in self.layers:
            if width < 1:
                raise ValidationError(f"layer width must be >= 1, got {width}")
            if act not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {act!r}")

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0]

    def shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [w for w, _ in self.layers]
        return [(dims[i + 1], dims[i]) for i in range(len(self.layers))]


@dataclass
class MlpParams:
    """Per-layer weight matrices ``(out, in)`` and bias vectors ``(out,)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec(self.input_dim, tuple((w.shape[0], a) for w, a in zip(self.weights, self.activations)))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        return MlpParams(arrays[0::2], arrays[1::2], self.activations)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def tobytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays())


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """He-normal weights for relu layers, Xavier-uniform otherwise, zero biases."""
    rng = make_rng(seed)
    weights, biases = [], []
    for (fan_out, fan_in), (_, act) in zip(spec.shapes(), spec.layers):
        if act == "relu":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, tuple(a for _, a in spec.layers))


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    batched: bool = False


def _as_batch(x, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim != 2:
        raise ShapeError(f"{what} must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ShapeError(f"{what} has width {x.shape[1]}, expected {dim}")
    return x, batched


def forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    h, batched = _as_batch(x, params.input_dim, "input")
    cache = ForwardCache(params, batched=batched)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = h @ w.T + b
        a = ACTIVATIONS[act].fn(z)
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.post.append(a)
        h = a
    return (h if batched else h[0]), cache


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(cache: ForwardCache, grad_out) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode pass; returns parameter gradients and d(loss)/d(input)."""
    params = cache.params
    g, _ = _as_batch(grad_out, params.output_dim, "grad_out")
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise ShapeError(f"grad_out has {g.shape[0]} rows, forward had {cache.inputs[0].shape[0]}")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        act = ACTIVATIONS[params.activations[i]]
        dz = g * act.grad(cache.pre[i], cache.post[i])
        gw[i] = dz.T @ cache.inputs[i]
        gb[i] = dz.sum(axis=0)
        g = dz @ params.weights[i]
    grad_in = g if cache.batched else g[0]
    return MlpParams(gw, gb, params.activations), grad_in


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean of squared differences over every element, with its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_loss(p, y) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Binary cross-entropy on a probability, clamped to ``[eps, 1-eps]``.

    Works elementwise on arrays. The returned gradient is taken at the
    clamped probability (the clamp is treated as identity for gradients).
    """
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = -(y / p) + (1.0 - y) / (1.0 - p)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MlpParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValidationError("Adam betas must lie strictly between 0 and 1")
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr, beta1, beta2, eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree on layer count")
    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return params.with_arrays(new_p), new_state


def add_grads(a: MlpParams, b: MlpParams) -> MlpParams:
    return a.with_arrays([x + y for x, y in zip(a.arrays(), b.arrays())])


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.where(diff == 0.0, 0.0, diff / scale)


def grad_check_errors(
    spec: MlpSpec, seed: int, h: float = 1e-5, floor: float = 1e-6, x=None, params=None
) -> list[float]:
    """Per-array maximum relative error, in ``MlpParams.arrays()`` order.

    The loss is ``mse_loss(forward(x), target)`` for an input and target
    drawn from ``seed``. Relative error is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps gradients that are zero up to rounding from dominating.
    """
    if len(spec.layers) > 3 or max(w for w, _ in spec.layers) > 32 or spec.input_dim > 32:
        raise ValidationError("grad_check is meant for small specs (<= 3 layers, <= 32 wide)")
    rng = make_rng(seed)
    if params is None:
        params = init_params(spec, seed)
    if x is None:
        x = rng.normal(size=spec.input_dim)
    target = rng.normal(size=spec.output_dim)

    def loss_at(p: MlpParams) -> float:
        return mse_loss(forward(p, x)[0], target)[0]

    y, cache = forward(params, x)
    _, g = mse_loss(y, target)
    analytic, _ = backward(cache, g)

    errors = []
    base = params.arrays()
    for k, (arr, garr) in enumerate(zip(base, analytic.arrays())):
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            probe = [a.copy() if j == k else a for j, a in enumerate(base)]
            probe[k][idx] = arr[idx] + h
            up = loss_at(params.with_arrays(probe))
            probe[k][idx] = arr[idx] - h
            down = loss_at(params.with_arrays(probe))
            numeric[idx] = (up - down) / (2.0 * h)
        errors.append(float(_relative_error(garr, numeric, floor).max()) if arr.size else 0.0)
    return errors


def grad_check(spec: MlpSpec, seed: int, h: float = 1e-5, floor: float = 1e-6, x=None, params=None) -> float:
    """Largest relative error between backprop and central differences."""
    return max(grad_check_errors(spec, seed, h, floor, x, params))



GRADCHECK_TOLERANCE = 1e-5

GRADCHECK_SPECS = (
    MlpSpec(4, ((8, "relu"), (3, "identity"))),
    MlpSpec(3, ((6, "sigmoid"), (2, "sigmoid"))),
    MlpSpec(5, ((5, "identity"),)),
    MlpSpec(6, ((16, "relu"), (16, "relu"), (1, "sigmoid"))),
    MlpSpec(8, ((32, "sigmoid"), (8, "relu"), (2, "identity"))),
    MlpSpec(7, ((12, "relu"), (6, "sigmoid"), (4, "identity"))),
)


def gradcheck_matrix(seeds: Sequence[int] = (0, 1, 2)) -> list[tuple[MlpSpec, int, float]]:
    """``grad_check`` over every spec in ``GRADCHECK_SPECS`` and seed."""
    return [(spec, seed, grad_check(spec, seed)) for spec in GRADCHECK_SPECS for seed in seeds]
