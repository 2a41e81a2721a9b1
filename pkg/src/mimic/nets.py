"""Small dense networks with exact analytic gradients.

Plain numpy multilayer perceptrons (hidden nonlinearity, linear output) with
hand-written reverse-mode gradients, a joint forward-over-reverse pass for
penalties on input gradients, warm-started power-iteration spectral
normalization, diagonal-Gaussian output heads (shared by the policy, the
transition model and, with a scalar head, the critic), an Adam optimizer, and
a self-describing binary checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import InvalidInput, InvalidParameter

__all__ = [
    "DenseLayer",
    "MLPParams",
    "init_mlp",
    "forward",
    "backward",
    "input_gradient",
    "input_gradient_param_grads",
    "PowerIterState",
    "spectral_normalize",
    "apply_spectral_norm",
    "GaussianHead",
    "gaussian_log_prob",
    "gaussian_sample",
    "gaussian_entropy",
    "GaussianApproximator",
    "kl_between_heads",
    "regression_step",
    "Adam",
    "clip_grad_norm",
    "write_blob",
    "read_blob",
    "save_mlp",
    "load_mlp",
]

_ACTIVATIONS = ("tanh", "relu")


class PowerIterState:
    """Persistent left/right power-iteration vectors for one weight matrix."""

    def __init__(self, shape: tuple[int, int]):
        # Deterministic pseudo-random init keeps runs reproducible.
        rng = np.random.Generator(np.random.PCG64(0xA5E11 + shape[0] * 131 + shape[1]))
        self.u = _l2_normalize(rng.standard_normal(shape[0]))
        self.v = _l2_normalize(rng.standard_normal(shape[1]))
        self.warm = False


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    spectral_norm: bool = False
    power_state: PowerIterState | None = None


@dataclass
class MLPParams:
    """Dense layers with one hidden nonlinearity; the output layer is linear."""

    layers: list[DenseLayer]
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise InvalidParameter(f"activation must be one of {_ACTIVATIONS}")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise InvalidInput("consecutive layer shapes do not compose")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameter_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MLPParams":
        return MLPParams(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.spectral_norm) for l in self.layers],
            self.activation,
        )


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    activation: str = "tanh",
    spectral_norm: bool = False,
    final_scale: float = 1.0,
) -> MLPParams:
    """Glorot-initialized MLP; ``final_scale`` shrinks the output layer."""
    if len(sizes) < 2:
        raise InvalidParameter("need at least an input and an output size")
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(2.0 / (d_in + d_out))
        if i == len(sizes) - 2:
            scale *= final_scale
        w = rng.standard_normal((d_out, d_in)) * scale
        layers.append(DenseLayer(w, np.zeros(d_out), spectral_norm=spectral_norm))
    return MLPParams(layers, activation)


def _act(name: str, a: np.ndarray) -> np.ndarray:
    return np.tanh(a) if name == "tanh" else np.maximum(a, 0.0)


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    return (a > 0.0).astype(float)


def _act_grad_from_out(name: str, z: np.ndarray) -> np.ndarray:
    """Activation derivative from the cached activation output (tanh is costly
    on some libms, so forward values are reused rather than recomputed)."""
    if name == "tanh":
        return 1.0 - z * z
    return (z > 0.0).astype(float)


def _act_grad2_from_out(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return -2.0 * z * (1.0 - z * z)
    return np.zeros_like(z)


def _as_batch(x: np.ndarray, in_dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != in_dim:
            raise InvalidInput(f"input length {x.shape[0]} does not match first layer ({in_dim})")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise InvalidInput(f"input shape {x.shape} does not match first layer ({in_dim})")
    return x, False


def _forward_cached(params: MLPParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Returns (output, layer inputs z_i, pre-activations a_i)."""
    zs, pres = [x], []
    h = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        a = h @ layer.weight.T + layer.bias
        pres.append(a)
        h = _act(params.activation, a) if i < last else a
        zs.append(h)
    return h, zs, pres


def forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Deterministic feed-forward value; accepts a vector or a (batch, in) matrix."""
    xb, squeeze = _as_batch(x, params.in_dim)
    out, _, _ = _forward_cached(params, xb)
    return out[0] if squeeze else out


def backward(
    params: MLPParams, x: np.ndarray, cotangent: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact reverse-mode gradients of sum_b <output_b, cotangent_b>.

    Returns ``(grads, input_grad)`` where ``grads[i] = (dW_i, db_i)`` are summed
    over the batch and ``input_grad`` matches the shape of ``x``.
    """
    xb, squeeze = _as_batch(x, params.in_dim)
    cot = np.asarray(cotangent, dtype=float)
    if cot.ndim == 1:
        cot = cot[None, :]
    if cot.shape != (xb.shape[0], params.out_dim):
        raise InvalidInput(f"cotangent shape {cotangent.shape} does not match output ({params.out_dim})")
    _, zs, _ = _forward_cached(params, xb)
    grads, delta = _backward_from_cache(params, zs, cot)
    return grads, (delta[0] if squeeze else delta)


def _backward_from_cache(
    params: MLPParams, zs: list[np.ndarray], cot: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse pass reusing the cached layer activations (no re-forward)."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)  # type: ignore
    delta = cot
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        if i < last:
            delta = delta * _act_grad_from_out(params.activation, zs[i + 1])
        grads[i] = (delta.T @ zs[i], delta.sum(axis=0))
        delta = delta @ params.layers[i].weight
    return grads, delta


def input_gradient(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the scalar output w.r.t. the input (out_dim must be 1)."""
    if params.out_dim != 1:
        raise InvalidInput("input_gradient requires a scalar-output network")
    xb, squeeze = _as_batch(x, params.in_dim)
    _, dx = backward(params, xb, np.ones((xb.shape[0], 1)))
    return dx[0] if squeeze else dx


def input_gradient_param_grads(
    params: MLPParams, x: np.ndarray, seeds: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients of S = sum_b <grad_x f(x_b), seeds_b> for scalar f.

    This is the forward-over-reverse pass needed to train through penalties on
    the critic's input gradient.  ``seeds`` plays the role of the constant
    cotangent applied to each sample's input gradient.
    """
    if params.out_dim != 1:
        raise InvalidInput("input_gradient_param_grads requires a scalar-output network")
    xb, _ = _as_batch(x, params.in_dim)
    seeds = np.asarray(seeds, dtype=float).reshape(xb.shape)
    _, zs, pres = _forward_cached(params, xb)

    # Tangent (JVP) pass with per-sample seed tangents.
    act = params.activation
    last = len(params.layers) - 1
    ts, alphas = [seeds], []
    t = seeds
    for i, layer in enumerate(params.layers):
        alpha = t @ layer.weight.T
        alphas.append(alpha)
        t = _act_grad_from_out(act, zs[i + 1]) * alpha if i < last else alpha
        ts.append(t)

    # Joint reverse pass over the primal and tangent graphs.
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)  # type: ignore
    tbar = np.ones((xb.shape[0], 1))
    zbar = np.zeros((xb.shape[0], 1))
    for i in range(last, -1, -1):
        if i < last:
            sig1 = _act_grad_from_out(act, zs[i + 1])
            abar = zbar * sig1 + tbar * alphas[i] * _act_grad2_from_out(act, zs[i + 1])
            alphabar = tbar * sig1
        else:
            abar = zbar
            alphabar = tbar
        dW = abar.T @ zs[i] + alphabar.T @ ts[i]
        db = abar.sum(axis=0)
        grads[i] = (dW, db)
        zbar = abar @ params.layers[i].weight
        tbar = alphabar @ params.layers[i].weight
    return grads


# ---------------------------------------------------------------------------
# Spectral normalization
# ---------------------------------------------------------------------------


def _l2_normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def spectral_normalize(weight: np.ndarray, iters: int, state: PowerIterState) -> np.ndarray:
    """Divide by the power-iteration estimate of the top singular value.

    ``state`` is updated in place so the iteration warm-starts across calls; a
    zero matrix is returned unchanged.
    """
    if iters < 1:
        raise InvalidParameter("iters must be >= 1")
    w = np.asarray(weight, dtype=float)
    if not np.any(w):
        return w
    u, v = state.u, state.v
    for _ in range(iters):
        v = _l2_normalize(w.T @ u)
        u = _l2_normalize(w @ v)
    state.u, state.v = u, v
    sigma = float(u @ w @ v)
    if sigma <= 1e-12:
        return w
    return w / sigma


def apply_spectral_norm(params: MLPParams, iters: int = 1, warmup_iters: int = 50) -> None:
    """Project every flagged layer's weight to unit spectral norm, in place.

    The first projection of a layer runs ``warmup_iters`` power iterations;
    later calls reuse the persistent vectors and only need ``iters``.
    """
    for layer in params.layers:
        if not layer.spectral_norm:
            continue
        if layer.power_state is None:
            layer.power_state = PowerIterState(layer.weight.shape)
        n = iters if layer.power_state.warm else warmup_iters
        layer.weight = spectral_normalize(layer.weight, n, layer.power_state)
        layer.power_state.warm = True


# ---------------------------------------------------------------------------
# Diagonal Gaussian heads
# ---------------------------------------------------------------------------

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianHead:
    """Mean / log-std pair with optional std clamping applied at use time."""

    mean: np.ndarray  # (..., d)
    log_std: np.ndarray  # broadcastable to mean
    std_min: float | None = None
    std_max: float | None = None

    def std(self) -> np.ndarray:
        s = np.exp(np.asarray(self.log_std, dtype=float))
        lo = self.std_min if self.std_min is not None else 0.0
        hi = self.std_max if self.std_max is not None else np.inf
        return np.clip(s, lo, hi)


def gaussian_log_prob(head: GaussianHead, sample: np.ndarray) -> np.ndarray | float:
    """Diagonal-Gaussian log density with the head's clamped std."""
    mean = np.asarray(head.mean, dtype=float)
    x = np.asarray(sample, dtype=float)
    if x.shape[-1] != mean.shape[-1]:
        raise InvalidInput("sample dimension does not match the head")
    s = head.std()
    z = (x - mean) / s
    lp = -0.5 * np.sum(z * z + 2.0 * np.log(s) + _LOG_2PI, axis=-1)
    return float(lp) if lp.ndim == 0 else lp


def gaussian_sample(head: GaussianHead, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(head.mean, dtype=float)
    return mean + head.std() * rng.standard_normal(mean.shape)


def gaussian_entropy(head: GaussianHead) -> np.ndarray | float:
    s = head.std()
    h = np.sum(0.5 * (1.0 + _LOG_2PI) + np.log(s), axis=-1)
    return float(h) if h.ndim == 0 else h


class GaussianApproximator:
    """MLP with a mean head and either a global or a state-dependent log-std.

    In ``std_mode="global"`` the network outputs the mean and a learned
    free-standing log-std vector is shared across inputs; in
    ``std_mode="state"`` the network output is split into mean and log-std
    halves.  Gradients of weighted log-probability and entropy objectives are
    exposed analytically for the policy-gradient updates.
    """

    def __init__(
        self,
        net: MLPParams,
        out_dim: int,
        std_mode: str = "global",
        init_log_std: float = -0.5,
        std_min: float | None = None,
        std_max: float | None = None,
    ):
        if std_mode not in ("global", "state"):
            raise InvalidParameter("std_mode must be 'global' or 'state'")
        expected = out_dim if std_mode == "global" else 2 * out_dim
        if net.out_dim != expected:
            raise InvalidInput(f"net output dim {net.out_dim} incompatible with std_mode={std_mode}")
        self.net = net
        self.out_dim = out_dim
        self.std_mode = std_mode
        self.log_std = np.full(out_dim, float(init_log_std)) if std_mode == "global" else None
        self.std_min = std_min
        self.std_max = std_max

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays = self.net.parameter_arrays()
        if self.log_std is not None:
            arrays.append(self.log_std)
        return arrays

    def copy(self) -> "GaussianApproximator":
        dup = GaussianApproximator(
            self.net.copy(), self.out_dim, self.std_mode,
            std_min=self.std_min, std_max=self.std_max,
        )
        if self.log_std is not None:
            dup.log_std = self.log_std.copy()
        return dup

    def head(self, x: np.ndarray) -> GaussianHead:
        out = forward(self.net, x)
        if self.std_mode == "global":
            mean, log_std = out, self.log_std
        else:
            mean, log_std = out[..., : self.out_dim], out[..., self.out_dim :]
        return GaussianHead(mean, log_std, self.std_min, self.std_max)

    def _unclipped_mask(self, log_std: np.ndarray) -> np.ndarray:
        s = np.exp(log_std)
        mask = np.ones_like(s)
        if self.std_min is not None:
            mask = mask * (s > self.std_min)
        if self.std_max is not None:
            mask = mask * (s < self.std_max)
        return mask

    def log_prob(self, x: np.ndarray, target: np.ndarray) -> np.ndarray:
        return np.atleast_1d(gaussian_log_prob(self.head(x), target))

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return gaussian_sample(self.head(x), rng)

    def mean_output(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.head(x).mean)

    def entropy(self, x: np.ndarray) -> np.ndarray:
        head = self.head(x)
        log_std = np.broadcast_to(np.asarray(head.log_std, dtype=float), np.shape(head.mean))
        per_sample = GaussianHead(head.mean, log_std, head.std_min, head.std_max)
        return np.atleast_1d(gaussian_entropy(per_sample))

    def weighted_objective_grads(
        self,
        x: np.ndarray,
        target: np.ndarray,
        coeff: np.ndarray,
        entropy_coeff: float = 0.0,
        mean_cot_extra: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Gradients of sum_b coeff_b * log p(target_b | x_b) + entropy term.

        The entropy term is ``entropy_coeff * sum_b H(x_b)``.  An optional
        extra cotangent on the mean head supports squared-error objectives that
        share the same network.  Returns gradients aligned with
        :meth:`parameter_arrays`.
        """
        xb, _ = _as_batch(x, self.net.in_dim)
        out, zs, _ = _forward_cached(self.net, xb)
        if self.std_mode == "global":
            mean, log_std = out, self.log_std
        else:
            mean, log_std = out[..., : self.out_dim], out[..., self.out_dim :]
        log_std_b = np.broadcast_to(np.asarray(log_std, dtype=float), mean.shape)
        s = np.clip(
            np.exp(log_std_b),
            self.std_min if self.std_min is not None else 0.0,
            self.std_max if self.std_max is not None else np.inf,
        )
        coeff = np.asarray(coeff, dtype=float).reshape(-1, 1)
        diff = np.asarray(target, dtype=float) - mean
        unclipped = self._unclipped_mask(log_std_b)

        cot_mean = coeff * diff / (s * s)
        if mean_cot_extra is not None:
            cot_mean = cot_mean + mean_cot_extra
        cot_log_std = coeff * (diff * diff / (s * s) - 1.0) * unclipped
        if entropy_coeff:
            cot_log_std = cot_log_std + entropy_coeff * unclipped

        if self.std_mode == "global":
            grads, _ = _backward_from_cache(self.net, zs, cot_mean)
            flat = [g for pair in grads for g in pair]
            flat.append(cot_log_std.sum(axis=0))
            return flat
        net_cot = np.concatenate([cot_mean, cot_log_std], axis=-1)
        grads, _ = _backward_from_cache(self.net, zs, net_cot)
        return [g for pair in grads for g in pair]

    def kl_to(self, other: "GaussianApproximator", x: np.ndarray) -> float:
        """Mean KL(self || other) over the batch, with clamped stds."""
        return kl_between_heads(self.head(x), other.head(x))


def kl_between_heads(h1: GaussianHead, h2: GaussianHead) -> float:
    """Mean diagonal-Gaussian KL(h1 || h2) over a batch of heads."""
    m1, m2 = np.atleast_2d(h1.mean), np.atleast_2d(h2.mean)
    s1 = np.broadcast_to(h1.std(), m1.shape)
    s2 = np.broadcast_to(h2.std(), m2.shape)
    kl = np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2.0 * s2**2) - 0.5
    return float(kl.sum(axis=-1).mean())


def regression_step(params: MLPParams, x: np.ndarray, targets: np.ndarray, optimizer: "Adam") -> float:
    """One MSE descent step for a scalar-output network; returns the loss."""
    out, zs, _ = _forward_cached(params, np.atleast_2d(x))
    err = out[:, 0] - np.asarray(targets, dtype=float)
    grads, _ = _backward_from_cache(params, zs, (2.0 * err / len(err))[:, None])
    optimizer.step(params.parameter_arrays(), [g for pair in grads for g in pair])
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Gradient-descent step in place (pass the negated gradient to ascend)."""
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        if len(arrays) != len(self.m):
            raise InvalidInput("parameter list changed size under the optimizer")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


# ---------------------------------------------------------------------------
# Checkpoint blobs: magic, version, named shaped arrays, little-endian f64.
# ---------------------------------------------------------------------------

_MAGIC = b"MIMICBLB"
_VERSION = 1


def write_blob(path: str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(data.tobytes())


def read_blob(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise InvalidInput(f"{path} is not a checkpoint blob")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise InvalidInput(f"unsupported blob version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = arr.astype(float)
    return out


def save_mlp(params: MLPParams, prefix: str = "") -> dict[str, np.ndarray]:
    out = {
        f"{prefix}activation": np.array([float(_ACTIVATIONS.index(params.activation))]),
        f"{prefix}sn_flags": np.array([float(l.spectral_norm) for l in params.layers]),
    }
    for i, layer in enumerate(params.layers):
        out[f"{prefix}layer{i}.weight"] = layer.weight
        out[f"{prefix}layer{i}.bias"] = layer.bias
    return out


def load_mlp(arrays: dict[str, np.ndarray], prefix: str = "") -> MLPParams:
    activation = _ACTIVATIONS[int(arrays[f"{prefix}activation"][0])]
    flags = arrays[f"{prefix}sn_flags"]
    layers = []
    for i in range(len(flags)):
        layers.append(
            DenseLayer(
                arrays[f"{prefix}layer{i}.weight"].copy(),
                arrays[f"{prefix}layer{i}.bias"].copy(),
                spectral_norm=bool(flags[i]),
            )
        )
    return MLPParams(layers, activation)
