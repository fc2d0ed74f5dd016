"""Feed-forward ReLU policies indexed by a flat parameter vector."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Architecture",
    "PolicyParams",
    "SmoothnessConstants",
    "evaluate",
    "evaluate_batch",
    "flatten",
    "unflatten",
    "param_jacobian",
    "estimate_constants",
    "save_policy",
    "load_policy",
]

_OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class Architecture:
    """Layer shapes as (input_dim, output_dim) pairs.

    Hidden layers use ReLU.  The output layer is either the identity or
    ``output_scale * tanh``, which keeps actions inside a symmetric box.
    """

    layer_dims: tuple[tuple[int, int], ...]
    output_activation: str = "identity"
    output_scale: float = 1.0
    bias: bool = True
    hidden_activation: str = field(default="relu")

    def __post_init__(self):
        dims = tuple((int(i), int(o)) for i, o in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if not dims:
            raise ValueError("architecture needs at least one layer")
        if any(i <= 0 or o <= 0 for i, o in dims):
            raise ValueError("layer dimensions must be positive")
        for (_, o_prev), (i_next, _) in zip(dims[:-1], dims[1:]):
            if i_next != o_prev:
                raise ValueError(f"layers are not composable: {o_prev} outputs feed {i_next} inputs")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {_OUTPUT_ACTIVATIONS}")
        if self.hidden_activation != "relu":
            raise ValueError("only ReLU hidden layers are supported")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0][0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1][1]

    @property
    def n_params(self) -> int:
        return sum(o * (i + int(self.bias)) for i, o in self.layer_dims)

    def slices(self):
        """Per layer: (W slice, b slice or None, (out, in))."""
        off = 0
        out = []
        for i, o in self.layer_dims:
            w = slice(off, off + o * i)
            off += o * i
            b = None
            if self.bias:
                b = slice(off, off + o)
                off += o
            out.append((w, b, (o, i)))
        return out

    def to_dict(self) -> dict:
        return {
            "layers": [list(d) for d in self.layer_dims],
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "output_scale": self.output_scale,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            layer_dims=tuple(tuple(x) for x in d["layers"]),
            output_activation=d.get("output_activation", "identity"),
            output_scale=float(d.get("output_scale", 1.0)),
            bias=bool(d.get("bias", True)),
            hidden_activation=d.get("hidden_activation", "relu"),
        )


@dataclass(frozen=True)
class PolicyParams:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != self.arch.n_params:
            raise ValueError(f"theta has length {theta.size}, architecture needs {self.arch.n_params}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __call__(self, state):
        return evaluate(self, state)


@dataclass(frozen=True)
class SmoothnessConstants:
    G: float
    L: float
    R: float
    H: int
    gamma: float

    def __post_init__(self):
        if min(self.G, self.L, self.R) < 0 or self.H < 0:
            raise ValueError("smoothness constants must be non-negative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    """Concatenate layers as [W^1 rows, b^1, W^2 rows, b^2, ...]."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=float).ravel())
        if b is not None:
            parts.append(np.asarray(b, dtype=float).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten(theta, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray | None]]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != arch.n_params:
        raise ValueError(f"theta has length {theta.shape[-1]}, architecture needs {arch.n_params}")
    layers = []
    for ws, bs, (o, i) in arch.slices():
        w = theta[..., ws].reshape(theta.shape[:-1] + (o, i))
        b = theta[..., bs] if bs is not None else None
        layers.append((w, b))
    return layers


def _forward(arch: Architecture, thetas: np.ndarray, z: np.ndarray, keep_pre: bool = False):
    pre = []
    layers = unflatten(thetas, arch)
    for k, (w, b) in enumerate(layers):
        # (P, o, i) x (P, n, i) -> (P, n, o); summed explicitly so results do
        # not depend on the batch size.
        z = np.sum(w[:, None, :, :] * z[:, :, None, :], axis=-1)
        if b is not None:
            z = z + b[:, None, :]
        if k < len(layers) - 1:
            if keep_pre:
                pre.append(z)
            z = np.maximum(z, 0.0)
    if arch.output_activation == "tanh":
        z = arch.output_scale * np.tanh(z)
    return (z, pre) if keep_pre else z


def evaluate_batch(arch: Architecture, thetas, states) -> np.ndarray:
    """Actions for P parameter vectors on states.

    ``thetas`` is (P, l).  ``states`` is (n, q), shared by all P, or
    (P, n, q).  Returns (P, n, m).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    states = np.asarray(states, dtype=float)
    if states.shape[-1] != arch.input_dim:
        raise ValueError(f"state dimension {states.shape[-1]} != policy input {arch.input_dim}")
    if states.ndim == 2:
        states = np.broadcast_to(states, (len(thetas),) + states.shape)
    return _forward(arch, thetas, states)


def evaluate(policy: PolicyParams, state) -> np.ndarray:
    """pi_theta(s) for a single state vector."""
    s = np.asarray(state, dtype=float)
    if s.shape != (policy.arch.input_dim,):
        raise ValueError(f"expected state of shape ({policy.arch.input_dim},), got {s.shape}")
    return evaluate_batch(policy.arch, policy.theta[None], s[None])[0, 0]


def activation_pattern(arch: Architecture, thetas, states) -> np.ndarray:
    """Signs of all hidden pre-activations, (P, n, n_hidden_units)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = np.broadcast_to(states, (len(thetas),) + states.shape)
    _, pre = _forward(arch, thetas, states, keep_pre=True)
    if not pre:
        return np.zeros(states.shape[:2] + (0,), dtype=bool)
    return np.concatenate([p > 0 for p in pre], axis=-1)


def param_jacobian(policy: PolicyParams, state) -> np.ndarray:
    """Analytic d pi_theta(s) / d theta, shape (m, l)."""
    arch = policy.arch
    z = np.asarray(state, dtype=float)
    layers = unflatten(policy.theta, arch)
    inputs, masks = [], []
    for k, (w, b) in enumerate(layers):
        inputs.append(z)
        z = w @ z + (b if b is not None else 0.0)
        if k < len(layers) - 1:
            masks.append((z > 0).astype(float))
            z = np.maximum(z, 0.0)
    if arch.output_activation == "tanh":
        upstream = np.diag(arch.output_scale * (1.0 - np.tanh(z) ** 2))
    else:
        upstream = np.eye(arch.output_dim)
    jac = np.zeros((arch.output_dim, arch.n_params))
    for k in range(len(layers) - 1, -1, -1):
        ws, bs, (o, i) = arch.slices()[k]
        # upstream: d out / d (pre-activation of layer k), shape (m, o)
        jac[:, ws] = (upstream[:, :, None] * inputs[k][None, None, :]).reshape(arch.output_dim, o * i)
        if bs is not None:
            jac[:, bs] = upstream
        if k > 0:
            upstream = (upstream @ layers[k][0]) * masks[k - 1][None, :]
    return jac


def _as_sampler(states) -> Callable[[np.random.Generator, int], np.ndarray]:
    if callable(states):
        return states
    low, high = (np.asarray(x, dtype=float) for x in states)
    if np.any(high <= low):
        raise ValueError("state box has zero volume")
    return lambda rng, n: rng.uniform(low, high, size=(n, low.size))


def estimate_constants(
    arch: Architecture,
    theta_box,
    state_box,
    samples: int,
    seed,
    *,
    env=None,
    horizon: int = 0,
    discount: float = 0.0,
    safety_factor: float = 1.5,
    fd_step: float = 1e-4,
) -> SmoothnessConstants:
    """Sampled estimates of the policy Jacobian/Hessian bounds G, L and reward bound R.

    ``state_box`` is either a (low, high) pair or a sampler ``(rng, n) -> states``.
    Hessian samples whose finite-difference stencil crosses a ReLU kink are
    skipped.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    lo, hi = (np.broadcast_to(np.asarray(x, dtype=float), (arch.n_params,)) for x in theta_box)
    if np.any(hi <= lo):
        raise ValueError("theta box has zero volume")
    sampler = _as_sampler(state_box)
    rng = np.random.default_rng(seed)
    l = arch.n_params
    thetas = rng.uniform(lo, hi, size=(samples, l))
    states = sampler(rng, samples)
    h = fd_step
    eye = np.eye(l) * h

    # Jacobian by central differences, stencil (samples, 2l, l)
    stencil = np.concatenate([thetas[:, None] + eye, thetas[:, None] - eye], axis=1)
    outs = evaluate_batch(arch, stencil.reshape(-1, l), np.repeat(states, 2 * l, axis=0)[:, None, :])
    outs = outs.reshape(samples, 2 * l, -1)
    jac = np.swapaxes((outs[:, :l] - outs[:, l:]) / (2 * h), 1, 2)  # (samples, m, l)
    G = safety_factor * float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))))

    # Hessian by the four-point mixed stencil
    hs = max(h, 1e-3)
    ea = np.eye(l) * hs
    pp = thetas[:, None, None] + ea[None, :, None] + ea[None, None, :]
    pm = thetas[:, None, None] + ea[None, :, None] - ea[None, None, :]
    mp = thetas[:, None, None] - ea[None, :, None] + ea[None, None, :]
    mm = thetas[:, None, None] - ea[None, :, None] - ea[None, None, :]
    corners = np.stack([pp, pm, mp, mm], axis=3).reshape(samples, -1, l)
    rep_states = np.repeat(states, corners.shape[1], axis=0)[:, None, :]
    vals = evaluate_batch(arch, corners.reshape(-1, l), rep_states).reshape(samples, l, l, 4, -1)
    hess = (vals[..., 0, :] - vals[..., 1, :] - vals[..., 2, :] + vals[..., 3, :]) / (4 * hs * hs)
    pattern = activation_pattern(arch, corners.reshape(-1, l), rep_states).reshape(samples, corners.shape[1], -1)
    center = activation_pattern(arch, thetas, states[:, None, :])
    smooth = np.all(pattern == center, axis=(1, 2))
    # (samples, m, l, l): bound the tensor norm by the root-sum of per-output norms
    hess = np.moveaxis(hess, -1, 1)
    norms = np.sqrt(np.sum(np.linalg.norm(hess, ord=2, axis=(2, 3)) ** 2, axis=1))
    L = safety_factor * float(np.max(norms[smooth])) if np.any(smooth) else 0.0

    R = 0.0
    if env is not None:
        acts = evaluate_batch(arch, thetas, states[:, None, :])[:, 0]
        box_lo = np.where(np.isfinite(env.action_low), env.action_low, -1.0)
        box_hi = np.where(np.isfinite(env.action_high), env.action_high, 1.0)
        uni = rng.uniform(box_lo, box_hi, size=(samples, env.action_dim))
        r = np.concatenate([env.reward(states, acts), env.reward(states, uni)])
        R = float(np.max(np.abs(r)))
    return SmoothnessConstants(G=G, L=L, R=R, H=int(horizon), gamma=float(discount))


def save_policy(path, policy: PolicyParams) -> None:
    doc = {"arch": policy.arch.to_dict(), "theta": [float(x) for x in policy.theta]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_policy(path) -> PolicyParams:
    with open(path) as fh:
        doc = json.load(fh)
    return PolicyParams(Architecture.from_dict(doc["arch"]), np.array(doc["theta"], dtype=float))
