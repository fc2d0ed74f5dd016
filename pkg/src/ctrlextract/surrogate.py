"""Gradient-landscape surrogate with a certified component-wise error budget.

Pipeline: sample Theta on a grid, estimate each gradient component by forward
differences of J-bar, fit a random-feature multi-kernel regressor per
component, and bound |g_j - g_hat_j| by

    e_j = c L_g[j] + 2 m_bar / c + zeta[j] + eta (L_ghat[j] + L_gtilde[j]).
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .objective import ObjectiveEvaluator, evaluate_jbar_many
from .policy import SmoothnessConstants

log = logging.getLogger(__name__)

__all__ = [
    "GridCapExceeded",
    "ParameterGrid",
    "FdSamples",
    "KernelSpec",
    "Surrogate",
    "ErrorBudget",
    "build_grid",
    "finite_diff",
    "sample_gradients",
    "default_dictionary",
    "fit_mkl",
    "sample_error",
    "lipschitz_from_samples",
    "lipschitz_theoretical",
    "assemble_budget",
    "build_surrogate",
]

DEFAULT_GRID_CAP = 200_000


class GridCapExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# Grid


@dataclass(frozen=True, eq=False)
class ParameterGrid:
    low: np.ndarray
    high: np.ndarray
    eta: float
    points: np.ndarray
    mode: str = "full"
    # distance from any theta in the box to its nearest grid point
    covering_radius: float = 0.0
    spacing: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def budget_eta(self) -> float:
        """Spacing entering the interpolation term of the error budget."""
        return float(max(self.eta, self.covering_radius))

    def neighbor_radius(self) -> float:
        if self.spacing is not None:
            return float(np.linalg.norm(self.spacing)) * (1 + 1e-9)
        return 2.0 * self.covering_radius


def _axis_counts(low, high, eta):
    width = high - low
    return np.where(width > 0, np.ceil(width / eta - 1e-9).astype(int) + 1, 1)


def build_grid(
    low,
    high,
    eta: float,
    *,
    cap: int = DEFAULT_GRID_CAP,
    mode: str = "full",
    n_points: int | None = None,
    seed: int = 0,
) -> ParameterGrid:
    """Uniform grid with spacing at most ``eta`` (``mode='full'``), or a
    Latin-hypercube design whose effective spacing is its covering radius
    (``mode='sparse'``)."""
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    if low.shape != high.shape or np.any(high < low):
        raise ValueError("invalid parameter box")
    if not eta > 0:
        raise ValueError("eta must be positive")
    if mode == "full":
        counts = _axis_counts(low, high, eta)
        total = int(np.prod(counts.astype(float)))
        if total > cap:
            # spacing that would fit under the cap with equal counts per axis
            per_axis = max(int(np.floor(cap ** (1.0 / low.size))), 2)
            need = float(np.max((high - low) / (per_axis - 1)))
            raise GridCapExceeded(
                f"full grid would have {total} points (cap {cap}); use eta >= {need:.4g} "
                f"or mode='sparse'"
            )
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(low, high, counts)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, low.size)
        spacing = np.where(counts > 1, (high - low) / np.maximum(counts - 1, 1), 0.0)
        cover = 0.5 * float(np.linalg.norm(spacing))
        return ParameterGrid(low, high, float(eta), pts, "full", cover, spacing)
    if mode == "sparse":
        if n_points is None:
            raise ValueError("sparse mode needs n_points")
        if n_points > cap:
            raise GridCapExceeded(f"n_points {n_points} exceeds cap {cap}")
        sampler = qmc.LatinHypercube(d=low.size, seed=seed)
        pts = qmc.scale(sampler.random(n_points), low, high) if np.all(high > low) else \
            np.broadcast_to(low, (n_points, low.size)).copy()
        tree = cKDTree(pts)
        rng = np.random.default_rng(seed)
        probes = rng.uniform(low, high, size=(20_000, low.size))
        corners = np.array(np.meshgrid(*zip(low, high), indexing="ij")).reshape(low.size, -1).T
        d_probe = tree.query(np.vstack([probes, corners]))[0]
        d_nn = tree.query(pts, k=2)[0][:, 1]
        eff = float(max(d_probe.max(), d_nn.max()))
        return ParameterGrid(low, high, eff, pts, "sparse", eff, None)
    raise ValueError("mode must be 'full' or 'sparse'")


# ---------------------------------------------------------------------------
# Finite differences


@dataclass(frozen=True, eq=False)
class FdSamples:
    """Forward-difference gradient estimates g_tilde at every grid point.

    ``values[i, j]`` is g_tilde_j at ``points[i]`` with step ``c``.
    """

    points: np.ndarray
    values: np.ndarray
    c: float

    def records(self):
        """Yield (theta, j, value) rows, j counted from 1."""
        for i, th in enumerate(self.points):
            for j in range(self.values.shape[1]):
                yield th, j + 1, float(self.values[i, j])


def finite_diff(ev: ObjectiveEvaluator, theta, j: int, c: float) -> float:
    """(J-bar(theta + c e_j) - J-bar(theta)) / c, with j zero-based."""
    if not c > 0:
        raise ValueError("finite-difference step c must be positive")
    theta = np.asarray(theta, dtype=float)
    shifted = theta.copy()
    shifted[j] += c
    vals = evaluate_jbar_many(ev, np.stack([shifted, theta]))
    return float((vals[0] - vals[1]) / c)


def sample_gradients(ev: ObjectiveEvaluator, grid: ParameterGrid, c: float, chunk: int = 2048) -> FdSamples:
    if not c > 0:
        raise ValueError("finite-difference step c must be positive")
    pts = grid.points
    M, l = pts.shape
    out = np.empty((M, l))
    eye = np.eye(l) * c
    for start in range(0, M, chunk):
        block = pts[start:start + chunk]
        stencil = np.concatenate([block[:, None], block[:, None] + eye], axis=1)
        vals = evaluate_jbar_many(ev, stencil.reshape(-1, l)).reshape(len(block), l + 1)
        out[start:start + chunk] = (vals[:, 1:] - vals[:, :1]) / c
    log.info("sampled %d grid points x %d directions (%d J-bar evaluations)", M, l, M * (l + 1))
    return FdSamples(pts, out, float(c))


def write_samples_csv(path, samples: FdSamples) -> None:
    l = samples.points.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"theta_{i + 1}" for i in range(l)] + ["j", "value"])
        for th, j, v in samples.records():
            wr.writerow([repr(float(x)) for x in th] + [j, repr(v)])


def read_samples_csv(path, c: float) -> FdSamples:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [r for r in rd if r]
    l = sum(h.startswith("theta_") for h in header)
    data = np.array(rows, dtype=float)
    j = data[:, l].astype(int)
    if len(data) % l or not np.array_equal(j.reshape(-1, l), np.tile(np.arange(1, l + 1), (len(data) // l, 1))):
        raise ValueError(f"{path}: expected l={l} rows per grid point ordered by j")
    pts = data[::l, :l]
    return FdSamples(pts, data[:, l + 1].reshape(-1, l), float(c))


# ---------------------------------------------------------------------------
# Multi-kernel random-feature regression


@dataclass(frozen=True)
class KernelSpec:
    kind: str  # "gaussian" or "linear"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.bandwidth and self.bandwidth > 0):
            raise ValueError("gaussian kernels need a positive bandwidth")


def default_dictionary(low, high) -> list[KernelSpec]:
    """Gaussian kernels at three bandwidths tied to the box size, plus a linear kernel."""
    width = float(np.mean(np.asarray(high, float) - np.asarray(low, float)))
    width = width if width > 0 else 1.0
    return [KernelSpec("gaussian", width * f) for f in (0.1, 0.25, 0.5)] + [KernelSpec("linear")]


def _split_features(feature_dim: int, n_blocks: int) -> list[int]:
    base, rem = divmod(feature_dim, n_blocks)
    return [base + (1 if b < rem else 0) for b in range(n_blocks)]


def _cos_enclosure(lo, hi):
    """Elementwise range of cos over [lo, hi]."""
    two_pi = 2 * np.pi
    c1, c2 = np.cos(lo), np.cos(hi)
    out_lo, out_hi = np.minimum(c1, c2), np.maximum(c1, c2)
    has_max = np.ceil(lo / two_pi) <= np.floor(hi / two_pi)
    has_min = np.ceil((lo - np.pi) / two_pi) <= np.floor((hi - np.pi) / two_pi)
    out_hi = np.where(has_max, 1.0, out_hi)
    out_lo = np.where(has_min, -1.0, out_lo)
    wide = (hi - lo) >= two_pi
    return np.where(wide, -1.0, out_lo), np.where(wide, 1.0, out_hi)


def _interval_matmul(lo, hi, weights):
    """Enclosure of x @ weights for x in [lo, hi] elementwise."""
    wp, wn = np.maximum(weights, 0.0), np.minimum(weights, 0.0)
    return lo @ wp + hi @ wn, hi @ wp + lo @ wn


@dataclass(eq=False)
class Surrogate:
    """g_hat_j(theta) = alpha_j^T k(theta) with k built from random features.

    Features are laid out as [gaussian blocks..., linear block, constant].
    The random draws are regenerated from ``feature_seed``.
    """

    dictionary: list[KernelSpec]
    feature_dim: int
    feature_seed: int
    input_dim: int
    alphas: np.ndarray  # (n_outputs, n_features)
    low: np.ndarray
    high: np.ndarray
    ridge: float = 0.0
    _omega: np.ndarray = field(init=False, repr=False)
    _phase: np.ndarray = field(init=False, repr=False)
    _scale: np.ndarray = field(init=False, repr=False)
    _linear: bool = field(init=False, repr=False)

    def __post_init__(self):
        self.alphas = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        self._omega, self._phase, self._scale, self._linear = _draw_features(
            self.dictionary, self.feature_dim, self.input_dim, self.feature_seed)
        if self.alphas.shape[1] != self.n_features:
            raise ValueError(f"alphas have {self.alphas.shape[1]} columns, features {self.n_features}")

    @property
    def n_features(self) -> int:
        return len(self._phase) + (self.input_dim if self._linear else 0) + 1

    @property
    def n_outputs(self) -> int:
        return self.alphas.shape[0]

    @property
    def _n_rff(self) -> int:
        return len(self._phase)

    def features(self, thetas) -> np.ndarray:
        x = np.atleast_2d(np.asarray(thetas, dtype=float))
        parts = [self._scale * np.cos(x @ self._omega.T + self._phase)]
        if self._linear:
            parts.append(x)
        parts.append(np.ones((len(x), 1)))
        return np.concatenate(parts, axis=1)

    def predict(self, thetas) -> np.ndarray:
        """(P, n_outputs) surrogate values."""
        return self.features(thetas) @ self.alphas.T

    def __call__(self, theta) -> np.ndarray:
        return self.predict(np.asarray(theta, dtype=float)[None])[0]

    def _split_alpha(self):
        d = self._n_rff
        a_rff = self.alphas[:, :d] * self._scale  # c_jk = alpha_jk * block scale
        a_lin = self.alphas[:, d:d + self.input_dim] if self._linear else np.zeros((self.n_outputs, self.input_dim))
        return a_rff, a_lin

    def gradient(self, thetas) -> np.ndarray:
        """(P, n_outputs, input_dim) Jacobian of g_hat."""
        x = np.atleast_2d(np.asarray(thetas, dtype=float))
        a_rff, a_lin = self._split_alpha()
        s = np.sin(x @ self._omega.T + self._phase)  # (P, D)
        return -np.einsum("pd,jd,di->pji", s, a_rff, self._omega) + a_lin[None]

    def lipschitz(self) -> np.ndarray:
        """Global bound on |grad g_hat_j|_2 from alpha and the feature frequencies."""
        a_rff, a_lin = self._split_alpha()
        if self._n_rff:
            row = np.linalg.norm(self._omega, axis=1)
            tri = np.abs(a_rff) @ row
            spec = np.linalg.norm(self._omega, 2) * np.linalg.norm(a_rff, axis=1)
            rff = np.minimum(tri, spec)
        else:
            rff = np.zeros(self.n_outputs)
        return rff + np.linalg.norm(a_lin, axis=1)

    def _gradient_bound(self, arg_c, arg_r, n_boxes) -> np.ndarray:
        """(B, n_outputs, input_dim) bound on |d g_hat_j / d theta_i| over each box."""
        a_rff, a_lin = self._split_alpha()
        # d g_j / d theta_i = -sum_k c_jk w_ki sin(arg_k) + lin_ji
        slo, shi = _cos_enclosure(arg_c - arg_r - np.pi / 2, arg_c + arg_r - np.pi / 2)
        w = -(a_rff[:, :, None] * self._omega[None]).transpose(1, 0, 2).reshape(
            self._n_rff, self.n_outputs * self.input_dim)
        dlo, dhi = _interval_matmul(slo, shi, w)
        dlo = dlo.reshape(n_boxes, self.n_outputs, self.input_dim) + a_lin
        dhi = dhi.reshape(n_boxes, self.n_outputs, self.input_dim) + a_lin
        return np.maximum(np.abs(dlo), np.abs(dhi))

    def lipschitz_on_box(self, low, high, max_cells: int = 20_000, chunk: int = 2048) -> np.ndarray:
        """Bound on max |grad g_hat_j|_2 over the box [low, high].

        The box is split into uniform cells and the gradient is enclosed on
        each; the result never exceeds the global bound of ``lipschitz``.
        """
        low, high = np.asarray(low, float), np.asarray(high, float)
        d = low.size
        per_axis = max(int(np.floor(max_cells ** (1.0 / d))), 1)
        edges = [np.linspace(lo, hi, per_axis + 1) for lo, hi in zip(low, high)]
        idx = np.stack(np.meshgrid(*[np.arange(per_axis)] * d, indexing="ij"), -1).reshape(-1, d)
        cell_lo = np.stack([edges[i][idx[:, i]] for i in range(d)], 1)
        cell_hi = np.stack([edges[i][idx[:, i] + 1] for i in range(d)], 1)
        best = np.zeros(self.n_outputs)
        for start in range(0, len(cell_lo), chunk):
            lo, hi = cell_lo[start:start + chunk], cell_hi[start:start + chunk]
            mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
            arg_c = mid @ self._omega.T + self._phase
            arg_r = rad @ np.abs(self._omega).T
            dmax = self._gradient_bound(arg_c, arg_r, len(lo))
            best = np.maximum(best, np.linalg.norm(dmax, axis=2).max(axis=0))
        # outward rounding: the enclosures are exact up to floating-point error
        best = best * (1 + 1e-12) + 1e-12
        return np.minimum(best, self.lipschitz())

    def enclose(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Outer enclosure of g_hat over boxes [lo, hi], each (B, input_dim).

        Intersection of the natural interval extension, the mean-value form with
        an interval gradient, and the global Lipschitz form.
        """
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        a_rff, a_lin = self._split_alpha()
        const = self.alphas[:, -1]
        f_mid = self.predict(mid)

        arg_c = mid @ self._omega.T + self._phase
        arg_r = rad @ np.abs(self._omega).T
        clo, chi = _cos_enclosure(arg_c - arg_r, arg_c + arg_r)
        nlo, nhi = _interval_matmul(clo, chi, a_rff.T)
        llo, lhi = _interval_matmul(lo, hi, a_lin.T)
        nat_lo, nat_hi = nlo + llo + const, nhi + lhi + const

        dmax = self._gradient_bound(arg_c, arg_r, len(lo))
        mv = np.einsum("bji,bi->bj", dmax, rad)

        lip = self.lipschitz()[None] * np.linalg.norm(rad, axis=1, keepdims=True)
        spread = np.minimum(mv, lip)
        out_lo = np.maximum(nat_lo, f_mid - spread)
        out_hi = np.minimum(nat_hi, f_mid + spread)
        pad = 1e-12 * (1.0 + np.abs(f_mid)) + 1e-12 * np.abs(self.alphas).sum(1)
        return out_lo - pad, out_hi + pad

    def to_dict(self) -> dict:
        return {
            "dictionary": [asdict(k) for k in self.dictionary],
            "feature_dim": self.feature_dim,
            "feature_seed": self.feature_seed,
            "input_dim": self.input_dim,
            "ridge": self.ridge,
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "alphas": self.alphas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Surrogate":
        return cls(
            dictionary=[KernelSpec(**k) for k in d["dictionary"]],
            feature_dim=int(d["feature_dim"]),
            feature_seed=int(d["feature_seed"]),
            input_dim=int(d["input_dim"]),
            alphas=np.array(d["alphas"], dtype=float),
            low=np.array(d["low"], dtype=float),
            high=np.array(d["high"], dtype=float),
            ridge=float(d.get("ridge", 0.0)),
        )


def _draw_features(dictionary, feature_dim, input_dim, seed):
    gauss = [k for k in dictionary if k.kind == "gaussian"]
    linear = any(k.kind == "linear" for k in dictionary)
    rng = np.random.default_rng(seed)
    omegas, phases, scales = [], [], []
    for spec, d in zip(gauss, _split_features(feature_dim, len(gauss)) if gauss else []):
        omegas.append(rng.standard_normal((d, input_dim)) / spec.bandwidth)
        phases.append(rng.uniform(0, 2 * np.pi, d))
        scales.append(np.full(d, np.sqrt(2.0 / d) if d else 0.0))
    if omegas:
        return np.vstack(omegas), np.concatenate(phases), np.concatenate(scales), linear
    return np.zeros((0, input_dim)), np.zeros(0), np.zeros(0), linear


def fit_mkl(
    samples: FdSamples,
    dictionary: list[KernelSpec] | None = None,
    feature_dim: int = 256,
    ridge: float = 1e-6,
    *,
    seed: int = 0,
    low=None,
    high=None,
) -> Surrogate:
    """Ridge regression of every gradient component on shared random features."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    pts, y = samples.points, samples.values
    M, l = pts.shape
    low = pts.min(0) if low is None else np.asarray(low, float)
    high = pts.max(0) if high is None else np.asarray(high, float)
    dictionary = default_dictionary(low, high) if dictionary is None else list(dictionary)
    if M < feature_dim / 10:
        warnings.warn(f"only {M} samples for {feature_dim} random features", RuntimeWarning, stacklevel=2)
    omega, phase, scale, linear = _draw_features(dictionary, feature_dim, l, seed)
    n_feat = len(phase) + (l if linear else 0) + 1
    sur = Surrogate(dictionary, feature_dim, seed, l, np.zeros((y.shape[1], n_feat)), low, high, ridge)
    phi = sur.features(pts)
    try:
        if phi.shape[1] > M:
            gram = phi @ phi.T + ridge * np.eye(M)
            coef = linalg.solve(gram, y, assume_a="pos")
            alphas = (phi.T @ coef).T
        else:
            gram = phi.T @ phi + ridge * np.eye(phi.shape[1])
            alphas = linalg.solve(gram, phi.T @ y, assume_a="pos").T
    except (linalg.LinAlgError, ValueError) as exc:
        raise ValueError(f"normal equations are singular ({exc}); use ridge > 0") from exc
    if ridge == 0 and np.linalg.cond(gram) > 1e13:
        raise ValueError("normal equations are numerically singular; use ridge > 0")
    sur.alphas = alphas
    return sur


def sample_error(sur: Surrogate, samples: FdSamples) -> np.ndarray:
    """zeta_j = max_i |g_hat_j(theta_i) - g_tilde_j(theta_i)| over the training grid."""
    return np.max(np.abs(sur.predict(samples.points) - samples.values), axis=0)


# ---------------------------------------------------------------------------
# Lipschitz constants and the budget


def lipschitz_from_samples(points, values, *, safety_factor: float = 1.5, radius: float | None = None,
                           k: int | None = None) -> float:
    """safety_factor * max |v_i - v_k| / |x_i - x_k| over neighbouring sample pairs.

    Neighbours are all pairs within ``radius`` if given, else each point's
    ``k`` nearest neighbours (default 2 * dim, at least 2).
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    v = np.asarray(values, dtype=float).reshape(len(x))
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 points")
    tree = cKDTree(x)
    if radius is not None:
        pairs = tree.query_pairs(radius, output_type="ndarray")
    else:
        kk = min(n - 1, k or max(2, 2 * d))
        _, idx = tree.query(x, k=kk + 1)
        i = np.repeat(np.arange(n), kk)
        pairs = np.stack([i, idx[:, 1:].ravel()], axis=1)
    dist_zero = tree.query_pairs(0.0, output_type="ndarray")
    if len(dist_zero) and np.any(v[dist_zero[:, 0]] != v[dist_zero[:, 1]]):
        raise ValueError("duplicate points with different values")
    if len(pairs) == 0:
        return 0.0
    dx = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
    keep = dx > 0
    if not np.any(keep):
        return 0.0
    slopes = np.abs(v[pairs[keep, 0]] - v[pairs[keep, 1]]) / dx[keep]
    return safety_factor * float(slopes.max())


def lipschitz_theoretical(consts: SmoothnessConstants) -> float:
    """(H^2 G^2 R^2 + L^2 R^2) / (1 - gamma^4)."""
    if not 0.0 <= consts.gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    H, G, R, L = consts.H, consts.G, consts.R, consts.L
    return (H**2 * G**2 * R**2 + L**2 * R**2) / (1.0 - consts.gamma**4)


@dataclass(frozen=True, eq=False)
class ErrorBudget:
    c: float
    m_bar: float
    L_g: np.ndarray
    L_ghat: np.ndarray
    L_gtilde: np.ndarray
    zeta: np.ndarray
    eta: float
    e: np.ndarray

    def terms(self) -> dict[str, np.ndarray]:
        return {
            "finite_difference": self.c * self.L_g,
            "noise": np.full_like(self.e, 2 * self.m_bar / self.c),
            "sample": self.zeta,
            "interpolation": self.eta * (self.L_ghat + self.L_gtilde),
        }

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "m_bar": self.m_bar,
            "eta": self.eta,
            "L_g": self.L_g.tolist(),
            "L_ghat": self.L_ghat.tolist(),
            "L_gtilde": self.L_gtilde.tolist(),
            "zeta": self.zeta.tolist(),
            "e": self.e.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorBudget":
        arr = lambda k: np.array(d[k], dtype=float)
        return cls(float(d["c"]), float(d["m_bar"]), arr("L_g"), arr("L_ghat"), arr("L_gtilde"),
                   arr("zeta"), float(d["eta"]), arr("e"))


def assemble_budget(c, m_bar, L_g, zeta, eta, L_ghat, L_gtilde) -> ErrorBudget:
    if not c > 0:
        raise ValueError("c must be positive")
    vecs = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (L_g, zeta, L_ghat, L_gtilde)))
    L_g, zeta, L_ghat, L_gtilde = (v.copy() for v in vecs)
    if m_bar < 0 or eta < 0 or any(np.any(v < 0) for v in vecs):
        raise ValueError("budget inputs must be non-negative")
    e = c * L_g + 2.0 * m_bar / c + zeta + eta * (L_ghat + L_gtilde)
    return ErrorBudget(float(c), float(m_bar), L_g, L_ghat, L_gtilde, zeta, float(eta), e)


def build_surrogate(
    ev: ObjectiveEvaluator,
    grid: ParameterGrid,
    c: float,
    *,
    dictionary: list[KernelSpec] | None = None,
    feature_dim: int = 256,
    ridge: float = 1e-6,
    feature_seed: int = 0,
    safety_factor: float = 1.5,
    consts: SmoothnessConstants | None = None,
    samples: FdSamples | None = None,
) -> tuple[Surrogate, ErrorBudget, FdSamples]:
    """Grid sampling, MKL fit and budget assembly in one call.

    L_g is estimated from the finite-difference samples and, when smoothness
    constants are supplied, capped by the closed-form bound.
    """
    if samples is None:
        samples = sample_gradients(ev, grid, c)
    sur = fit_mkl(samples, dictionary, feature_dim, ridge, seed=feature_seed, low=grid.low, high=grid.high)
    zeta = sample_error(sur, samples)
    radius = grid.neighbor_radius()
    L_gt = np.array([
        lipschitz_from_samples(samples.points, samples.values[:, j], safety_factor=safety_factor, radius=radius)
        for j in range(samples.values.shape[1])
    ])
    L_g = L_gt.copy()
    if consts is not None:
        L_g = np.minimum(L_g, lipschitz_theoretical(consts))
    L_ghat = sur.lipschitz_on_box(grid.low, grid.high)
    budget = assemble_budget(c, ev.noise_bound, L_g, zeta, grid.budget_eta, L_ghat, L_gt)
    return sur, budget, samples


def save_surrogate(path, sur: Surrogate, budget: ErrorBudget | None = None, meta: dict | None = None) -> None:
    doc = {"surrogate": sur.to_dict()}
    if budget is not None:
        doc["budget"] = budget.to_dict()
    if meta:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_surrogate(path) -> tuple[Surrogate, ErrorBudget | None, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    budget = ErrorBudget.from_dict(doc["budget"]) if "budget" in doc else None
    return Surrogate.from_dict(doc["surrogate"]), budget, doc.get("meta", {})
