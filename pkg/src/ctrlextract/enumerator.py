"""Enumeration of b-separated points where every |g_hat_j| <= e_j.

Two solver backends:

``interval_bnp``
    Branch and prune over boxes with outer enclosures of the surrogate.  A box
    is dropped only when some component's enclosure misses [-e_j, e_j] or when
    it lies inside an exclusion ball, so an exhausted search certifies that no
    feasible point remains.  Answers are delta-complete: found points satisfy
    the constraints relaxed by ``delta``.
``multistart``
    Scrambled Sobol starts followed by bounded L-BFGS descent on a squared
    constraint-violation penalty.  Found points are verified pointwise; failure
    after ``max_restarts`` local searches is reported as ``unknown``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .policy import PolicyParams
from .surrogate import ErrorBudget, Surrogate

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "FeasibilityProblem",
    "SolveResult",
    "CandidateSet",
    "solve_once",
    "enumerate_candidates",
    "verify_coverage",
    "validate_candidates",
    "save_candidates",
    "load_candidates",
]

BACKENDS = ("interval_bnp", "multistart")


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "interval_bnp"
    delta: float = 1e-3
    max_candidates: int = 50_000
    max_boxes: int = 5_000_000
    max_restarts: int = 64
    batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.max_candidates < 1 or self.max_boxes < 1 or self.max_restarts < 1 or self.batch < 1:
            raise ValueError("work limits must be positive")


@dataclass(eq=False)
class FeasibilityProblem:
    surrogate: Surrogate
    bounds: np.ndarray  # e_bar, one entry per surrogate output
    low: np.ndarray
    high: np.ndarray
    b_sep: float
    exclusions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.bounds = np.atleast_1d(np.asarray(self.bounds, dtype=float))
        self.low = np.atleast_1d(np.asarray(self.low, dtype=float))
        self.high = np.atleast_1d(np.asarray(self.high, dtype=float))
        d = self.low.size
        exc = np.asarray(self.exclusions, dtype=float)
        self.exclusions = exc.reshape(-1, d) if exc.size else np.zeros((0, d))
        if self.high.shape != (d,) or np.any(self.high < self.low):
            raise ValueError("invalid box")
        if self.surrogate.input_dim != d:
            raise ValueError("surrogate input dimension does not match the box")
        if self.bounds.shape != (self.surrogate.n_outputs,):
            raise ValueError("one bound per surrogate output is required")
        if np.any(self.bounds < 0):
            raise ValueError("bounds must be non-negative")
        if not self.b_sep > 0:
            raise ValueError("b_sep must be positive")
        tol = 1e-9 * (1 + np.abs(self.high - self.low))
        if len(self.exclusions) and (np.any(self.exclusions < self.low - tol) or np.any(self.exclusions > self.high + tol)):
            raise ValueError("exclusion centres must lie inside the box")

    @classmethod
    def from_budget(cls, surrogate, budget: ErrorBudget, low, high, b_sep, exclusions=()):
        return cls(surrogate, budget.e, low, high, b_sep, np.asarray(exclusions, dtype=float))


@dataclass
class SolveResult:
    status: str  # "found", "unsat" or "unknown"
    theta: np.ndarray | None = None
    residual: float = np.nan  # max_j |g_hat_j| / e_j
    min_dist: float = np.inf  # to the closest exclusion centre
    work: int = 0

    @property
    def found(self) -> bool:
        return self.status == "found"


class _Exclusions:
    """Ball centres with nearest-neighbour queries; keeps a KD-tree over the
    bulk and scans recent additions directly."""

    def __init__(self, dim: int, centres=()):
        self.dim = dim
        self._all: list[np.ndarray] = [np.asarray(c, dtype=float) for c in centres]
        self._tree = None
        self._n_tree = 0
        self._rebuild()

    def __len__(self):
        return len(self._all)

    def _rebuild(self):
        if self._all:
            self._tree = cKDTree(np.array(self._all))
            self._n_tree = len(self._all)

    def add(self, c):
        self._all.append(np.asarray(c, dtype=float))
        if len(self._all) - self._n_tree > 128:
            self._rebuild()

    def array(self) -> np.ndarray:
        return np.array(self._all) if self._all else np.zeros((0, self.dim))

    def _recent(self):
        return np.array(self._all[self._n_tree:]) if len(self._all) > self._n_tree else None

    def nearest(self, pts, k: int = 1):
        """Indices of up to k nearest centres per point (from tree and recent)."""
        out = []
        if self._tree is not None and self._n_tree:
            kk = min(k, self._n_tree)
            _, idx = self._tree.query(pts, k=kk)
            out.append(np.asarray(idx).reshape(len(pts), -1))
        rec = self._recent()
        if rec is not None:
            out.append(np.broadcast_to(np.arange(self._n_tree, len(self._all)), (len(pts), len(rec))))
        return np.concatenate(out, axis=1) if out else np.zeros((len(pts), 0), dtype=int)

    def min_dist(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if not self._all:
            return np.full(len(pts), np.inf)
        idx = self.nearest(pts, 1)
        cent = self.array()[idx]
        return np.min(np.linalg.norm(pts[:, None, :] - cent, axis=-1), axis=1)

    def covers(self, lo, hi, radius: float) -> np.ndarray:
        """True where a box lies strictly inside one ball of the given radius."""
        if not self._all:
            return np.zeros(len(lo), dtype=bool)
        mid = 0.5 * (lo + hi)
        idx = self.nearest(mid, 4)
        cent = self.array()[idx]  # (B, k, d)
        far = np.maximum(np.abs(lo[:, None] - cent), np.abs(hi[:, None] - cent))
        return np.any(np.sqrt(np.sum(far**2, axis=-1)) < radius, axis=1)


def _violation(sur: Surrogate, e: np.ndarray, pts) -> tuple[np.ndarray, np.ndarray]:
    vals = sur.predict(pts)
    return np.max(np.abs(vals) - e, axis=1), vals


def _residual(vals, e):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(vals) / e
    r = np.where(np.abs(vals) == 0, 0.0, r)
    return float(np.max(r))


class _IntervalSearch:
    def __init__(self, prob: FeasibilityProblem, cfg: SolverConfig):
        self.sur, self.e, self.b = prob.surrogate, prob.bounds, prob.b_sep
        self.delta, self.batch = cfg.delta, cfg.batch
        self.excl = _Exclusions(prob.low.size, prob.exclusions)
        self.stack_lo = [prob.low.copy()]
        self.stack_hi = [prob.high.copy()]
        self.boxes = 0

    def add_exclusion(self, theta):
        self.excl.add(theta)

    def next(self, max_boxes: int) -> SolveResult:
        e, b, delta = self.e, self.b, self.delta
        while self.stack_lo:
            if self.boxes >= max_boxes:
                return SolveResult("unknown", work=self.boxes)
            k = min(self.batch, len(self.stack_lo))
            lo = np.array(self.stack_lo[-k:])
            hi = np.array(self.stack_hi[-k:])
            del self.stack_lo[-k:], self.stack_hi[-k:]
            enc_lo, enc_hi = self.sur.enclose(lo, hi)
            infeasible = np.any((enc_lo > e) | (enc_hi < -e), axis=1)
            covered = self.excl.covers(lo, hi, b)
            mid = 0.5 * (lo + hi)
            rad = np.linalg.norm(0.5 * (hi - lo), axis=1)
            viol, fmid = _violation(self.sur, e, mid)
            dist = self.excl.min_dist(mid)
            small = np.all(enc_hi - enc_lo <= delta, axis=1) & (rad <= delta)
            ok_strict = (viol <= 0) & (dist >= b)
            ok_relaxed = small & (viol <= delta) & (dist >= b - delta)
            width = hi - lo
            for i in range(k):
                self.boxes += 1
                if infeasible[i] or covered[i]:
                    continue
                if ok_strict[i] or ok_relaxed[i]:
                    # re-queue this box and the untouched rest of the batch
                    self.stack_lo.extend(lo[i:])
                    self.stack_hi.extend(hi[i:])
                    return SolveResult("found", mid[i].copy(), _residual(fmid[i], e), float(dist[i]), self.boxes)
                if small[i]:
                    # delta-small and every point lies within b of a centre
                    continue
                ax = int(np.argmax(width[i]))
                split = mid[i, ax]
                if not lo[i, ax] < split < hi[i, ax]:
                    log.warning("box at floating-point resolution dropped: %s", mid[i])
                    continue
                left_hi = hi[i].copy()
                left_hi[ax] = split
                right_lo = lo[i].copy()
                right_lo[ax] = split
                self.stack_lo.extend([right_lo, lo[i]])
                self.stack_hi.extend([hi[i], left_hi])
        return SolveResult("unsat", work=self.boxes)


class _MultistartSearch:
    def __init__(self, prob: FeasibilityProblem, cfg: SolverConfig):
        self.prob = prob
        self.sur, self.e, self.b = prob.surrogate, prob.bounds, prob.b_sep
        self.delta, self.batch = cfg.delta, cfg.batch
        self.max_restarts = cfg.max_restarts
        self.excl = _Exclusions(prob.low.size, prob.exclusions)
        self.sobol = qmc.Sobol(prob.low.size, scramble=True, seed=cfg.seed)
        self.restarts = 0
        self.screened = 0

    def add_exclusion(self, theta):
        self.excl.add(theta)

    def _penalty(self, x):
        x2 = x[None]
        vals = self.sur.predict(x2)[0]
        grad = self.sur.gradient(x2)[0]
        over = np.maximum(np.abs(vals) - self.e, 0.0)
        f = 0.5 * float(over @ over)
        g = (over * np.sign(vals)) @ grad
        if len(self.excl):
            cent = self.excl.array()
            diff = x - cent
            dist = np.linalg.norm(diff, axis=1)
            short = np.maximum(self.b - dist, 0.0)
            near = short > 0
            if np.any(near):
                f += 0.5 * float(short[near] @ short[near])
                g = g - (short[near] / np.maximum(dist[near], 1e-300)) @ diff[near]
        return f, g

    def _draw(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = self.sobol.random(self.batch)
        return qmc.scale(u, self.prob.low, self.prob.high) if np.all(self.prob.high > self.prob.low) else \
            np.broadcast_to(self.prob.low, (self.batch, self.prob.low.size)).copy()

    def next(self, max_restarts: int | None = None) -> SolveResult:
        limit = self.max_restarts if max_restarts is None else max_restarts
        failures = 0
        bounds = list(zip(self.prob.low, self.prob.high))
        while failures < limit:
            starts = self._draw()
            self.screened += len(starts)
            viol, vals = _violation(self.sur, self.e, starts)
            dist = self.excl.min_dist(starts)
            ok = np.nonzero((viol <= 0) & (dist >= self.b))[0]
            if ok.size:
                i = ok[0]
                return SolveResult("found", starts[i].copy(), _residual(vals[i], self.e), float(dist[i]),
                                   self.restarts)
            score = np.maximum(viol, 0.0) ** 2 + np.maximum(self.b - dist, 0.0) ** 2
            for i in np.argsort(score, kind="stable")[: max(1, min(8, limit - failures))]:
                self.restarts += 1
                res = minimize(self._penalty, starts[i], jac=True, method="L-BFGS-B", bounds=bounds,
                               options={"maxiter": 200, "ftol": 1e-15, "gtol": 1e-12})
                x = np.clip(res.x, self.prob.low, self.prob.high)
                v, fx = _violation(self.sur, self.e, x[None])
                d = float(self.excl.min_dist(x[None])[0])
                if v[0] <= self.delta and d >= self.b - self.delta:
                    return SolveResult("found", x, _residual(fx[0], self.e), d, self.restarts)
                failures += 1
                if failures >= limit:
                    break
        return SolveResult("unknown", work=self.restarts)


def _make_search(prob: FeasibilityProblem, cfg: SolverConfig):
    min_e = float(np.min(prob.bounds)) if prob.bounds.size else 0.0
    if min_e > 0 and cfg.delta > 0.1 * min_e:
        warnings.warn(f"delta={cfg.delta} is not small relative to min e_j={min_e:.3g}", RuntimeWarning,
                      stacklevel=3)
    return _IntervalSearch(prob, cfg) if cfg.backend == "interval_bnp" else _MultistartSearch(prob, cfg)


def solve_once(prob: FeasibilityProblem, cfg: SolverConfig) -> SolveResult:
    """One feasibility query against the problem's current exclusions."""
    search = _make_search(prob, cfg)
    return search.next(cfg.max_boxes) if cfg.backend == "interval_bnp" else search.next()


@dataclass(eq=False)
class CandidateSet:
    candidates: np.ndarray  # (r, l)
    residuals: np.ndarray
    min_dists: np.ndarray
    termination: str  # "exhausted", "unknown" or "budget_exceeded"
    backend: str
    b_sep: float
    delta: float
    stats: dict = field(default_factory=dict)

    @property
    def r_cand(self) -> int:
        return len(self.candidates)

    @property
    def certified(self) -> bool:
        """Coverage holds only for an exhausted interval search."""
        return self.backend == "interval_bnp" and self.termination == "exhausted"

    def __len__(self):
        return self.r_cand

    def summary(self) -> dict:
        return {
            "r_cand": self.r_cand,
            "termination": self.termination,
            "certified_coverage": self.certified,
            "backend": self.backend,
            "b_sep": self.b_sep,
            "delta": self.delta,
            "stats": self.stats,
        }


def enumerate_candidates(
    surrogate: Surrogate,
    budget: ErrorBudget | np.ndarray,
    low,
    high,
    b_sep: float,
    cfg: SolverConfig,
) -> CandidateSet:
    """Repeat the feasibility query, excluding each new point's b_sep-ball,
    until no point remains, the work limit is hit, or max_candidates."""
    e = budget.e if isinstance(budget, ErrorBudget) else np.asarray(budget, dtype=float)
    prob = FeasibilityProblem(surrogate, e, low, high, b_sep)
    search = _make_search(prob, cfg)
    cands, resid, dists = [], [], []
    termination = "budget_exceeded"
    while True:
        res = search.next(cfg.max_boxes) if cfg.backend == "interval_bnp" else search.next()
        if res.status == "unsat":
            termination = "exhausted"
            break
        if res.status == "unknown":
            termination = "budget_exceeded" if cfg.backend == "interval_bnp" else "unknown"
            break
        if len(cands) >= cfg.max_candidates:
            break
        cands.append(res.theta)
        resid.append(res.residual)
        dists.append(res.min_dist)
        search.add_exclusion(res.theta)
        if len(cands) % 500 == 0:
            log.info("%d candidates so far", len(cands))
    if cfg.backend == "interval_bnp":
        stats = {"boxes_explored": search.boxes}
    else:
        stats = {"restarts": search.restarts, "starts_screened": search.screened}
    if termination == "budget_exceeded":
        log.warning("enumeration stopped by a work limit; coverage guarantee does not hold")
    arr = np.array(cands) if cands else np.zeros((0, prob.low.size))
    return CandidateSet(arr, np.array(resid), np.array(dists), termination, cfg.backend, float(b_sep),
                        cfg.delta, stats)


def verify_coverage(candidates: CandidateSet, true_theta) -> tuple[bool, float]:
    """Is the true parameter vector within b_sep of some candidate?"""
    if isinstance(true_theta, PolicyParams):
        true_theta = true_theta.theta
    if candidates.r_cand == 0:
        return False, float("inf")
    d = float(np.min(np.linalg.norm(candidates.candidates - np.asarray(true_theta, float), axis=1)))
    return d <= candidates.b_sep, d


def validate_candidates(candidates: CandidateSet, surrogate: Surrogate, e) -> list[str]:
    """Separation and feasibility violations beyond the solver tolerance."""
    problems = []
    e = np.asarray(e, dtype=float)
    X = candidates.candidates
    tol = candidates.delta
    if len(X):
        viol, _ = _violation(surrogate, e, X)
        for i in np.nonzero(viol > tol * (1 + 1e-9))[0]:
            problems.append(f"candidate {i}: constraint violated by {viol[i]:.3g}")
        if len(X) > 1:
            tree = cKDTree(X)
            for i, j in tree.query_pairs(candidates.b_sep - tol * (1 + 1e-9)):
                problems.append(f"candidates {i} and {j} closer than b_sep")
    return problems


def save_candidates(path, summary_path, cs: CandidateSet) -> None:
    with open(path, "w") as fh:
        for th, r, d in zip(cs.candidates, cs.residuals, cs.min_dists):
            fh.write(json.dumps({"theta": [float(x) for x in th], "residual": float(r),
                                 "min_prior_distance": None if not np.isfinite(d) else float(d)}) + "\n")
    with open(summary_path, "w") as fh:
        json.dump(cs.summary(), fh, indent=2)
        fh.write("\n")


def load_candidates(path, summary_path) -> CandidateSet:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    with open(summary_path) as fh:
        summ = json.load(fh)
    arr = np.array([r["theta"] for r in rows], dtype=float)
    if not rows:
        arr = np.zeros((0, 0))
    md = np.array([np.inf if r["min_prior_distance"] is None else r["min_prior_distance"] for r in rows])
    return CandidateSet(arr, np.array([r["residual"] for r in rows]), md, summ["termination"], summ["backend"],
                        float(summ["b_sep"]), float(summ["delta"]), summ.get("stats", {}))
