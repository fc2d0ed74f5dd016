"""Online shortlisting of candidate policies from observed state-action pairs.

A candidate is discarded as soon as one observation shows an action error
strictly greater than psi.  Discarding is a pure per-sample predicate, so the
final partition does not depend on the order of the observations.  Membership
of the shortlist is conditional on the observed trajectory and says nothing
about the error at unobserved states.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .enumerator import CandidateSet
from .envsim import Trajectory, read_trajectory_csv
from .policy import Architecture, PolicyParams, evaluate_batch

__all__ = [
    "ObservationLog",
    "FilterState",
    "init_filter",
    "observe",
    "run_filter",
    "report_errors",
    "action_errors",
    "save_filter",
    "write_error_series",
    "load_filter",
    "candidate_policies",
]


def _rows(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and len(x) == n:
        return x
    if n == 0:
        return x.reshape(0, x.shape[-1] if x.ndim > 1 else 0)
    return x.reshape(n, -1)


@dataclass(eq=False)
class ObservationLog:
    ks: np.ndarray  # (N,) strictly increasing time indices
    states: np.ndarray  # (N, q)
    actions: np.ndarray  # (N, m)

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=int).reshape(-1)
        n = len(self.ks)
        self.states = _rows(self.states, n)
        self.actions = _rows(self.actions, n)
        if n > 1 and np.any(np.diff(self.ks) <= 0):
            raise ValueError("time indices must be strictly increasing")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise ValueError("observations must be finite")

    def __len__(self):
        return len(self.ks)

    def head(self, n: int) -> "ObservationLog":
        return ObservationLog(self.ks[:n], self.states[:n], self.actions[:n])

    def permuted(self, order) -> "ObservationLog":
        """Same records in another order, re-indexed 0..N-1."""
        order = np.asarray(order)
        return ObservationLog(np.arange(len(order)), self.states[order], self.actions[order])

    @classmethod
    def from_trajectory(cls, traj: Trajectory, n: int | None = None, ks=None) -> "ObservationLog":
        ks = np.arange(len(traj.states)) if ks is None else ks
        log = cls(ks, traj.states, traj.actions)
        return log if n is None else log.head(n)

    @classmethod
    def from_csv(cls, path, n: int | None = None) -> "ObservationLog":
        ks, traj = read_trajectory_csv(path)
        return cls.from_trajectory(traj, n, ks)


@dataclass(eq=False)
class FilterState:
    psi: float
    shortlisted: set[int]
    discarded: set[int]
    max_error: np.ndarray  # running max observed error per candidate
    n_observed: int = 0
    history: list[int] = field(default_factory=list)  # |shortlist| after each observation

    @property
    def q(self) -> int:
        return len(self.shortlisted)

    def check(self) -> None:
        n = len(self.max_error)
        if self.shortlisted & self.discarded:
            raise AssertionError("shortlisted and discarded sets overlap")
        if self.shortlisted | self.discarded != set(range(n)):
            raise AssertionError("partition does not cover every candidate")
        if any(self.max_error[i] <= self.psi for i in self.discarded):
            raise AssertionError("discarded candidate without a recorded violation")


def _thetas(candidates) -> np.ndarray:
    if isinstance(candidates, CandidateSet):
        return candidates.candidates
    return np.atleast_2d(np.asarray(candidates, dtype=float))


def init_filter(candidates, psi: float) -> FilterState:
    if not psi > 0:
        raise ValueError("psi must be positive")
    n = len(_thetas(candidates))
    if n == 0:
        raise ValueError("empty candidate set")
    return FilterState(float(psi), set(range(n)), set(), np.zeros(n))


def action_errors(arch: Architecture, thetas, states, actions) -> np.ndarray:
    """(P, N) Euclidean action errors of each candidate at each observation."""
    pred = evaluate_batch(arch, np.atleast_2d(thetas), np.atleast_2d(states))
    return np.linalg.norm(pred - np.atleast_2d(actions)[None], axis=-1)


def observe(fs: FilterState, candidates, arch: Architecture, state, action) -> FilterState:
    """Fold one observation into the filter (in place, also returned)."""
    active = np.array(sorted(fs.shortlisted), dtype=int)
    if active.size:
        err = action_errors(arch, _thetas(candidates)[active], state, action)[:, 0]
        fs.max_error[active] = np.maximum(fs.max_error[active], err)
        gone = active[err > fs.psi]
        fs.shortlisted.difference_update(gone.tolist())
        fs.discarded.update(gone.tolist())
    fs.n_observed += 1
    fs.history.append(fs.q)
    return fs


def run_filter(fs: FilterState, candidates, arch: Architecture, log: ObservationLog,
               chunk: int = 64) -> tuple[FilterState, int]:
    """Batch form of repeated observe calls; returns the state and q."""
    thetas = _thetas(candidates)
    for start in range(0, len(log), chunk):
        stop = min(start + chunk, len(log))
        active = np.array(sorted(fs.shortlisted), dtype=int)
        if active.size == 0:
            fs.n_observed += stop - start
            fs.history.extend([0] * (stop - start))
            continue
        err = action_errors(arch, thetas[active], log.states[start:stop], log.actions[start:stop])
        # first violating observation per candidate, if any
        viol = err > fs.psi
        first = np.where(viol.any(axis=1), viol.argmax(axis=1), stop - start)
        # running max only over observations seen while still shortlisted
        upto = np.arange(stop - start)[None] <= first[:, None]
        seen = np.where(upto, err, 0.0).max(axis=1)
        fs.max_error[active] = np.maximum(fs.max_error[active], seen)
        counts = np.bincount(first[first < stop - start], minlength=stop - start)
        remaining = len(active) - np.cumsum(counts)
        gone = active[first < stop - start]
        fs.shortlisted.difference_update(gone.tolist())
        fs.discarded.update(gone.tolist())
        fs.n_observed += stop - start
        fs.history.extend(int(x) for x in remaining)
    return fs, fs.q


def report_errors(fs: FilterState, candidates, arch: Architecture, log: ObservationLog) -> tuple[np.ndarray, np.ndarray]:
    """Error series [time x shortlisted candidate] and the candidate indices."""
    idx = np.array(sorted(fs.shortlisted), dtype=int)
    if idx.size == 0 or len(log) == 0:
        return np.zeros((len(log), idx.size)), idx
    return action_errors(arch, _thetas(candidates)[idx], log.states, log.actions).T, idx


def save_filter(path, fs: FilterState) -> None:
    out = {
        "psi": fs.psi,
        "q": fs.q,
        "n_candidates": len(fs.max_error),
        "n_observed": fs.n_observed,
        "shortlisted": sorted(fs.shortlisted),
        "max_error": {str(i): float(fs.max_error[i]) for i in sorted(fs.shortlisted)},
        "shortlist_size_history": fs.history,
        "note": "shortlist membership is conditional on the observed trajectory",
    }
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")


def load_filter(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_error_series(path, ks, errors: np.ndarray, idx: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k"] + [f"cand_{i}" for i in idx])
        for k, row in zip(ks, errors):
            wr.writerow([int(k)] + [repr(float(x)) for x in row])


def candidate_policies(arch: Architecture, candidates, idx=None) -> list[PolicyParams]:
    th = _thetas(candidates)
    idx = range(len(th)) if idx is None else idx
    return [PolicyParams(arch, th[i]) for i in idx]
