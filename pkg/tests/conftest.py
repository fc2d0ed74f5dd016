import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ctrlextract.envsim import Environment

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def constant_reward_env(value=1.0, state_dim=1, action_dim=1):
    """Static plant with r == value, for return-sum checks."""
    return Environment(
        name="constant",
        state_dim=state_dim,
        action_dim=action_dim,
        noise_dim=1,
        step_fn=lambda s, a, w: s,
        reward_fn=lambda s, a: np.full(s.shape[:-1], float(value)),
        initial_fn=lambda rng, n: np.zeros((n, state_dim)),
        state_sampler=lambda rng, n: rng.uniform(-1, 1, (n, state_dim)),
        action_low=np.full(action_dim, -np.inf),
        action_high=np.full(action_dim, np.inf),
        reward_bound=abs(value),
        deterministic=True,
    )


class QuadraticSurrogate:
    """g(theta) = a * theta^2 + b componentwise in 1-D, with exact enclosures."""

    def __init__(self, a=1.0, b=-0.25):
        self.a, self.b = a, b
        self.input_dim = 1
        self.n_outputs = 1

    def predict(self, thetas):
        x = np.atleast_2d(thetas)
        return self.a * x**2 + self.b

    def gradient(self, thetas):
        x = np.atleast_2d(thetas)
        return (2 * self.a * x)[:, :, None]

    def enclose(self, lo, hi):
        lo, hi = np.atleast_2d(lo), np.atleast_2d(hi)
        sq_hi = np.maximum(lo**2, hi**2)
        sq_lo = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo**2, hi**2))
        vals = np.stack([self.a * sq_lo, self.a * sq_hi])
        return vals.min(0) + self.b - 1e-12, vals.max(0) + self.b + 1e-12


@pytest.fixture
def quad_surrogate():
    return QuadraticSurrogate()


# ------------------------------------------------------------ acceptance

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
