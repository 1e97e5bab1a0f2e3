"""Predictive scoring and posterior-predictive model checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Problem, inv_loglog, simulate_batch
from .sampler import TraceSet

__all__ = [
    "rmspe",
    "test_statistics",
    "CheckReport",
    "bayes_pvalues",
    "CHECK_STREAM",
]

CHECK_STREAM = 1_000_033


def rmspe(predicted, observed) -> float:
    """Root mean squared predictive error on the original response scale."""
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    observed = np.asarray(observed, dtype=float).reshape(-1)
    if predicted.shape != observed.shape:
        raise ValueError(f"length mismatch: {predicted.size} predictions, {observed.size} observations")
    if predicted.size == 0:
        raise ValueError("rmspe needs at least one prediction")
    return float(np.sqrt(np.mean((predicted - observed) ** 2)))


def test_statistics(y, x) -> np.ndarray:
    """``(mean, sample variance, sum x*y)`` of a dataset.

    ``y`` may be a matrix with one replicate per row, in which case one row
    of statistics is returned per replicate.  ``x`` is the single control
    input on its original scale.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if y.shape[-1] != x.size:
        raise ValueError("x and y lengths differ")
    if x.size < 2:
        raise ValueError("at least two observations are needed for the variance")
    return np.stack([y.mean(axis=-1), y.var(axis=-1, ddof=1), y @ x], axis=-1)


@dataclass
class CheckReport:
    T_observed: np.ndarray  # (3,)
    T_replicates: np.ndarray  # (n_rep, 3)
    p_values: np.ndarray  # (3,)
    n_rep: int
    rmspe: float = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "T_observed": [float(v) for v in self.T_observed],
            "p_values": [float(v) for v in self.p_values],
            "n_rep": int(self.n_rep),
            "rmspe": None if self.rmspe is None else float(self.rmspe),
            **self.metadata,
        }


def _replicates(traces: TraceSet, idx, rng) -> np.ndarray:
    """Posterior predictive datasets at the training inputs, original scale."""
    p: Problem = traces.problem
    block = traces.combined("theta1")[idx]
    xi = traces.combined("xi")[idx]
    lam_y = traces.combined("lam_y")[idx]
    n = p.n
    paths = np.array([p.theta1_path(b) for b in block])
    theta1_raw = p.spec.theta1.unscale(paths).reshape(-1)
    theta2_raw = np.repeat(p.spec.theta2.unscale(inv_loglog(xi)), n)
    eta = simulate_batch(p.sim, p.data, None, theta1_raw, theta2_raw, p.spec.theta1_index,
                         X_raw=np.tile(p.data.X, (len(idx), 1))).reshape(len(idx), n)
    noise = rng.standard_normal(eta.shape) / np.sqrt(lam_y)[:, None]
    return p.data.unstandardize_y(eta + noise)


def bayes_pvalues(traces: TraceSet, n_rep: int = 2000, seed=None, x_column: int = 0,
                  rmspe_value=None) -> CheckReport:
    """Posterior predictive p-values ``P(T(y*) >= T(y) | y)`` for three statistics.

    Replicate datasets are drawn at the observed inputs, one posterior draw
    each.  Draws are taken in order when ``n_rep`` does not exceed the trace
    size and resampled with replacement otherwise.  Ties count as
    exceedances.
    """
    if traces.size == 0:
        raise ValueError("cannot check an empty trace")
    if n_rep < 1:
        raise ValueError("n_rep must be positive")
    p = traces.problem
    base = traces.config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([int(base), CHECK_STREAM]))
    if n_rep <= traces.size:
        idx = np.sort(rng.choice(traces.size, size=n_rep, replace=False))
    else:
        idx = rng.integers(0, traces.size, size=n_rep)
    x = p.data.X[:, x_column]
    T_obs = test_statistics(p.data.y_raw, x)
    T_rep = test_statistics(_replicates(traces, idx, rng), x)
    pvals = np.mean(T_rep >= T_obs[None, :], axis=0)
    return CheckReport(T_obs, T_rep, pvals, int(n_rep), rmspe_value, metadata={
        "statistics": ["mean", "sample variance (n-1)", "sum of x*y"],
        "tie_rule": "T(y*) >= T(y) counts as exceedance",
        "seed": int(base),
    })
