"""Posterior prediction at untested control settings.

For every posterior draw the link-scale path is extended to the new inputs
by Gaussian-process conditioning, mapped back to the parameter scale, run
through the simulator and perturbed by observation noise.  The resulting
intervals are prediction intervals for new field observations, not bands
for the mean response.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp, linkfun
from .model import Problem, Variant, inv_loglog, simulate_batch
from .sampler import TraceSet

__all__ = [
    "PredictionResult",
    "predict",
    "extract_theta1_posterior",
    "PREDICT_STREAM",
]

# sub-stream index so prediction randomness never overlaps a chain's
PREDICT_STREAM = 1_000_003


@dataclass
class PredictionResult:
    X_new: np.ndarray  # raw units, (m, d_x)
    X_new_scaled: np.ndarray
    draws: np.ndarray  # (n_draws, m), original response scale, noise included
    mean: np.ndarray
    median: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    theta1_paths: np.ndarray  # (n_draws, m), raw parameter scale
    eta_draws: np.ndarray = None  # (n_draws, m), simulator output without noise
    metadata: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.X_new.shape[0]


def _rng(traces: TraceSet, seed):
    base = traces.config.seed if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence([int(base), PREDICT_STREAM]))


def _check_scaled(Xs):
    if np.any(~np.isfinite(Xs)) or np.any((Xs < 0.0) | (Xs > 1.0)):
        raise ValueError("prediction inputs must lie inside the scaled unit hypercube")


def _mvn_draw(mean, cov, rng):
    # round-off near observed inputs can leave tiny negative eigenvalues
    ev, U = np.linalg.eigh(0.5 * (cov + cov.T))
    return mean + U @ (np.sqrt(np.clip(ev, 0.0, None)) * rng.standard_normal(len(mean)))


def _scaled_theta1_paths(traces: TraceSet, X_new_scaled, rng) -> np.ndarray:
    """Scaled ``theta1`` at the new inputs, one row per posterior draw."""
    p: Problem = traces.problem
    block = traces.combined("theta1")
    n_draws, m = block.shape[0], X_new_scaled.shape[0]
    if p.variant is Variant.CONSTANT:
        vals = block[:, 0]
        if p.link is linkfun.LinkKind.IDENTITY:
            return np.repeat(vals[:, None], m, axis=1)
        return np.repeat(linkfun.invert(p.link, vals)[:, None], m, axis=1)
    if p.variant is Variant.PARAMETRIC:
        return block[:, :1] + block[:, 1:2] * np.sqrt(X_new_scaled[:, 0])[None, :]
    nu = traces.combined("nu")
    lam = traces.combined("lam_theta")
    out = np.empty((n_draws, m))
    cache = {}
    for k in range(n_draws):
        key = float(nu[k])
        fact = cache.get(key)
        if fact is None:
            fact = p.factorize(key, with_root=False)
            cache = {key: fact}  # consecutive draws often share nu
        params = gp.CorrParams(float(inv_loglog(key)), float(lam[k]), p.spec.mu_theta)
        mean, cov = gp.conditional(block[k], p.X_scaled, X_new_scaled, params,
                                   p.nugget_log_threshold, fact=fact)
        z = _mvn_draw(mean, cov, rng)
        if p.link is linkfun.LinkKind.IDENTITY:
            # the identity link is an approximation; keep draws inside the bounds
            out[k] = np.clip(z, 0.0, 1.0)
        else:
            out[k] = linkfun.invert(p.link, z)
    return out


def extract_theta1_posterior(traces: TraceSet, X_grid, seed=None, scaled: bool = True):
    """Posterior sample paths of ``theta1(.)`` on a grid, in raw parameter units.

    Parameters
    ----------
    traces : TraceSet
    X_grid : array_like
        Grid of control inputs, scaled to ``[0, 1]`` unless ``scaled=False``.
    seed : int, optional
        Seed for the conditioning draws; defaults to the run seed.
    """
    p = traces.problem
    Xs = gp.as_points(X_grid) if scaled else p.data.scale_x(X_grid)
    _check_scaled(Xs)
    paths = _scaled_theta1_paths(traces, Xs, _rng(traces, seed))
    return p.spec.theta1.unscale(paths)


def predict(traces: TraceSet, X_new, seed=None, scaled: bool = True) -> PredictionResult:
    """Posterior predictive draws of new field observations at ``X_new``.

    Parameters
    ----------
    traces : TraceSet
        Posterior draws bound to a problem.
    X_new : array_like
        New control inputs, scaled unless ``scaled=False``.
    seed : int, optional
        Seed of the prediction stream; defaults to the run seed.  The result
        is a pure function of ``(traces, X_new, seed)``.

    Returns
    -------
    PredictionResult
    """
    p = traces.problem
    if traces.size == 0:
        raise ValueError("cannot predict from an empty trace")
    Xs = gp.as_points(X_new) if scaled else p.data.scale_x(X_new)
    _check_scaled(Xs)
    rng = _rng(traces, seed)
    paths = _scaled_theta1_paths(traces, Xs, rng)
    n_draws, m = paths.shape
    theta2 = inv_loglog(traces.combined("xi"))
    lam_y = traces.combined("lam_y")

    X_raw = p.data.unscale_x(Xs)
    theta1_raw = p.spec.theta1.unscale(paths)
    theta2_raw = np.repeat(p.spec.theta2.unscale(theta2), m)
    eta_std = simulate_batch(p.sim, p.data, None, theta1_raw.reshape(-1), theta2_raw,
                             p.spec.theta1_index, X_raw=np.tile(X_raw, (n_draws, 1)))
    eta_std = eta_std.reshape(n_draws, m)
    noise = rng.standard_normal((n_draws, m)) / np.sqrt(lam_y)[:, None]
    draws = p.data.unstandardize_y(eta_std + noise)
    lower, median, upper = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
    return PredictionResult(
        X_new=X_raw, X_new_scaled=Xs, draws=draws, mean=draws.mean(axis=0),
        median=median, lower95=lower, upper95=upper, theta1_paths=theta1_raw,
        eta_draws=p.data.unstandardize_y(eta_std),
        metadata={
            "interval": "95% posterior prediction interval (observation noise included)",
            "quantiles": [0.025, 0.975],
            "n_draws": int(n_draws),
            "seed": int(traces.config.seed if seed is None else seed),
            "scale": "original response units",
        },
    )
