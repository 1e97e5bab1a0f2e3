"""Metropolis-within-Gibbs sampling of the calibration posterior.

One sweep updates, in order, the ``theta1`` block (random-walk Metropolis;
for the GP variant the proposal is ``c S eps`` with ``S`` the spectral root
of the current correlation matrix), ``xi`` (Metropolis), ``lambda_y``
(exact Gamma), and for the GP variant ``lambda_theta`` (exact Gamma) and
``nu`` (Metropolis).  Proposal scales are tuned every ``adapt_interval``
sweeps during burn-in and frozen afterwards.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import gammainc, gammaincinv

from . import gp
from .model import Problem, Variant, _log1m_inv_loglog, inv_loglog, loglog

__all__ = [
    "ChainConfig",
    "ChainState",
    "AdaptState",
    "ChainTrace",
    "TraceSet",
    "InitializationError",
    "block_order",
    "chain_rng",
    "propose_theta1_block",
    "mh_accept",
    "metropolis_step",
    "adapt_scales",
    "initial_state",
    "gibbs_sweep",
    "Chain",
    "run_chain",
    "run_chains",
    "rhat",
    "effective_sample_size",
    "mcse",
]

ADAPT_GAIN = 4.0
ADAPT_DECAY = 0.7
INIT_LAMBDA_THETA_RANGE = (0.1, 100.0)


class InitializationError(RuntimeError):
    """No prior draw satisfied the constraints within the attempt budget."""


@dataclass(frozen=True)
class ChainConfig:
    n_burn: int = 5000
    n_post: int = 4000
    thin: int = 2
    n_chains: int = 3
    adapt_interval: int = 100
    target_accept_scalar: tuple = (0.40, 0.50)
    target_accept_block: tuple = (0.20, 0.25)
    seed: int = 1
    max_init_attempts: int = 100_000
    aux_moves: bool = True

    def __post_init__(self):
        for name in ("n_burn", "thin", "n_chains", "adapt_interval", "max_init_attempts"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and value >= 1):
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if not (isinstance(self.n_post, (int, np.integer)) and self.n_post >= 0):
            raise ValueError(f"n_post must be an integer >= 0, got {self.n_post!r}")
        if self.n_post % self.thin:
            raise ValueError(f"thin={self.thin} must divide n_post={self.n_post}")
        for name in ("target_accept_scalar", "target_accept_block"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo < hi < 1.0:
                raise ValueError(f"{name} must satisfy 0 < low < high < 1, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def n_recorded(self) -> int:
        return self.n_post // self.thin

    def with_(self, **changes) -> "ChainConfig":
        return replace(self, **changes)


@dataclass
class ChainState:
    """Current values of every sampled block."""

    theta1: np.ndarray
    xi: float
    lam_y: float
    nu: float = None
    lam_theta: float = None

    def copy(self) -> "ChainState":
        return replace(self, theta1=np.array(self.theta1, dtype=float))


def block_order(variant, aux_moves: bool = False, constrained: bool = False) -> tuple:
    """Update order within a sweep."""
    if Variant(variant) is Variant.GP:
        order = ("theta1", "xi", "lambda_y", "lambda_theta", "nu")
        if aux_moves:
            order += tuple(b for b in AUX_BLOCKS if constrained or b != "theta1_interior")
        return order
    return ("theta1", "xi", "lambda_y")


# extra GP updates run after nu; see the auxiliary-moves section below
AUX_BLOCKS = ("theta1_interior", "nu_path", "lambda_theta_path")

_INITIAL_SCALES = {
    Variant.GP: {"theta1": 0.1, "xi": 0.2, "nu": 0.5, "theta1_interior": 0.3,
                 "nu_path": 0.3, "lambda_theta_path": 0.3},
    Variant.PARAMETRIC: {"theta1": 0.02, "xi": 0.2},
    Variant.CONSTANT: {"theta1": 0.2, "xi": 0.2},
}


@dataclass
class AdaptState:
    """Proposal scales and the acceptance counters of the current window.

    ``prob_sum`` accumulates Metropolis acceptance probabilities; its window
    mean is the (lower-variance) acceptance-rate estimate used for tuning.
    """

    scales: dict
    targets: dict
    accepted: dict = field(default_factory=dict)
    proposed: dict = field(default_factory=dict)
    prob_sum: dict = field(default_factory=dict)
    n_windows: int = 0
    frozen: bool = False
    last_window: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, variant, config: ChainConfig, constrained: bool = False) -> "AdaptState":
        variant = Variant(variant)
        scales = {name: _INITIAL_SCALES[variant][name]
                  for name in block_order(variant, config.aux_moves, constrained)
                  if name in _INITIAL_SCALES[variant]}
        block_is_vector = variant is not Variant.CONSTANT
        targets = {name: (config.target_accept_block
                          if name in ("theta1", "theta1_interior") and block_is_vector
                          else config.target_accept_scalar) for name in scales}
        state = cls(scales=scales, targets=targets)
        state.reset_window()
        return state

    def reset_window(self):
        for name in self.scales:
            self.accepted[name] = 0
            self.proposed[name] = 0
            self.prob_sum[name] = 0.0

    def record(self, name, accepted: bool, prob: float):
        self.proposed[name] += 1
        self.accepted[name] += int(accepted)
        self.prob_sum[name] += prob

    def window_rates(self) -> dict:
        return {n: (self.accepted[n] / self.proposed[n] if self.proposed[n] else float("nan"))
                for n in self.scales}

    def window_probs(self) -> dict:
        return {n: (self.prob_sum[n] / self.proposed[n] if self.proposed[n] else float("nan"))
                for n in self.scales}


def adapt_scales(adapt: AdaptState, gain: float = ADAPT_GAIN,
                 decay: float = ADAPT_DECAY) -> AdaptState:
    """Tune proposal scales from the window just completed; reset counters.

    A block whose window acceptance rate lies inside its target interval
    keeps its scale.  Otherwise the log scale moves by
    ``gain * (rate - midpoint) / j**decay`` where ``j`` counts completed
    windows: up when accepting too often, down when too rarely, with steps
    that shrink as burn-in proceeds.
    """
    if adapt.frozen:
        raise RuntimeError("proposal scales are frozen after burn-in")
    adapt.n_windows += 1
    step = gain / adapt.n_windows ** decay
    probs = adapt.window_probs()
    adapt.last_window = {"rates": adapt.window_rates(), "probs": probs}
    for name, rate in probs.items():
        lo, hi = adapt.targets[name]
        if math.isnan(rate) or lo < rate < hi:
            continue
        adapt.scales[name] *= math.exp(step * (rate - 0.5 * (lo + hi)))
    adapt.reset_window()
    return adapt


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Independent per-chain stream derived from ``(seed, chain_index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_index)]))


def propose_theta1_block(z, S, c: float, rng) -> np.ndarray:
    """Random-walk candidate ``z + c S eps`` with ``eps ~ N(0, I)``."""
    z = np.asarray(z, dtype=float)
    eps = rng.standard_normal(z.shape[0] if S is None else S.shape[1])
    return z + c * (eps if S is None else S @ eps)


def metropolis_step(log_new: float, log_old: float, rng):
    """Metropolis decision; returns ``(accepted, acceptance_probability)``.

    A ``-inf`` candidate is never accepted.  If the current state itself has
    ``-inf`` density, any finite candidate is accepted.
    """
    u = rng.random()
    if not log_new > -np.inf:  # also catches nan
        return False, 0.0
    if not log_old > -np.inf:
        return True, 1.0
    diff = log_new - log_old
    prob = 1.0 if diff >= 0.0 else math.exp(diff)
    return u < prob, prob


def mh_accept(log_new: float, log_old: float, rng) -> bool:
    """Accept with probability ``min(1, exp(log_new - log_old))``."""
    return metropolis_step(log_new, log_old, rng)[0]


def _truncated_gamma(shape, rate, lo, hi, rng):
    plo, phi = gammainc(shape, rate * lo), gammainc(shape, rate * hi)
    u = plo + (phi - plo) * rng.random()
    return float(gammaincinv(shape, u) / rate)


def initial_state(problem: Problem, rng, max_attempts: int = 100_000):
    """Draw a starting state from the priors, rejecting constraint violations.

    The GP precision is drawn from its Gamma prior truncated to
    ``INIT_LAMBDA_THETA_RANGE`` so that vague hyperpriors do not produce
    astronomically dispersed starting paths.  Returns ``(state, attempts)``.
    """
    h = problem.hyper
    mu = problem.spec.mu_theta
    for attempt in range(1, max_attempts + 1):
        theta2 = rng.random()
        lam_y = float(rng.gamma(h.a_y, 1.0 / h.b_y))
        nu = lam_theta = None
        if problem.variant is Variant.GP:
            rho = float(rng.beta(1.0, h.b_rho))
            if not 1e-12 < rho < 1.0 - 1e-12:
                continue
            nu = float(loglog(rho))
            lam_theta = _truncated_gamma(h.a_lambda_theta, h.b_lambda_theta,
                                         *INIT_LAMBDA_THETA_RANGE, rng)
            _, root = gp.regularized_root(problem.X_scaled, rho, problem.nugget_log_threshold)
            block = mu + root @ rng.standard_normal(problem.n) / math.sqrt(lam_theta)
        elif problem.variant is Variant.PARAMETRIC:
            ends = rng.random(2)
            x_max = float(problem._sqrt_x.max())
            block = np.array([ends[0], (ends[1] - ends[0]) / (x_max if x_max > 0 else 1.0)])
        else:
            from . import linkfun
            block = np.array([linkfun.apply(problem.link, rng.uniform(1e-6, 1 - 1e-6))])
        if theta2 <= 0.0 or theta2 >= 1.0:
            continue
        if not problem.constraints_ok(problem.theta1_path(block)):
            continue
        state = ChainState(np.asarray(block, dtype=float), float(loglog(theta2)), lam_y,
                           nu, lam_theta)
        if np.isfinite(problem.log_posterior(state.theta1, state.xi, state.lam_y,
                                             state.nu, state.lam_theta)):
            return state, attempt
    raise InitializationError(
        f"no prior draw satisfied the constraints in {max_attempts} attempts; "
        f"the constraints may be infeasible"
    )


class PinnedFactor:
    """GP prior of a path split into pinned (constrained) and free entries.

    ``z_F | z_P ~ N(mu + K (z_P - mu), C / lam)`` with ``K = A_FP A_PP^{-1}``
    and ``C = A_FF - K A_PF``, ``A`` the regularized correlation matrix.
    The inverse factor and the spectral root are computed on first use.
    """

    def __init__(self, fact: gp.Factorization, pinned, free):
        self.fact = fact
        self.pinned = pinned
        self.free = free
        A = fact.R.regularized
        if pinned.size == 0:
            self.K = np.zeros((free.size, 0))
            self.cond = A
            self.chol_free = fact.chol
            self.whiten_pinned = np.zeros((0, 0))
            self.logdet_pinned = 0.0
            return
        A_fp = A[free][:, pinned]
        L_p = np.linalg.cholesky(A[pinned][:, pinned])
        self.whiten_pinned = np.linalg.inv(L_p)
        self.K = A_fp @ (self.whiten_pinned.T @ self.whiten_pinned)
        C = A[free][:, free] - self.K @ A_fp.T
        self.cond = 0.5 * (C + C.T)
        self.chol_free = np.linalg.cholesky(self.cond)
        self.logdet_pinned = float(-np.sum(np.log(np.diag(L_p))))

    @cached_property
    def whiten_free(self) -> np.ndarray:
        return np.linalg.inv(self.chol_free)

    @cached_property
    def root_free(self) -> np.ndarray:
        """``(n, |F|)`` root of the conditional correlation, zero at pinned rows."""
        ev, U = np.linalg.eigh(self.cond)
        root = np.zeros((self.fact.R.n, self.free.size))
        root[self.free] = U * np.sqrt(np.clip(ev, 0.0, None))
        return root

    def free_mean(self, z, mu) -> np.ndarray:
        return mu + self.K @ (z[self.pinned] - mu)

    def log_prior_pinned(self, z, mu, lam) -> float:
        """Log density of the pinned entries, up to a constant."""
        if self.pinned.size == 0:
            return 0.0
        v = self.whiten_pinned @ (z[self.pinned] - mu)
        return 0.5 * self.pinned.size * math.log(lam) + self.logdet_pinned - 0.5 * lam * float(v @ v)


def _pinned_factor(p: Problem, fact) -> PinnedFactor:
    return PinnedFactor(fact, p.pinned_idx, p.free_idx)


@dataclass
class _Cache:
    path: np.ndarray
    ssr: float
    fact: gp.Factorization = None
    _pinned: PinnedFactor = None

    def pinned(self, problem) -> PinnedFactor:
        if self._pinned is None or self._pinned.fact is not self.fact:
            self._pinned = _pinned_factor(problem, self.fact)
        return self._pinned


def gibbs_sweep(state: ChainState, problem: Problem, adapt: AdaptState, rng,
                cache: _Cache = None):
    """Update every block once from its full conditional.

    Returns ``(state, cache)``; ``cache`` carries the current ``theta1``
    path, residual sum of squares and correlation factorization between
    sweeps and is rebuilt when omitted.  When the adaptation state carries
    scales for the auxiliary GP moves they run after the ``nu`` update.
    """
    p = problem
    gp_variant = p.variant is Variant.GP
    if cache is None:
        path = p.theta1_path(state.theta1)
        cache = _Cache(path, p.ssr(path, inv_loglog(state.xi)),
                       p.factorize(state.nu) if gp_variant else None)
    theta2 = float(inv_loglog(state.xi))
    n = p.n

    def loglik(ssr):
        return 0.5 * n * math.log(state.lam_y) - 0.5 * state.lam_y * ssr

    # theta1 block
    c = adapt.scales["theta1"]
    if gp_variant:
        cand = propose_theta1_block(state.theta1, cache.fact.root, c, rng)
        prior_old = p.log_prior_block(state.theta1, state.lam_theta, cache.fact)
    else:
        cand = propose_theta1_block(state.theta1, None, c, rng)
        prior_old = p.log_prior_block(state.theta1)
    old = loglik(cache.ssr) + prior_old
    path_new = p.theta1_path(cand)
    if p.constraints_ok(path_new):
        ssr_new = p.ssr(path_new, theta2)
        prior_new = p.log_prior_block(cand, state.lam_theta, cache.fact)
        new = loglik(ssr_new) + prior_new
    else:
        new = -np.inf
    ok, prob = metropolis_step(new, old, rng)
    adapt.record("theta1", ok, prob)
    if ok:
        state.theta1 = cand
        cache.path, cache.ssr = path_new, ssr_new

    # xi
    xi_new = state.xi + adapt.scales["xi"] * rng.standard_normal()
    theta2_new = float(inv_loglog(xi_new))
    old = -0.5 * state.lam_y * cache.ssr + state.xi - math.exp(state.xi)
    if 0.0 < theta2_new < 1.0:
        ssr_new = p.ssr(cache.path, theta2_new)
        new = -0.5 * state.lam_y * ssr_new + xi_new - math.exp(xi_new)
    else:
        new = -np.inf
    ok, prob = metropolis_step(new, old, rng)
    adapt.record("xi", ok, prob)
    if ok:
        state.xi = xi_new
        cache.ssr = ssr_new

    # lambda_y
    shape, rate = p.lambda_y_conditional(cache.ssr)
    state.lam_y = float(rng.gamma(shape, 1.0 / rate))

    if gp_variant:
        shape, rate = p.lambda_theta_conditional(state.theta1, cache.fact)
        state.lam_theta = float(rng.gamma(shape, 1.0 / rate))

        nu_new = state.nu + adapt.scales["nu"] * rng.standard_normal()
        old = p.log_cond_nu(state.nu, state.theta1, state.lam_theta, cache.fact)
        fact_new = _try_factorize(p, nu_new)
        if fact_new is not None:
            new = p.log_cond_nu(nu_new, state.theta1, state.lam_theta, fact_new)
        else:
            new = -np.inf
        ok, prob = metropolis_step(new, old, rng)
        adapt.record("nu", ok, prob)
        if ok:
            state.nu = nu_new
            cache.fact = fact_new.with_root()

        for name, move in _AUX_MOVES:
            if name in adapt.scales:
                move(state, p, adapt, rng, cache)
    return state, cache


# ------------------------------------------------------------ auxiliary moves
#
# The GP hyperparameters and the path are strongly coupled a posteriori, and
# narrow path constraints force small full-path steps.  The moves below are
# additional Metropolis updates that leave the same posterior invariant:
#
# * theta1_interior: random walk on the unconstrained path entries with the
#   prior correlation conditioned on the constrained ones;
# * nu_path / lambda_theta_path: move a hyperparameter while holding the
#   constrained entries and the whitened free entries fixed.  The density of
#   the free entries and the Jacobian of the induced path map cancel, so only
#   the likelihood, the pinned-entry density and the hyperprior remain.

def _try_factorize(p, nu):
    rho = float(inv_loglog(nu))
    if not (np.isfinite(nu) and 0.0 < rho < 1.0 and math.exp(nu) < 700.0):
        return None
    return p.factorize(nu, with_root=False)


def _log_prior_nu(nu, b_rho):
    return float(nu - math.exp(nu) + (b_rho - 1.0) * _log1m_inv_loglog(nu))


def _path_update(state, p, adapt, rng, cache, name, z_new, log_ratio_rest, old_extra=0.0):
    """Metropolis step on a candidate path plus a non-likelihood log ratio."""
    theta2 = float(inv_loglog(state.xi))
    path_new = p.theta1_path(z_new) if np.isfinite(log_ratio_rest) else None
    if p.constraints_ok(path_new):
        ssr_new = p.ssr(path_new, theta2)
        diff = -0.5 * state.lam_y * (ssr_new - cache.ssr) + log_ratio_rest
    else:
        diff = -np.inf
    ok, prob = metropolis_step(diff, 0.0, rng)
    adapt.record(name, ok, prob)
    if ok:
        state.theta1 = z_new
        cache.path, cache.ssr = path_new, ssr_new
    return ok


def _interior_move(state, p, adapt, rng, cache):
    pf = cache.pinned(p)
    cand = propose_theta1_block(state.theta1, pf.root_free, adapt.scales["theta1_interior"], rng)
    prior_diff = (p.log_prior_block(cand, state.lam_theta, cache.fact)
                  - p.log_prior_block(state.theta1, state.lam_theta, cache.fact))
    _path_update(state, p, adapt, rng, cache, "theta1_interior", cand, prior_diff)


def _noncentered_nu(state, p, adapt, rng, cache):
    mu = p.spec.mu_theta
    z = state.theta1
    nu_new = state.nu + adapt.scales["nu_path"] * rng.standard_normal()
    fact_new = _try_factorize(p, nu_new)
    if fact_new is None:
        adapt.record("nu_path", False, 0.0)
        return
    pf, pf_new = cache.pinned(p), _pinned_factor(p, fact_new)
    w = pf.whiten_free @ (z[pf.free] - pf.free_mean(z, mu))
    z_new = z.copy()
    z_new[pf.free] = pf_new.free_mean(z, mu) + pf_new.chol_free @ w
    ratio = (pf_new.log_prior_pinned(z, mu, state.lam_theta)
             - pf.log_prior_pinned(z, mu, state.lam_theta)
             + _log_prior_nu(nu_new, p.hyper.b_rho) - _log_prior_nu(state.nu, p.hyper.b_rho))
    if _path_update(state, p, adapt, rng, cache, "nu_path", z_new, ratio):
        state.nu = nu_new
        cache.fact = fact_new.with_root()


def _noncentered_lambda_theta(state, p, adapt, rng, cache):
    h = p.hyper
    mu = p.spec.mu_theta
    z = state.theta1
    step = adapt.scales["lambda_theta_path"] * rng.standard_normal()
    lam_new = state.lam_theta * math.exp(step)
    pf = cache.pinned(p)
    m = pf.free_mean(z, mu)
    z_new = z.copy()
    z_new[pf.free] = m + (z[pf.free] - m) * math.exp(-0.5 * step)
    ratio = (pf.log_prior_pinned(z, mu, lam_new) - pf.log_prior_pinned(z, mu, state.lam_theta)
             + h.a_lambda_theta * step - h.b_lambda_theta * (lam_new - state.lam_theta))
    if not (np.isfinite(lam_new) and lam_new > 0.0):
        ratio = -np.inf
    if _path_update(state, p, adapt, rng, cache, "lambda_theta_path", z_new, ratio):
        state.lam_theta = lam_new


_AUX_MOVES = (
    ("theta1_interior", _interior_move),
    ("nu_path", _noncentered_nu),
    ("lambda_theta_path", _noncentered_lambda_theta),
)


@dataclass
class ChainTrace:
    """Thinned post-burn-in draws of one chain."""

    chain_index: int
    iterations: np.ndarray
    theta1: np.ndarray  # (n_recorded, block_size)
    xi: np.ndarray
    lam_y: np.ndarray
    nu: np.ndarray = None
    lam_theta: np.ndarray = None
    log_post: np.ndarray = None
    scales: dict = field(default_factory=dict)
    final_window: dict = field(default_factory=dict)
    post_accept: dict = field(default_factory=dict)
    init_attempts: int = 0

    @property
    def n(self) -> int:
        return len(self.iterations)

    def state(self, k: int) -> ChainState:
        return ChainState(
            self.theta1[k].copy(), float(self.xi[k]), float(self.lam_y[k]),
            None if self.nu is None else float(self.nu[k]),
            None if self.lam_theta is None else float(self.lam_theta[k]),
        )


class Chain:
    """A single Markov chain over a bound :class:`~statecal.model.Problem`."""

    def __init__(self, problem: Problem, config: ChainConfig, chain_index: int = 0):
        self.problem = problem
        self.config = config
        self.chain_index = chain_index
        self.rng = chain_rng(config.seed, chain_index)
        self.adapt = AdaptState.initial(problem.variant, config,
                                        constrained=len(problem._cidx) > 0)
        self.state, self.init_attempts = initial_state(problem, self.rng,
                                                       config.max_init_attempts)
        self.cache = None

    def sweep(self):
        self.state, self.cache = gibbs_sweep(self.state, self.problem, self.adapt,
                                             self.rng, self.cache)
        return self.state

    def burn_in(self):
        cfg = self.config
        for k in range(cfg.n_burn):
            self.sweep()
            if (k + 1) % cfg.adapt_interval == 0:
                adapt_scales(self.adapt)
        self.adapt.frozen = True
        self.adapt.reset_window()

    def sample(self) -> ChainTrace:
        cfg, p = self.config, self.problem
        m = cfg.n_recorded
        gp_variant = p.variant is Variant.GP
        out = {
            "theta1": np.empty((m, p.block_size)),
            "xi": np.empty(m), "lam_y": np.empty(m), "log_post": np.empty(m),
            "nu": np.empty(m) if gp_variant else None,
            "lam_theta": np.empty(m) if gp_variant else None,
        }
        iterations = np.empty(m, dtype=int)
        j = 0
        for k in range(cfg.n_post):
            s = self.sweep()
            if (k + 1) % cfg.thin == 0:
                iterations[j] = cfg.n_burn + k + 1
                out["theta1"][j] = s.theta1
                out["xi"][j] = s.xi
                out["lam_y"][j] = s.lam_y
                if gp_variant:
                    out["nu"][j] = s.nu
                    out["lam_theta"][j] = s.lam_theta
                out["log_post"][j] = p.log_posterior(
                    s.theta1, s.xi, s.lam_y, s.nu, s.lam_theta,
                    self.cache.fact if gp_variant else None)
                j += 1
        return ChainTrace(
            chain_index=self.chain_index, iterations=iterations, **out,
            scales=dict(self.adapt.scales), final_window=dict(self.adapt.last_window),
            post_accept=self.adapt.window_rates() if cfg.n_post else {},
            init_attempts=self.init_attempts,
        )

    def run(self) -> ChainTrace:
        self.burn_in()
        return self.sample()


def run_chain(problem: Problem, config: ChainConfig, chain_index: int = 0) -> ChainTrace:
    """Burn in with adaptation, then record every ``thin``-th frozen sweep."""
    return Chain(problem, config, chain_index).run()


def _run_chain_job(args):
    return run_chain(*args)


@dataclass
class TraceSet:
    """Draws from several chains plus run metadata."""

    chains: list
    problem: Problem
    config: ChainConfig
    metadata: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def size(self) -> int:
        return sum(c.n for c in self.chains)

    def stacked(self, name) -> np.ndarray:
        """Per-chain arrays of one recorded field, shape ``(n_chains, n, ...)``."""
        return np.stack([getattr(c, name) for c in self.chains])

    def combined(self, name) -> np.ndarray:
        return np.concatenate([getattr(c, name) for c in self.chains])

    def states(self):
        for c in self.chains:
            for k in range(c.n):
                yield c.state(k)

    def quantities(self) -> dict:
        """Named raw-scale summaries, each of shape ``(n_chains, n)``."""
        p = self.problem
        spec = p.spec
        q = {}
        q[spec.theta2.name] = spec.theta2.unscale(inv_loglog(self.stacked("xi")))
        th = self.stacked("theta1")
        name1 = spec.theta1.name
        if p.variant is Variant.CONSTANT:
            from . import linkfun
            vals = th[..., 0]
            if p.link.value == "identity":
                vals = np.clip(vals, 0.0, 1.0)
            q[name1] = spec.theta1.unscale(linkfun.invert(p.link, vals))
        else:
            if p.variant is Variant.PARAMETRIC:
                q["beta0"] = spec.theta1.bounds[0] + th[..., 0] * spec.theta1.width
                q["beta1"] = th[..., 1] * spec.theta1.width
                paths = th[..., :1] + th[..., 1:2] * p._sqrt_x
            else:
                from . import linkfun
                z = th if p.link.value != "identity" else np.clip(th, 0.0, 1.0)
                paths = linkfun.invert(p.link, z)
            raw = spec.theta1.unscale(paths)
            for i in range(p.n):
                q[f"{name1}(x{i + 1})"] = raw[..., i]
        q["lambda_y"] = self.stacked("lam_y")
        if p.variant is Variant.GP:
            q["lambda_theta"] = self.stacked("lam_theta")
            q["rho"] = inv_loglog(self.stacked("nu"))
        return q

    def rhat_table(self) -> dict:
        if self.n_chains < 2 or min(c.n for c in self.chains) < 10:
            return {}
        return {k: float(rhat(v)) for k, v in self.quantities().items()}


def run_chains(problem: Problem, config: ChainConfig, workers: int = None) -> TraceSet:
    """Run ``config.n_chains`` independent chains and merge them by index.

    With ``workers > 1`` and a simulator that declares itself concurrency
    safe, chains run in separate processes; otherwise they run in turn.
    """
    jobs = [(problem, config, i) for i in range(config.n_chains)]
    parallel = (workers or 1) > 1 and getattr(problem.sim, "concurrency_safe", False)
    if parallel:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(_run_chain_job, jobs))
    else:
        chains = [_run_chain_job(j) for j in jobs]
    chains.sort(key=lambda c: c.chain_index)
    traces = TraceSet(chains, problem, config)
    traces.metadata = {
        "sweep_order": list(block_order(problem.variant, config.aux_moves,
                                        len(problem._cidx) > 0)),
        "seed": int(config.seed),
        "adaptation": {"rule": "log-scale Robbins-Monro with dead zone",
                       "gain": ADAPT_GAIN, "decay": ADAPT_DECAY},
        "rhat": traces.rhat_table(),
    }
    return traces


# ----------------------------------------------------- convergence summaries

def rhat(chains) -> float:
    """Split-chain potential scale reduction factor.

    ``chains`` has shape ``(m, n)`` with ``m >= 2`` chains of ``n >= 10``
    draws.  Each chain is split in half before comparing between- and
    within-chain variances.  Identical constant chains give 1.0.
    """
    a = np.asarray(chains, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("rhat needs at least two chains")
    if a.shape[1] < 10:
        raise ValueError("rhat needs at least ten draws per chain")
    half = a.shape[1] // 2
    pieces = np.concatenate([a[:, :half], a[:, a.shape[1] - half:]], axis=0)
    n = pieces.shape[1]
    means = pieces.mean(axis=1)
    B = n * np.var(means, ddof=1)
    W = np.mean(np.var(pieces, axis=1, ddof=1))
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def effective_sample_size(chains) -> float:
    """Multi-chain effective sample size (Geyer initial monotone sequence)."""
    a = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = a.shape
    if n < 4:
        return float(m * n)
    centred = a - a.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += np.var(a.mean(axis=1), ddof=1)
    if var_plus == 0.0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum adjacent pairs, stop at the first negative pair, enforce monotonicity
    pairs = rho[:-1:2] + rho[1::2]
    total = 0.0
    prev = np.inf
    for pk in pairs:
        if pk < 0.0:
            break
        pk = min(pk, prev)
        total += pk
        prev = pk
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


def mcse(chains) -> float:
    """Monte Carlo standard error of the posterior mean."""
    a = np.asarray(chains, dtype=float)
    return float(np.std(a, ddof=1) / math.sqrt(effective_sample_size(a)))
