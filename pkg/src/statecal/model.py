"""Field data, parameter specifications and the calibration posterior.

Responses are standardized with constants taken from the training rows and
every simulator input is scaled to the unit interval.  The first calibration
parameter ``theta1`` is the state-aware one (a function of the control
inputs, or a scalar in the ``constant`` variant); the second, ``theta2``, is
a scalar with a uniform prior, sampled through ``xi = log(-log(theta2))``.

For the GP variant the chain carries ``z = g(theta1)`` at the training
inputs, so the Gaussian prior applies to ``z`` directly and the simulator is
evaluated at ``g^{-1}(z)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import gp, linkfun
from .linkfun import LinkKind
from .simulators import Simulator, SimulatorError, SimulatorRequired

__all__ = [
    "Variant",
    "FieldDataset",
    "standardize",
    "read_field_csv",
    "Constraint",
    "ParameterSpec",
    "scale_param",
    "unscale_param",
    "Hyperpriors",
    "ModelSpec",
    "check_constraints",
    "loglog",
    "inv_loglog",
    "log_prior_theta1",
    "gamma_draw",
    "simulate_batch",
    "Problem",
]


class Variant(str, Enum):
    GP = "gp"
    PARAMETRIC = "parametric_sqrt"
    CONSTANT = "constant"


# ---------------------------------------------------------------- field data

@dataclass(frozen=True, eq=False)
class FieldDataset:
    """Training field data with standardization and input-scaling records."""

    X: np.ndarray  # (N, d_x), raw units
    y_raw: np.ndarray
    y_std: np.ndarray
    y_mean: float
    y_sd: float
    x_bounds: np.ndarray  # (d_x, 2)
    input_names: tuple = ("x",)
    response_name: str = "y"

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def X_scaled(self) -> np.ndarray:
        return self.scale_x(self.X)

    def scale_x(self, X) -> np.ndarray:
        X = gp.as_points(X)
        lo, hi = self.x_bounds[:, 0], self.x_bounds[:, 1]
        return (X - lo) / (hi - lo)

    def unscale_x(self, Xs) -> np.ndarray:
        Xs = gp.as_points(Xs)
        lo, hi = self.x_bounds[:, 0], self.x_bounds[:, 1]
        return lo + Xs * (hi - lo)

    def standardize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def unstandardize_y(self, ys):
        return self.y_mean + self.y_sd * np.asarray(ys, dtype=float)


def standardize(X, y, x_bounds=None, input_names=None, response_name="y") -> FieldDataset:
    """Build a :class:`FieldDataset` from raw training rows.

    The response is centred and divided by its sample standard deviation
    (``n - 1`` denominator).  Inputs are scaled to [0, 1] with ``x_bounds``
    (default: the observed range of each column).
    """
    X = gp.as_points(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if y.shape[0] < 2:
        raise ValueError("standardization needs at least two observations")
    y_mean = float(np.mean(y))
    y_sd = float(np.std(y, ddof=1))
    if not y_sd > 0.0:
        raise ValueError("responses are constant; cannot standardize (sd = 0)")
    if x_bounds is None:
        x_bounds = np.column_stack([X.min(axis=0), X.max(axis=0)])
    x_bounds = np.asarray(x_bounds, dtype=float).reshape(-1, 2)
    if x_bounds.shape[0] != X.shape[1]:
        raise ValueError("x_bounds must have one (min, max) row per input column")
    if np.any(x_bounds[:, 1] <= x_bounds[:, 0]):
        raise ValueError("each input bound needs min < max")
    tol = 1e-12 * (x_bounds[:, 1] - x_bounds[:, 0])
    if np.any(X < x_bounds[:, 0] - tol) or np.any(X > x_bounds[:, 1] + tol):
        raise ValueError("control inputs fall outside x_bounds")
    if input_names is None:
        input_names = tuple(f"x{k + 1}" for k in range(X.shape[1])) if X.shape[1] > 1 else ("x",)
    return FieldDataset(
        X=X.copy(), y_raw=y.copy(), y_std=(y - y_mean) / y_sd, y_mean=y_mean, y_sd=y_sd,
        x_bounds=x_bounds, input_names=tuple(input_names), response_name=response_name,
    )


def read_field_csv(path, response: str, inputs=None):
    """Read a comma-separated field-data file with a header row.

    Returns ``(X, y, input_names)``.  Without ``inputs`` every column other
    than ``response`` is taken as a control input, in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if response not in header:
        raise ValueError(f"{path}: response column {response!r} not in header {header}")
    if inputs is None:
        inputs = [h for h in header if h != response]
    missing = [c for c in inputs if c not in header]
    if missing:
        raise ValueError(f"{path}: input columns {missing} not in header {header}")
    if not inputs:
        raise ValueError(f"{path}: no control-input columns")
    idx = [header.index(c) for c in inputs]
    iy = header.index(response)
    try:
        X = np.array([[float(r[i]) for i in idx] for r in rows], dtype=float)
        y = np.array([float(r[iy]) for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed numeric row ({exc})") from None
    return X.reshape(len(rows), len(idx)), y, tuple(inputs)


# ----------------------------------------------------------- parameter specs

@dataclass(frozen=True)
class Constraint:
    """Open interval ``(lower, upper)`` for ``theta1`` at control input ``x``.

    ``x`` is in raw control units and must coincide with a training input;
    ``lower`` and ``upper`` are in raw parameter units.
    """

    x: tuple
    lower: float
    upper: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    bounds: tuple
    role: str = "constant"
    constraints: tuple = ()

    def __post_init__(self):
        lo, hi = (float(v) for v in self.bounds)
        if not lo < hi:
            raise ValueError(f"parameter {self.name}: need c_min < c_max, got {self.bounds}")
        if self.role not in ("functional", "constant"):
            raise ValueError(f"parameter {self.name}: role must be 'functional' or 'constant'")
        object.__setattr__(self, "bounds", (lo, hi))
        clipped = []
        for c in self.constraints:
            if not isinstance(c, Constraint):
                c = Constraint(**c)
            L, U = max(c.lower, lo), min(c.upper, hi)
            if not L < U:
                raise ValueError(
                    f"parameter {self.name}: constraint at x={c.x} is empty after "
                    f"intersection with bounds {self.bounds}"
                )
            clipped.append(Constraint(c.x, L, U))
        object.__setattr__(self, "constraints", tuple(clipped))

    @property
    def width(self) -> float:
        return self.bounds[1] - self.bounds[0]

    def scale(self, c):
        return (np.asarray(c, dtype=float) - self.bounds[0]) / self.width

    def unscale(self, theta):
        return self.bounds[0] + np.asarray(theta, dtype=float) * self.width


def scale_param(c, spec: ParameterSpec):
    """Map a raw parameter value onto [0, 1]."""
    c_arr = np.asarray(c, dtype=float)
    if np.any((c_arr < spec.bounds[0]) | (c_arr > spec.bounds[1])):
        raise ValueError(f"{spec.name}: value {c} outside bounds {spec.bounds}")
    out = spec.scale(c_arr)
    return float(out) if out.ndim == 0 else out


def unscale_param(theta, spec: ParameterSpec):
    """Inverse of :func:`scale_param`."""
    t_arr = np.asarray(theta, dtype=float)
    if np.any((t_arr < 0.0) | (t_arr > 1.0)):
        raise ValueError(f"{spec.name}: scaled value {theta} outside [0, 1]")
    out = spec.unscale(t_arr)
    return float(out) if out.ndim == 0 else out


def check_constraints(values, constraints) -> bool:
    """True iff every raw value lies strictly inside its constraint interval."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if len(values) != len(constraints):
        raise ValueError("one value per constraint required")
    return all(c.lower < v < c.upper for v, c in zip(values, constraints))


@dataclass(frozen=True)
class Hyperpriors:
    """Gamma(shape, rate) priors on the precisions and Beta(1, b_rho) on rho."""

    a_y: float = 5.0
    b_y: float = 5.0
    a_lambda_theta: float = 0.01
    b_lambda_theta: float = 0.01
    b_rho: float = 0.2

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"hyperprior {name} must be positive, got {value}")

    @classmethod
    def for_link(cls, link, **overrides) -> "Hyperpriors":
        """Defaults: vague precision prior on unbounded link scales, Ga(5, 5) for identity."""
        base = {}
        if LinkKind(link) is LinkKind.IDENTITY:
            base = dict(a_lambda_theta=5.0, b_lambda_theta=5.0)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ModelSpec:
    """What is being calibrated and under which prior.

    ``parameters`` lists the simulator's calibration inputs in call order;
    exactly two are supported.  For ``gp`` and ``parametric_sqrt`` exactly
    one of them has role ``functional``; for ``constant`` all are constant
    and the first plays the part of ``theta1``.
    """

    variant: Variant
    link: LinkKind
    parameters: tuple
    hyperpriors: Hyperpriors = None
    mu_theta: float = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "link", LinkKind(self.link))
        params = tuple(p if isinstance(p, ParameterSpec) else ParameterSpec(**p)
                       for p in self.parameters)
        object.__setattr__(self, "parameters", params)
        if self.hyperpriors is None:
            object.__setattr__(self, "hyperpriors", Hyperpriors.for_link(self.link))
        if self.mu_theta is None:
            object.__setattr__(self, "mu_theta", linkfun.center(self.link))
        if not np.isfinite(self.mu_theta):
            raise ValueError("mu_theta must be finite")
        if len(params) != 2:
            raise ValueError("the calibration model has exactly two parameters")
        n_fun = sum(p.role == "functional" for p in params)
        if self.variant is Variant.CONSTANT:
            if n_fun:
                raise ValueError("constant variant takes no functional parameter")
        elif n_fun != 1:
            raise ValueError(f"{self.variant.value} variant needs exactly one functional parameter")
        if params[self.theta2_index].constraints:
            raise ValueError("constraints are only supported on theta1")

    @property
    def theta1_index(self) -> int:
        for i, p in enumerate(self.parameters):
            if p.role == "functional":
                return i
        return 0

    @property
    def theta2_index(self) -> int:
        return 1 - self.theta1_index

    @property
    def theta1(self) -> ParameterSpec:
        return self.parameters[self.theta1_index]

    @property
    def theta2(self) -> ParameterSpec:
        return self.parameters[self.theta2_index]

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


# ------------------------------------------------------------ small helpers

def loglog(theta):
    """``log(-log(theta))`` for theta in (0, 1)."""
    return np.log(-np.log(theta))


def inv_loglog(v):
    """``exp(-exp(v))``."""
    return np.exp(-np.exp(v))


def _log1m_inv_loglog(v):
    # log(1 - exp(-exp(v)))
    return np.log(-np.expm1(-np.exp(v)))


def log_prior_theta1(z, params: gp.CorrParams, R) -> float:
    """GP log prior of a link-scale path, up to an additive constant.

    ``R`` may be a regularized :class:`~statecal.gp.CorrMatrix` or a
    :class:`~statecal.gp.Factorization` of one.
    """
    z = np.asarray(z, dtype=float)
    fact = gp.factor(R, with_root=False) if isinstance(R, gp.CorrMatrix) else R
    r = z - params.mu
    return 0.5 * len(z) * np.log(params.lam) + fact.logdet - 0.5 * params.lam * fact.quad_form(r)


def gamma_draw(shape: float, rate: float, rng) -> float:
    """One Gamma variate with density proportional to ``x^(shape-1) exp(-rate x)``."""
    return float(rng.gamma(shape, 1.0 / rate))


def simulate_batch(sim: Simulator, data: FieldDataset, X_scaled, theta1_raw, theta2_raw,
                   theta1_index: int = 0, X_raw=None) -> np.ndarray:
    """Evaluate the simulator row by row and standardize the output.

    ``theta1_raw`` and ``theta2_raw`` each hold one raw value per row or a
    single shared value.  ``X_raw`` may be passed to skip unscaling.
    """
    if X_raw is None:
        X_raw = data.unscale_x(X_scaled)
    T = np.empty((X_raw.shape[0], 2))
    T[:, theta1_index] = theta1_raw
    T[:, 1 - theta1_index] = theta2_raw
    try:
        out = sim(X_raw, T)
    except (SimulatorError, SimulatorRequired):
        raise
    except Exception as exc:
        raise SimulatorError(f"simulator {getattr(sim, 'name', sim)!r} failed: {exc}",
                             request={"X": X_raw.tolist(), "T": T.tolist()}) from exc
    if out.shape != (X_raw.shape[0],) or not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(out)) if out.shape == (X_raw.shape[0],) else []
        raise SimulatorError(
            "simulator returned a malformed or non-finite response",
            request={"X": X_raw[bad].tolist(), "T": T[bad].tolist()} if len(bad) else None,
        )
    return data.standardize_y(out)


# --------------------------------------------------------------- posterior

@dataclass(eq=False)
class Problem:
    """A model specification bound to training data and a simulator.

    The ``theta1`` block of the chain state is variant dependent:

    * ``gp``: link-scale values ``z`` at the N training inputs;
    * ``parametric_sqrt``: ``(beta0, beta1)`` with ``theta1(x) = beta0 + beta1 sqrt(x)``;
    * ``constant``: a single link-scale value ``w`` with ``theta1 = g^{-1}(w)``.
    """

    spec: ModelSpec
    data: FieldDataset
    sim: Simulator
    nugget_log_threshold: float = gp.NUGGET_LOG_THRESHOLD
    _cidx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        spec, data = self.spec, self.data
        if spec.variant is Variant.PARAMETRIC and data.d_x != 1:
            raise ValueError("the sqrt parametric form needs a single control input")
        if getattr(self.sim, "n_inputs", data.d_x) != data.d_x:
            raise ValueError(
                f"simulator takes {self.sim.n_inputs} control inputs, data has {data.d_x}"
            )
        if getattr(self.sim, "n_params", 2) != 2:
            raise ValueError("simulator must take exactly two calibration inputs")
        idx = []
        for c in spec.theta1.constraints:
            hits = np.flatnonzero(np.all(np.isclose(data.X, np.asarray(c.x), rtol=1e-10,
                                                    atol=1e-12), axis=1))
            if hits.size == 0:
                raise ValueError(f"constraint location x={c.x} is not a training input")
            idx.append(int(hits[0]))
        self._cidx = np.array(idx, dtype=int)
        self.pinned_idx = np.unique(self._cidx)
        self.free_idx = np.setdiff1d(np.arange(data.n), self.pinned_idx)
        self._sqrt_x = np.sqrt(np.clip(data.X_scaled[:, 0], 0.0, None))
        self.X_scaled = data.X_scaled

    # -- basic quantities
    @property
    def n(self) -> int:
        return self.data.n

    @property
    def variant(self) -> Variant:
        return self.spec.variant

    @property
    def link(self) -> LinkKind:
        return self.spec.link

    @property
    def hyper(self) -> Hyperpriors:
        return self.spec.hyperpriors

    @property
    def block_size(self) -> int:
        return {Variant.GP: self.n, Variant.PARAMETRIC: 2, Variant.CONSTANT: 1}[self.variant]

    def theta1_path(self, block):
        """Scaled ``theta1`` at the training inputs, or ``None`` if out of range."""
        block = np.asarray(block, dtype=float)
        if self.variant is Variant.PARAMETRIC:
            path = block[0] + block[1] * self._sqrt_x
            if np.any(path <= 0.0) or np.any(path >= 1.0):
                return None
            return path
        if not np.all(np.isfinite(block)):
            return None
        if self.link is LinkKind.IDENTITY and (np.any(block <= 0.0) or np.any(block >= 1.0)):
            return None
        vals = linkfun.invert(self.link, block)
        if self.variant is Variant.CONSTANT:
            return np.full(self.n, float(vals[0]))
        return vals

    def constraints_ok(self, path) -> bool:
        if path is None:
            return False
        if not len(self._cidx):
            return True
        raw = self.spec.theta1.unscale(path[self._cidx])
        return check_constraints(raw, self.spec.theta1.constraints)

    def simulate(self, path, theta2, X_scaled=None) -> np.ndarray:
        """Standardized simulator output for scaled ``theta1`` values and ``theta2``."""
        Xs = self.X_scaled if X_scaled is None else X_scaled
        return simulate_batch(
            self.sim, self.data, Xs, self.spec.theta1.unscale(path),
            float(self.spec.theta2.unscale(theta2)), self.spec.theta1_index,
            X_raw=self.data.X if X_scaled is None else None,
        )

    def ssr(self, path, theta2) -> float:
        r = self.data.y_std - self.simulate(path, theta2)
        return float(r @ r)

    def loglik_path(self, path, theta2, lam_y) -> float:
        return 0.5 * self.n * np.log(lam_y) - 0.5 * lam_y * self.ssr(path, theta2)

    def log_likelihood(self, z, theta2, lam_y) -> float:
        """Gaussian log likelihood of the standardized data at a link-scale path."""
        path = self.theta1_path(z)
        if path is None:
            return -np.inf
        return self.loglik_path(path, theta2, lam_y)

    def corr_params(self, nu, lam_theta) -> gp.CorrParams:
        return gp.CorrParams(float(inv_loglog(nu)), float(lam_theta), self.spec.mu_theta)

    def factorize(self, nu, with_root=True) -> gp.Factorization:
        rho = float(inv_loglog(nu))
        if not 0.0 < rho < 1.0:
            raise ValueError(f"nu={nu} gives rho={rho} outside (0, 1)")
        return gp.factorize(self.X_scaled, rho, self.nugget_log_threshold, with_root)

    # -- densities in sampled coordinates
    def log_prior_block(self, block, lam_theta=None, fact=None) -> float:
        """Prior contribution of the theta1 block (constraints excluded)."""
        if self.variant is Variant.GP:
            r = np.asarray(block) - self.spec.mu_theta
            return 0.5 * self.n * np.log(lam_theta) + fact.logdet - 0.5 * lam_theta * fact.quad_form(r)
        if self.variant is Variant.CONSTANT:
            return float(linkfun.log_abs_dinvert(self.link, block[0]))
        return 0.0

    def log_cond_block(self, block, theta2, lam_y, lam_theta=None, fact=None) -> float:
        """Full conditional of the theta1 block (unnormalized)."""
        path = self.theta1_path(block)
        if not self.constraints_ok(path):
            return -np.inf
        return self.loglik_path(path, theta2, lam_y) + self.log_prior_block(block, lam_theta, fact)

    def log_cond_xi(self, xi, path, lam_y) -> float:
        """``-(lam_y / 2) SSR + xi - e^xi`` with ``theta2 = exp(-e^xi)``."""
        theta2 = float(inv_loglog(xi))
        if not (np.isfinite(xi) and 0.0 < theta2 < 1.0):
            return -np.inf
        return -0.5 * lam_y * self.ssr(path, theta2) + xi - np.exp(xi)

    def log_cond_nu(self, nu, z, lam_theta, fact=None) -> float:
        """Conditional of the correlation reparameterization ``nu = log(-log rho)``."""
        if not np.isfinite(nu) or np.exp(nu) > 700.0:
            return -np.inf
        rho = float(inv_loglog(nu))
        if not 0.0 < rho < 1.0:
            return -np.inf
        if fact is None:
            fact = self.factorize(nu, with_root=False)
        r = np.asarray(z) - self.spec.mu_theta
        return (fact.logdet - 0.5 * lam_theta * fact.quad_form(r) + nu - np.exp(nu)
                + (self.hyper.b_rho - 1.0) * float(_log1m_inv_loglog(nu)))

    def lambda_y_conditional(self, ssr: float):
        """Shape and rate of the Gamma full conditional of ``lambda_y``."""
        return self.hyper.a_y + 0.5 * self.n, self.hyper.b_y + 0.5 * ssr

    def lambda_theta_conditional(self, z, fact):
        r = np.asarray(z) - self.spec.mu_theta
        return (self.hyper.a_lambda_theta + 0.5 * self.n,
                self.hyper.b_lambda_theta + 0.5 * fact.quad_form(r))

    def draw_lambda_y(self, path, theta2, rng) -> float:
        return gamma_draw(*self.lambda_y_conditional(self.ssr(path, theta2)), rng)

    def draw_lambda_theta(self, z, fact, rng) -> float:
        return gamma_draw(*self.lambda_theta_conditional(z, fact), rng)

    def log_posterior(self, block, xi, lam_y, nu=None, lam_theta=None, fact=None) -> float:
        """Joint log posterior in sampled coordinates, up to a constant."""
        h = self.hyper
        if not (lam_y > 0 and np.isfinite(xi)):
            return -np.inf
        path = self.theta1_path(block)
        if not self.constraints_ok(path):
            return -np.inf
        theta2 = float(inv_loglog(xi))
        if not 0.0 < theta2 < 1.0:
            return -np.inf
        lp = self.loglik_path(path, theta2, lam_y)
        lp += (h.a_y - 1.0) * np.log(lam_y) - h.b_y * lam_y
        lp += xi - np.exp(xi)
        if self.variant is Variant.GP:
            if not lam_theta > 0:
                return -np.inf
            if fact is None:
                fact = self.factorize(nu, with_root=False)
            lp += self.log_prior_block(block, lam_theta, fact)
            lp += (h.a_lambda_theta - 1.0) * np.log(lam_theta) - h.b_lambda_theta * lam_theta
            lp += (h.b_rho - 1.0) * float(_log1m_inv_loglog(nu)) + nu - np.exp(nu)
        else:
            lp += self.log_prior_block(block)
        return float(lp)
