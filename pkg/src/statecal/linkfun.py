"""Link functions mapping the unit interval onto the real line.

A Gaussian-process prior is placed on ``g(theta)`` where ``theta`` is a
calibration parameter scaled to (0, 1).  All four links are monotone
bijections; ``cloglog`` is decreasing, the others increasing, and nothing
downstream relies on the direction.
"""
from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import expit, logit, ndtr, ndtri

__all__ = [
    "LinkKind",
    "LinkDomainError",
    "apply",
    "invert",
    "center",
    "log_abs_dinvert",
]


class LinkKind(str, Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"
    IDENTITY = "identity"


class LinkDomainError(ValueError):
    """Raised when a value lies outside the domain of a link or its inverse."""


def _kind(link) -> LinkKind:
    try:
        return LinkKind(link)
    except ValueError:
        raise ValueError(
            f"unknown link {link!r}; expected one of "
            f"{[k.value for k in LinkKind]}"
        ) from None


def _out(values, scalar):
    return float(values) if scalar else values


def apply(link, u):
    """Evaluate ``g(u)``.

    Parameters
    ----------
    link : LinkKind or str
    u : float or array_like
        Values in (0, 1); the identity link also accepts the endpoints.

    Returns
    -------
    float or numpy.ndarray
    """
    kind = _kind(link)
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    if kind is LinkKind.IDENTITY:
        if np.any(~((u >= 0.0) & (u <= 1.0))):
            raise LinkDomainError(f"identity link requires 0 <= u <= 1, got {u}")
        return _out(u.copy(), scalar)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise LinkDomainError(f"{kind.value} link requires 0 < u < 1, got {u}")
    if kind is LinkKind.LOGIT:
        w = logit(u)
    elif kind is LinkKind.PROBIT:
        w = ndtri(u)
    else:
        w = np.log(-np.log(u))
    return _out(w, scalar)


def invert(link, w):
    """Evaluate ``g^{-1}(w)``.

    The identity inverse is only defined on [0, 1]; callers that work on an
    unbounded scale must reject such values before calling.
    """
    kind = _kind(link)
    scalar = np.ndim(w) == 0
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)):
        raise LinkDomainError(f"link inverse requires finite input, got {w}")
    if kind is LinkKind.IDENTITY:
        if np.any((w < 0.0) | (w > 1.0)):
            raise LinkDomainError(f"identity inverse requires 0 <= w <= 1, got {w}")
        u = w.copy()
    elif kind is LinkKind.LOGIT:
        u = expit(w)
    elif kind is LinkKind.PROBIT:
        u = ndtr(w)
    else:
        # exp(w) overflows to inf for large w, giving the correct limit 0
        with np.errstate(over="ignore"):
            u = np.exp(-np.exp(w))
    return _out(u, scalar)


def center(link) -> float:
    """Return ``g(0.5)``, the natural constant prior mean on the link scale."""
    kind = _kind(link)
    if kind is LinkKind.IDENTITY:
        return 0.5
    if kind is LinkKind.CLOGLOG:
        return float(np.log(np.log(2.0)))
    return 0.0


def log_abs_dinvert(link, w):
    """``log |d g^{-1}(w) / dw|``, the Jacobian of the inverse link.

    Needed when a uniform prior on the (0, 1) scale is sampled through its
    link-scale image.  For the identity link the value is 0 inside [0, 1]
    and ``-inf`` outside.
    """
    kind = _kind(link)
    scalar = np.ndim(w) == 0
    w = np.asarray(w, dtype=float)
    if kind is LinkKind.IDENTITY:
        out = np.where((w >= 0.0) & (w <= 1.0), 0.0, -np.inf)
    elif kind is LinkKind.LOGIT:
        # log(s(w) (1 - s(w))) written to avoid cancellation for large |w|
        out = -np.logaddexp(0.0, w) - np.logaddexp(0.0, -w)
    elif kind is LinkKind.PROBIT:
        out = -0.5 * w * w - 0.5 * np.log(2.0 * np.pi)
    else:
        out = w - np.exp(w)
    return _out(out, scalar)
