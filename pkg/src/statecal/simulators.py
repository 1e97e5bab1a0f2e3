"""Computer-model adapters.

A simulator evaluates ``eta(x, t)`` for a batch of control inputs ``x`` (raw
units, one row per run) and calibration inputs ``t`` (raw units, one row per
run, columns ordered as the model's parameter list).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Simulator",
    "SimulatorError",
    "SimulatorRequired",
    "QuadraticSimulator",
    "LevelSimulator",
    "FunctionSimulator",
    "ExternalSimulatorStub",
    "BUILTIN_SIMULATORS",
    "builtin_simulator",
]


class SimulatorError(RuntimeError):
    """A simulator run failed; ``request`` echoes the offending input."""

    def __init__(self, message, request=None):
        super().__init__(message if request is None else f"{message} [request: {request}]")
        self.message = message
        self.request = request


class SimulatorRequired(RuntimeError):
    """Raised when a calibration needs an external code that was not attached."""


class Simulator:
    """Base class for deterministic computer models.

    Subclasses set ``n_inputs`` and ``n_params`` and implement
    :meth:`evaluate`.  ``concurrency_safe`` declares whether several chains
    may call the same instance at once.
    """

    n_inputs: int = 1
    n_params: int = 2
    concurrency_safe: bool = True
    name: str = "simulator"

    def evaluate(self, X, T) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X, T) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if X.shape[1] != self.n_inputs or T.shape[1] != self.n_params:
            raise ValueError(
                f"{self.name}: expected {self.n_inputs} inputs and {self.n_params} "
                f"parameters per run, got shapes {X.shape} and {T.shape}"
            )
        if X.shape[0] != T.shape[0]:
            raise ValueError("X and T must have the same number of rows")
        return np.asarray(self.evaluate(X, T), dtype=float).reshape(-1)

    def close(self):
        pass

    def describe(self) -> dict:
        return {"name": self.name, "n_inputs": self.n_inputs, "n_params": self.n_params}


class QuadraticSimulator(Simulator):
    """``eta(x, t1, t2) = t1 + t2 * x**2``."""

    name = "quadratic"

    def evaluate(self, X, T):
        return T[:, 0] + T[:, 1] * X[:, 0] ** 2


class LevelSimulator(Simulator):
    """``eta(x, t) = t1``: the output ignores ``x`` and any further parameters.

    With a constant calibration parameter this is the normal location
    model, which has a closed-form posterior.
    """

    name = "level"

    def __init__(self, n_params: int = 2):
        self.n_params = n_params

    def evaluate(self, X, T):
        return T[:, 0].copy()


class FunctionSimulator(Simulator):
    """Wrap a vectorized Python callable ``fn(X, T) -> y``."""

    def __init__(self, fn, n_inputs: int, n_params: int, name: str = "function",
                 concurrency_safe: bool = True):
        self.fn = fn
        self.n_inputs = n_inputs
        self.n_params = n_params
        self.name = name
        self.concurrency_safe = concurrency_safe

    def evaluate(self, X, T):
        return self.fn(X, T)


class ExternalSimulatorStub(Simulator):
    """Placeholder for a code that must be attached as an external process."""

    name = "external"

    def __init__(self, n_inputs: int, n_params: int, label: str = "external"):
        self.n_inputs = n_inputs
        self.n_params = n_params
        self.label = label

    def evaluate(self, X, T):
        raise SimulatorRequired(
            f"simulator required: {self.label} is an external code; attach it "
            f"with a simulator command"
        )


BUILTIN_SIMULATORS = {
    "quadratic": QuadraticSimulator,
    "level": LevelSimulator,
}


def builtin_simulator(name: str) -> Simulator:
    try:
        return BUILTIN_SIMULATORS[name]()
    except KeyError:
        raise ValueError(
            f"unknown builtin simulator {name!r}; available: {sorted(BUILTIN_SIMULATORS)}"
        ) from None
