"""Simulation-study harness and the shipped plastic-deformation example.

The study generates noisy data from ``y = 2 sqrt(x) + 2.5 x^2`` on a
20-point grid, holds out the five middle settings and calibrates the toy
code ``eta = t1 + t2 x^2`` under several prior and link configurations.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import rmspe
from .linkfun import LinkKind
from .config import parse_config
from .model import Constraint, Hyperpriors, ModelSpec, ParameterSpec, Problem, Variant, standardize
from .predict import extract_theta1_posterior, predict
from .sampler import ChainConfig, TraceSet, effective_sample_size, run_chains
from .simulators import QuadraticSimulator

__all__ = [
    "GRID",
    "HOLDOUT_X",
    "NOISE_SD",
    "TRUE_C2",
    "true_c1",
    "true_response",
    "SimData",
    "generate_sim_data",
    "holdout_split",
    "Scenario",
    "SCENARIO_IDS",
    "TABLE1",
    "TABLE2",
    "scenario",
    "study_scenarios",
    "build_problem",
    "ScenarioReport",
    "run_scenario",
    "StudyReport",
    "run_study",
    "VPSC_STRAIN_RATE",
    "vpsc_example_path",
    "vpsc_example_config",
]

GRID = np.round(np.arange(20) * 0.05, 2)
HOLDOUT_X = np.array([0.45, 0.50, 0.55, 0.60, 0.65])
NOISE_SD = 0.05
TRUE_C2 = 2.5
C1_BOUNDS = (-0.5, 2.5)
C2_VAGUE = (1.0, 3.0)
C2_TIGHT = (2.35, 2.65)


def true_c1(x):
    return 2.0 * np.sqrt(np.asarray(x, dtype=float))


def true_response(x):
    x = np.asarray(x, dtype=float)
    return true_c1(x) + TRUE_C2 * x ** 2


# ------------------------------------------------------------------- data

@dataclass(frozen=True, eq=False)
class SimData:
    x: np.ndarray
    y: np.ndarray
    seed: int

    @property
    def truth(self) -> np.ndarray:
        return true_response(self.x)


def generate_sim_data(seed: int) -> SimData:
    """Noisy responses on the 20-point grid, reproducible per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    return SimData(GRID.copy(), true_response(GRID) + NOISE_SD * rng.standard_normal(GRID.size),
                   int(seed))


def holdout_split(data: SimData):
    """Split into (train, test) with the test rows at ``HOLDOUT_X``.

    Returns two ``(x, y)`` tuples; the training part keeps the grid order.
    """
    x = np.asarray(data.x, dtype=float)
    test = np.array([np.flatnonzero(np.isclose(x, h, atol=1e-9)) for h in HOLDOUT_X],
                    dtype=object)
    if any(len(t) != 1 for t in test):
        raise ValueError(f"grid does not contain each holdout setting {HOLDOUT_X.tolist()} exactly once")
    test = np.array([int(t[0]) for t in test])
    train = np.setdiff1d(np.arange(x.size), test)
    return (x[train], data.y[train]), (x[test], data.y[test])


# -------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    id: str
    variant: Variant = Variant.GP
    link: LinkKind = LinkKind.LOGIT
    c2_bounds: tuple = C2_TIGHT
    constraints: tuple = ()
    label: str = ""

    @property
    def key(self) -> str:
        if self.id == "link_comparison":
            return f"link_{self.link.value}"
        return self.id


SCENARIO_IDS = ("constrained_boundaries", "informative_theta2", "parametric", "constant",
                "link_comparison", "vague_priors")

BOUNDARY_CONSTRAINTS = (Constraint(0.0, -0.075, 0.075), Constraint(0.95, 1.85, 2.05))


def scenario(id: str, link=None) -> Scenario:
    """Resolve a scenario id (``link`` is required for ``link_comparison``)."""
    if id == "constrained_boundaries":
        return Scenario(id, c2_bounds=C2_VAGUE, constraints=BOUNDARY_CONSTRAINTS,
                        label="Constrained theta1(x1), theta1(xN)")
    if id == "informative_theta2":
        return Scenario(id, label="Informative pi(theta2)")
    if id == "parametric":
        return Scenario(id, variant=Variant.PARAMETRIC, label="Parametric theta1(.)")
    if id == "constant":
        # log(-log theta1) reparameterization of a uniform theta1
        return Scenario(id, variant=Variant.CONSTANT, link=LinkKind.CLOGLOG,
                        label="Constant theta1")
    if id == "link_comparison":
        if link is None:
            raise ValueError("link_comparison needs a link")
        link = LinkKind(link)
        return Scenario(id, link=link, label=link.value)
    if id == "vague_priors":
        return Scenario(id, c2_bounds=C2_VAGUE, label="Vague priors")
    raise ValueError(f"unknown scenario {id!r}; expected one of {SCENARIO_IDS}")


TABLE1 = ("parametric", "constrained_boundaries", "informative_theta2", "constant")
TABLE2 = ("logit", "probit", "cloglog", "identity")


def study_scenarios() -> list:
    """Every scenario run by :func:`run_study`, in run order.

    The logit column of the link table is the informative-prior scenario
    itself, so it is not run twice.
    """
    out = [scenario(s) for s in TABLE1]
    out += [scenario("link_comparison", k) for k in TABLE2 if k != "logit"]
    out.append(scenario("vague_priors"))
    return out


def build_problem(sc: Scenario, train) -> Problem:
    x, y = train
    data = standardize(x, y, input_names=("x",))
    role = "constant" if sc.variant is Variant.CONSTANT else "functional"
    spec = ModelSpec(
        variant=sc.variant, link=sc.link,
        parameters=(ParameterSpec("c1", C1_BOUNDS, role, sc.constraints),
                    ParameterSpec("c2", sc.c2_bounds)),
        hyperpriors=Hyperpriors.for_link(sc.link),
    )
    return Problem(spec, data, QuadraticSimulator())


# ---------------------------------------------------------------- reports

def _summary(draws) -> dict:
    draws = np.asarray(draws, dtype=float)
    lo, med, hi = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
    return {"mean": draws.mean(axis=0).tolist(), "sd": draws.std(axis=0, ddof=1).tolist(),
            "median": med.tolist(), "lower95": lo.tolist(), "upper95": hi.tolist()}


@dataclass
class ScenarioReport:
    key: str
    scenario: Scenario
    status: str = "ok"
    error: str = None
    rmspe: float = None
    prediction: dict = field(default_factory=dict)
    covered: list = None
    c2: dict = None
    c1_grid: dict = None
    c1_holdout_mean: list = None
    c1_scalar: dict = None
    beta: dict = None
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    acceptance: list = field(default_factory=list)
    runtime: float = None
    traces: TraceSet = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready summary.  Runtime is left out so reruns are byte-identical."""
        sc = self.scenario
        return {
            "scenario": sc.id, "key": self.key, "label": sc.label, "status": self.status,
            "error": self.error, "variant": sc.variant.value, "link": sc.link.value,
            "bounds": {"c1": list(C1_BOUNDS), "c2": list(sc.c2_bounds)},
            "constraints": [{"x": c.x[0], "lower": c.lower, "upper": c.upper}
                            for c in sc.constraints],
            "rmspe": self.rmspe, "rmspe_scale": "original response units",
            "prediction": self.prediction, "holdout_covered": self.covered,
            "c2": self.c2, "c1_grid": self.c1_grid, "c1_holdout_mean": self.c1_holdout_mean,
            "c1_scalar": self.c1_scalar, "beta": self.beta,
            "rhat": self.rhat, "ess": self.ess, "acceptance": self.acceptance,
        }


def _acceptance(traces: TraceSet) -> list:
    return [{"chain": c.chain_index, "scales": c.scales, "final_burn_in_window": c.final_window,
             "post_burn_in": c.post_accept, "init_attempts": c.init_attempts}
            for c in traces.chains]


def run_scenario(sc: Scenario, data: SimData, config: ChainConfig = None,
                 out_dir=None) -> ScenarioReport:
    """Calibrate one scenario, predict at the holdout settings and summarize.

    Files are written under ``out_dir`` when it is given.
    """
    config = config or ChainConfig()
    t0 = time.perf_counter()
    train, test = holdout_split(data)
    problem = build_problem(sc, train)
    traces = run_chains(problem, config)
    report = ScenarioReport(sc.key, sc, traces=traces)

    x_scaled = problem.data.scale_x(test[0])
    pred = predict(traces, x_scaled)
    truth = true_response(test[0])
    report.rmspe = rmspe(pred.mean, test[1])
    report.prediction = {
        "x": test[0].tolist(), "y_holdout": test[1].tolist(), "truth": truth.tolist(),
        "mean": pred.mean.tolist(), "median": pred.median.tolist(),
        "lower95": pred.lower95.tolist(), "upper95": pred.upper95.tolist(),
    }
    report.covered = [bool(lo <= t <= hi) for lo, t, hi in zip(pred.lower95, truth, pred.upper95)]

    q = traces.quantities()
    report.c2 = {k: v for k, v in _summary(q["c2"].reshape(-1)).items()}
    if sc.variant is Variant.CONSTANT:
        report.c1_scalar = _summary(q["c1"].reshape(-1))
    else:
        grid_paths = extract_theta1_posterior(traces, problem.data.scale_x(GRID))
        report.c1_grid = {"x": GRID.tolist(), "truth": true_c1(GRID).tolist(),
                          **_summary(grid_paths)}
        report.c1_holdout_mean = pred.theta1_paths.mean(axis=0).tolist()
    if sc.variant is Variant.PARAMETRIC:
        report.beta = {"beta0": _summary(q["beta0"].reshape(-1)),
                       "beta1": _summary(q["beta1"].reshape(-1))}
    report.rhat = traces.metadata.get("rhat", {})
    if traces.n_chains and min(c.n for c in traces.chains) >= 4:
        report.ess = {k: float(effective_sample_size(v)) for k, v in q.items()}
    report.acceptance = _acceptance(traces)
    report.runtime = time.perf_counter() - t0

    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        io.write_traces(traces, d)
        io.write_prediction(pred, d / "predictions.csv")
        if report.c1_grid is not None:
            io.write_columns(d / "c1_paths.csv", {
                "x": GRID, "truth": true_c1(GRID),
                **{k: np.asarray(report.c1_grid[k]) for k in ("mean", "lower95", "upper95")}})
        io.write_json(d / "report.json", report.to_dict())
    return report


@dataclass
class StudyReport:
    seed: int
    scenarios: dict  # key -> ScenarioReport
    config: ChainConfig

    def rmspe(self, key):
        r = self.scenarios.get(key)
        return None if r is None else r.rmspe

    def table1(self) -> dict:
        return {k: self.rmspe(k) for k in TABLE1}

    def table2(self) -> dict:
        return {k: self.rmspe("informative_theta2" if k == "logit" else f"link_{k}")
                for k in TABLE2}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "chains": {k: getattr(self.config, k) for k in
                       ("n_burn", "n_post", "thin", "n_chains", "adapt_interval", "seed")},
            "table1_rmspe": self.table1(),
            "table2_rmspe": self.table2(),
            "status": {k: r.status for k, r in self.scenarios.items()},
            "errors": {k: r.error for k, r in self.scenarios.items() if r.error},
            "vague_priors_rhat": _pick(self.scenarios.get("vague_priors"),
                                       ("c2", "c1(x10)", "c1(x15)")),
            "rmspe_scale": "original response units",
            "scenarios": {k: r.to_dict() for k, r in self.scenarios.items()},
        }


def _pick(report, names):
    if report is None or not report.rhat:
        return None
    return {n: report.rhat.get(n) for n in names}


def run_study(seed: int = 1, config: ChainConfig = None, out_dir=None, scenarios=None,
              keep_traces: bool = False) -> StudyReport:
    """Run every study scenario on one shared dataset.

    A failing scenario is recorded with its error and the rest still run.
    With ``out_dir`` each scenario gets its own subdirectory, and the top
    level receives ``study_summary.json``, the two RMSPE tables and a
    separate ``timing.json``.
    """
    config = (config or ChainConfig()).with_(seed=int(seed))
    data = generate_sim_data(seed)
    reports, timing = {}, {}
    for sc in scenarios or study_scenarios():
        sub = None if out_dir is None else Path(out_dir) / sc.key
        try:
            r = run_scenario(sc, data, config, sub)
        except Exception as exc:  # recorded, study continues
            r = ScenarioReport(sc.key, sc, status="error", error=f"{type(exc).__name__}: {exc}")
        timing[sc.key] = r.runtime
        if not keep_traces:
            r.traces = None
        reports[sc.key] = r
    study = StudyReport(int(seed), reports, config)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        io.write_json(d / "study_summary.json", study.to_dict())
        io.write_columns(d / "table1_rmspe.csv", {
            "model": list(TABLE1), "rmspe": [study.rmspe(k) for k in TABLE1]})
        t2 = study.table2()
        io.write_columns(d / "table2_rmspe.csv", {"link": list(TABLE2),
                                                   "rmspe": [t2[k] for k in TABLE2]})
        (d / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    return study


# ----------------------------------------------------- plastic deformation

VPSC_STRAIN_RATE = 1e-3


def vpsc_example_path() -> Path:
    """Location of the shipped configuration file for the example."""
    return Path(str(resources.files("statecal").joinpath("data/vpsc.json")))


def vpsc_example_config():
    """Field data, model and simulator declaration for the aluminium example.

    Returns
    -------
    data : FieldDataset
        Six (temperature, maximum stress) rows scaled with the elicited
        temperature range.
    spec : ModelSpec
        GP on the critical resolved shear stress with boundary constraints
        and the identity link; the glide exponent is a constant parameter.
    simulator : ExternalSimulatorStub
        Placeholder that raises ``SimulatorRequired`` when evaluated.
    """
    cfg = parse_config(vpsc_example_path())
    return cfg.data, cfg.spec, cfg.build_simulator()
