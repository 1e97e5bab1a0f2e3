"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict (printed with ``-s`` and echoed in the
terminal summary) and then asserts it.  The simulation study for seeds 1-5
is run once per session; it takes roughly a quarter of an hour.
"""
import math
import sys
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy import stats

from support import CONJ, conjugate_check
from statecal import gp
from statecal.diagnostics import bayes_pvalues
from statecal.experiments import (
    C1_BOUNDS,
    C2_VAGUE,
    HOLDOUT_X,
    build_problem,
    generate_sim_data,
    holdout_split,
    run_study,
    scenario,
    true_c1,
    vpsc_example_config,
)
from statecal.model import ModelSpec, ParameterSpec, Problem, standardize
from statecal.protocol import ExternalSimulator
from statecal.sampler import ChainConfig, run_chains
from statecal.simulators import QuadraticSimulator, SimulatorError, SimulatorRequired

SEEDS = (1, 2, 3, 4, 5)
FUNCTIONAL = ("parametric", "constrained_boundaries", "informative_theta2")
CHILD = str(Path(__file__).parent / "children" / "scripted.py")


@pytest.fixture(scope="module")
def studies():
    return {s: run_study(s, ChainConfig(), keep_traces=True) for s in SEEDS}


def fmt(v):
    return f"{v:.4f}"


# ---------------------------------------------------------------- tables

def test_c01_table1_ordering(studies, verdict):
    rows, ok = [], True
    for s, st in studies.items():
        t = st.table1()
        par, con, inf, const = (t[k] for k in ("parametric", "constrained_boundaries",
                                               "informative_theta2", "constant"))
        order = par < min(con, inf) and max(con, inf) < const
        ratio = const >= 2 * par
        band = all(0.03 <= t[k] <= 0.20 for k in FUNCTIONAL)
        ok &= order and ratio and band
        rows.append(f"s{s}[{fmt(par)},{fmt(con)},{fmt(inf)},{fmt(const)}"
                    f"{'' if order else ' order'}{'' if ratio else ' ratio'}{'' if band else ' band'}]")
    verdict(1, ok, "RMSPE par/con/inf/const " + " ".join(rows))
    assert ok


def test_c02_table2_links(studies, verdict):
    rows, ok, identity_ok = [], True, 0
    for s, st in studies.items():
        t = st.table2()
        v = np.array(list(t.values()))
        band = bool(np.all((v >= 0.05) & (v <= 0.20)))
        spread = v.max() / v.min() < 1.6
        identity_ok += t["identity"] < v.max()
        ok &= band and spread
        rows.append(f"s{s}[" + ",".join(fmt(x) for x in v) + "]")
    ok &= identity_ok >= 4
    verdict(2, ok, f"logit/probit/cloglog/identity {' '.join(rows)}; identity not worst {identity_ok}/5")
    assert ok


def test_c03_function_recovery(studies, verdict):
    rows, ok = [], True
    for s, st in studies.items():
        for key in ("constrained_boundaries", "informative_theta2"):
            r = st.scenarios[key]
            err = np.max(np.abs(np.asarray(r.c1_holdout_mean) - true_c1(HOLDOUT_X)))
            c2 = r.c2["mean"]
            good = err <= 0.15 and 2.35 <= c2 <= 2.65
            ok &= good
            rows.append(f"s{s}/{key[:3]}: max|c1-2sqrt(x)|={err:.3f} c2={c2:.3f}")
    verdict(3, ok, "; ".join(rows))
    assert ok


def test_c04_predictive_coverage(studies, verdict):
    hits = [all(st.scenarios[k].covered) for st in studies.values() for k in FUNCTIONAL]
    frac = np.mean(hits)
    ok = frac >= 0.90
    verdict(4, ok, f"all 5 holdout truths covered in {sum(hits)}/{len(hits)} runs ({frac:.0%})")
    assert ok


# ----------------------------------------------------------- correctness

conjugate_results = {}


@pytest.mark.parametrize("link", ["logit", "probit", "cloglog", "identity"])
def test_c05_conjugate_oracle(link, verdict):
    cfg = ChainConfig(n_burn=2000, n_post=20000, n_chains=3, seed=7)
    got = conjugate_check(link, cfg)
    z = {k: abs(est - CONJ[k]) / se for k, (est, se) in got.items()}
    ok = all(v < 3 for v in z.values())
    # one verdict line covers all four links; a failing link overwrites it
    prior = conjugate_results.setdefault("z", {})
    prior[link] = max(z.values())
    detail = ", ".join(f"{k}: max|z|={v:.2f}" for k, v in prior.items())
    all_ok = conjugate_results.setdefault("ok", True) and ok
    conjugate_results["ok"] = all_ok
    verdict(5, all_ok, f"{detail} (oracle t {CONJ['t_mean']}±{CONJ['t_sd']:.4f}, "
                       f"lambda {CONJ['lam_mean']}±{CONJ['lam_sd']:.4f})")
    assert ok, got


def _gp_state(p, rng):
    nu = rng.normal(-1.0, 0.7)
    lam_theta = rng.gamma(2.0, 1.0)
    z = p.spec.mu_theta + p.factorize(nu).root @ rng.standard_normal(p.n) / math.sqrt(lam_theta)
    return dict(block=z, xi=rng.normal(-0.5, 0.5), lam_y=rng.gamma(2.0, 1.0), nu=nu,
                lam_theta=lam_theta)


def test_c06_full_conditional_consistency(verdict):
    (x, y), _ = holdout_split(generate_sim_data(1))
    spec = ModelSpec("gp", "logit", (ParameterSpec("c1", C1_BOUNDS, "functional"),
                                     ParameterSpec("c2", C2_VAGUE)))
    p = Problem(spec, standardize(x, y), QuadraticSimulator())
    rng = np.random.default_rng(606)

    def joint(s):
        return p.log_posterior(s["block"], s["xi"], s["lam_y"], s["nu"], s["lam_theta"])

    worst = 0.0
    for _ in range(50):
        s, t = _gp_state(p, rng), _gp_state(p, rng)
        theta2 = math.exp(-math.exp(s["xi"]))
        path = p.theta1_path(s["block"])
        fact = p.factorize(s["nu"])
        pairs = []
        pairs.append((p.log_cond_block(s["block"], theta2, s["lam_y"], s["lam_theta"], fact)
                      - p.log_cond_block(t["block"], theta2, s["lam_y"], s["lam_theta"], fact),
                      dict(s, block=t["block"])))
        pairs.append((p.log_cond_xi(s["xi"], path, s["lam_y"]) - p.log_cond_xi(t["xi"], path, s["lam_y"]),
                      dict(s, xi=t["xi"])))
        pairs.append((p.log_cond_nu(s["nu"], s["block"], s["lam_theta"])
                      - p.log_cond_nu(t["nu"], s["block"], s["lam_theta"]), dict(s, nu=t["nu"])))
        a, b = p.lambda_y_conditional(p.ssr(path, theta2))
        g = stats.gamma(a, scale=1 / b)
        pairs.append((g.logpdf(s["lam_y"]) - g.logpdf(t["lam_y"]), dict(s, lam_y=t["lam_y"])))
        a, b = p.lambda_theta_conditional(s["block"], fact)
        g = stats.gamma(a, scale=1 / b)
        pairs.append((g.logpdf(s["lam_theta"]) - g.logpdf(t["lam_theta"]),
                      dict(s, lam_theta=t["lam_theta"])))
        for lhs, s2 in pairs:
            worst = max(worst, abs(lhs - (joint(s) - joint(s2))))
    ok = worst < 1e-8
    verdict(6, ok, f"50 states x 5 blocks, max discrepancy {worst:.2e} (tol 1e-8)")
    assert ok


def test_c07_linear_algebra(verdict):
    rng = np.random.default_rng(707)
    mpmath.mp.dps = 50
    worst = {"psd": 0.0, "kappa": 0.0, "mc": 0.0, "interp": 0.0, "logdet": 0.0}
    for _ in range(30):
        n = int(rng.integers(2, 26))
        rho = float(rng.uniform(0.01, 0.9999))
        X = rng.uniform(size=(n, 1))
        Rr = gp.regularize(gp.corr_matrix(X, rho))
        ev = np.linalg.eigvalsh(Rr.regularized)
        worst["psd"] = max(worst["psd"], -ev[0])
        worst["kappa"] = max(worst["kappa"], ev[-1] / ev[0] / math.exp(20))
        exact = mpmath.eigsy(mpmath.matrix(Rr.regularized.tolist()), eigvals_only=True)
        want = float(-sum(mpmath.log(v) for v in exact) / 2)
        worst["logdet"] = max(worst["logdet"], abs(gp.chol_logdet(Rr) - want))
        S = gp.spectral_root(Rr)
        Z = rng.standard_normal((20000, S.shape[1])) @ S.T
        worst["mc"] = max(worst["mc"], np.max(np.abs(Z.T @ Z / len(Z) - Rr.regularized)))
    # interpolation needs a matrix that is not regularized
    tried = 0
    while tried < 30:
        n = int(rng.integers(2, 26))
        X = np.sort(rng.uniform(size=n))
        X = X[np.concatenate([[True], np.diff(X) > 0.04])]
        rho = float(rng.uniform(0.01, 0.3))
        f = gp.factorize(X, rho)
        if f.R.delta != 0.0 or gp.condition_number(f.R.values) > 1e6:
            continue
        tried += 1
        z = rng.standard_normal(len(X))
        mean, _ = gp.conditional(z, X, X, gp.CorrParams(rho, 1.0, 0.0), fact=f)
        worst["interp"] = max(worst["interp"], np.max(np.abs(mean - z)))
    ok = (worst["psd"] <= 1e-12 and worst["kappa"] <= 1.05 and worst["mc"] < 0.05
          and worst["interp"] < 1e-8 and worst["logdet"] < 1e-8)
    verdict(7, ok, f"min eig >= {-worst['psd']:.1e}, max kappa/e^20 {worst['kappa']:.3f}, "
                   f"MC cov err {worst['mc']:.3f}, interp err {worst['interp']:.1e}, "
                   f"logdet err {worst['logdet']:.1e}")
    assert ok


def test_c08_pvalues_well_specified(studies, verdict):
    ts = studies[1].scenarios["parametric"].traces
    rep = bayes_pvalues(ts, n_rep=2000)
    p = rep.p_values
    ok = bool(np.all((p > 0.05) & (p < 0.95)))
    verdict(8, ok, f"parametric, seed 1: p = {', '.join(f'{v:.3f}' for v in p)}")
    assert ok


# ------------------------------------------------------------ adaptation

def test_c09_adaptation_and_mixing(studies, verdict):
    (x, y), _ = holdout_split(generate_sim_data(1))
    p = build_problem(scenario("constrained_boundaries"), (x, y))
    cfg = ChainConfig(n_post=1000, n_chains=50, seed=909)
    ts = run_chains(p, cfg)
    bands = {"theta1": cfg.target_accept_block, "xi": cfg.target_accept_scalar,
             "nu": cfg.target_accept_scalar}
    final, post = {}, {}
    for name, (lo, hi) in bands.items():
        final[name] = np.mean([lo < c.final_window["rates"][name] < hi for c in ts.chains])
        post[name] = np.mean([lo < c.post_accept[name] < hi for c in ts.chains])
    rates_ok = all(v >= 0.9 for v in final.values())

    rh = {s: st.scenarios["constrained_boundaries"].rhat for s, st in studies.items()}
    worst_rhat = max(max(r.values()) for r in rh.values())
    rhat_ok = worst_rhat < 1.1
    vague = {s: st.to_dict()["vague_priors_rhat"] for s, st in studies.items()}
    vague_ok = all(v is not None and set(v) == {"c2", "c1(x10)", "c1(x15)"} for v in vague.values())
    ok = rates_ok and rhat_ok and vague_ok
    vtxt = "; ".join(f"s{s} " + ",".join(f"{k}={v[k]:.2f}" for k in v) for s, v in vague.items())
    verdict(9, ok,
            "in band, final burn-in window (50 reps): "
            + ", ".join(f"{k} {v:.0%}" for k, v in final.items())
            + " | frozen post-burn-in: " + ", ".join(f"{k} {v:.0%}" for k, v in post.items())
            + f" | constrained max R-hat {worst_rhat:.3f} | vague R-hat {vtxt}")
    assert rhat_ok and vague_ok
    assert rates_ok


# ----------------------------------------------------------- determinism

def test_c10_determinism(tmp_path, verdict):
    from statecal import io
    from statecal.predict import predict

    small = ChainConfig(n_burn=500, n_post=500, n_chains=2, adapt_interval=50)
    scs = [scenario("constrained_boundaries"), scenario("constant")]

    def files(d):
        return {q.relative_to(d): q.read_bytes() for q in sorted(d.rglob("*"))
                if q.is_file() and q.name != "timing.json"}

    run_study(3, small, tmp_path / "a", scenarios=scs)
    run_study(3, small, tmp_path / "b", scenarios=scs)
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    same_study = a == b and len(a) > 0

    train, _ = holdout_split(generate_sim_data(3))
    p = build_problem(scenario("informative_theta2"), train)
    t1, t2 = run_chains(p, small.with_(seed=11)), run_chains(p, small.with_(seed=11))
    io.write_traces(t1, tmp_path / "t1")
    io.write_traces(t2, tmp_path / "t2")
    same_traces = files(tmp_path / "t1") == files(tmp_path / "t2")
    p1 = predict(t1, np.linspace(0, 1, 7), seed=4)
    p2 = predict(io.read_traces(tmp_path / "t2", p), np.linspace(0, 1, 7), seed=4)
    same_pred = p1.draws.tobytes() == p2.draws.tobytes()
    ok = same_study and same_traces and same_pred
    verdict(10, ok, f"study files identical: {same_study} ({len(a)} files), traces: {same_traces}, "
                    f"predictions (after trace round trip): {same_pred}")
    assert ok


# --------------------------------------------------------------- protocol

def test_c11_protocol_and_vpsc(verdict):
    checks = {}

    def sim(mode, *args, timeout=10.0):
        return ExternalSimulator([sys.executable, CHILD, mode, *map(str, args)], n_inputs=1,
                                 timeout=timeout)

    X = np.zeros((3, 1))
    T = np.column_stack([[1.5, -2.0, 0.25], np.zeros(3)])
    s = sim("echo")
    checks["OK"] = np.array_equal(s(X, T), T[:, 0])
    s.close()
    s = sim("err")
    try:
        s(X, T)
        checks["ERR"] = False
    except SimulatorError as exc:
        checks["ERR"] = "negative input" in str(exc) and exc.request.startswith("EVAL")
    s.close()
    t1 = np.random.default_rng(0).standard_normal(1000)
    s = sim("shuffle", 1000)
    checks["out-of-order"] = np.array_equal(s(np.zeros((1000, 1)), np.column_stack([t1, t1])), t1)
    s.close()
    s = sim("hang", timeout=0.5)
    try:
        s(X[:1], T[1:2])
        checks["timeout"] = False
    except SimulatorError as exc:
        checks["timeout"] = "timed out" in str(exc) and exc.request.startswith("EVAL")
    s.close()

    data, spec, stub = vpsc_example_config()
    checks["VPSC data"] = (data.X[:, 0].tolist() == [200.0, 300.0, 350.0, 400.0, 500.0, 550.0]
                           and data.y_raw.tolist() == [226.2, 91.4, 50.0, 30.6, 14.9, 7.0]
                           and [c.lower for c in spec.parameters[1].constraints] == [519.03, 7.78]
                           and [c.upper for c in spec.parameters[1].constraints] == [693.07, 42.15]
                           and spec.parameters[0].bounds == (2.5, 4.5)
                           and spec.parameters[1].bounds == (1.2, 1343.4))
    try:
        stub(data.X, np.ones((6, 2)))
        checks["no simulator"] = False
    except SimulatorRequired as exc:
        checks["no simulator"] = "simulator required" in str(exc)
    ok = all(checks.values())
    verdict(11, ok, ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok
