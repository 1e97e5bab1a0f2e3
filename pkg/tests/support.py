"""Helpers shared by the sampler and acceptance tests."""
import math

import numpy as np

from statecal.model import ModelSpec, ParameterSpec, Problem, standardize
from statecal.sampler import (AdaptState, ChainConfig, adapt_scales, chain_rng, mcse,
                              metropolis_step, run_chains)
from statecal.simulators import LevelSimulator

from oracles import normal_gamma


# frozen output of tests/oracles/normal_gamma.py
CONJ = {"t_mean": 1.046, "t_sd": 0.05596777784460219,
        "lam_mean": 1.0, "lam_sd": 0.3244428422615251}


def conjugate_problem(link):
    x = np.linspace(0, 1, len(normal_gamma.Y))
    data = standardize(x, normal_gamma.Y)
    spec = ModelSpec("constant", link, (ParameterSpec("t", normal_gamma.BOUNDS),
                                        ParameterSpec("u", (0, 1))))
    return Problem(spec, data, LevelSimulator())


def sd_mcse(a):
    dev = (a - a.mean()) ** 2
    sd = math.sqrt(dev.mean())
    return mcse(dev) / (2 * sd)


def conjugate_check(link, config):
    ts = run_chains(conjugate_problem(link), config)
    q = ts.quantities()
    out = {}
    for key, name in (("t", "t"), ("lam", "lambda_y")):
        a = q[name]
        out[f"{key}_mean"] = (a.mean(), mcse(a))
        out[f"{key}_sd"] = (a.std(ddof=1), sd_mcse(a))
    return out


def gaussian_adaptation(d, seed, n_burn=5000, n_post=4000, interval=100):
    """Adapt a random walk on a standard normal in ``d`` dimensions.

    Returns ``(target, final_window_rate, post_burn_in_rate)``.
    """
    cfg = ChainConfig()
    t = cfg.target_accept_block if d > 1 else cfg.target_accept_scalar
    a = AdaptState(scales={"b": 2.38 / math.sqrt(d)}, targets={"b": t})
    a.reset_window()
    rng = chain_rng(seed, 0)
    x, cur = np.zeros(d), 0.0
    for k in range(n_burn + n_post):
        y = x + a.scales["b"] * rng.standard_normal(d)
        new = -0.5 * y @ y
        ok, pr = metropolis_step(new, cur, rng)
        a.record("b", ok, pr)
        if ok:
            x, cur = y, new
        if k < n_burn and (k + 1) % interval == 0:
            adapt_scales(a)
        if k + 1 == n_burn:
            a.frozen = True
            final = a.last_window["rates"]["b"]
            a.reset_window()
    return t, final, a.window_rates()["b"]
