"""Reading and writing traces, predictions and summaries.

Floats are written with ``repr`` so every file re-reads to the identical
binary value.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import Problem, Variant
from .predict import PredictionResult
from .sampler import ChainConfig, ChainTrace, TraceSet

__all__ = [
    "TRACE_META",
    "TracesNotFound",
    "fmt",
    "write_json",
    "write_columns",
    "read_columns",
    "write_traces",
    "read_traces",
    "write_prediction",
]

TRACE_META = "traces_meta.json"


class TracesNotFound(FileNotFoundError):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2) + "\n")


def write_columns(path, columns: dict):
    """Write equal-length columns as CSV with a header row."""
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=object).reshape(-1) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns of unequal length: {dict(zip(names, map(len, cols)))}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def read_columns(path) -> dict:
    """Read a numeric CSV written by :func:`write_columns`; blanks become NaN."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        out[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
    return out


# ------------------------------------------------------------------ traces

def _trace_columns(p: Problem, c: ChainTrace) -> dict:
    cols = {"iteration": c.iterations}
    for j in range(c.theta1.shape[1]):
        cols[f"theta1_{j}"] = c.theta1[:, j]
    cols["xi"] = c.xi
    cols["lambda_y"] = c.lam_y
    if p.variant is Variant.GP:
        cols["nu"] = c.nu
        cols["lambda_theta"] = c.lam_theta
    cols["log_post"] = c.log_post
    return cols


_CONFIG_FIELDS = ("n_burn", "n_post", "thin", "n_chains", "adapt_interval",
                  "target_accept_scalar", "target_accept_block", "seed", "aux_moves")


def write_traces(traces: TraceSet, out_dir):
    """One ``chain_<k>.csv`` per chain plus a ``traces_meta.json`` document."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    p = traces.problem
    for c in traces.chains:
        write_columns(d / f"chain_{c.chain_index}.csv", _trace_columns(p, c))
    meta = {
        "variant": p.variant.value,
        "link": p.link.value,
        "block_size": p.block_size,
        "n_train": p.n,
        "config": {k: getattr(traces.config, k) for k in _CONFIG_FIELDS},
        "chains": [{"index": c.chain_index, "file": f"chain_{c.chain_index}.csv",
                    "scales": c.scales, "final_burn_in_window": c.final_window,
                    "post_burn_in_acceptance": c.post_accept,
                    "init_attempts": c.init_attempts} for c in traces.chains],
        **traces.metadata,
    }
    write_json(d / TRACE_META, meta)


def read_traces(out_dir, problem: Problem) -> TraceSet:
    """Load traces written by :func:`write_traces` and bind them to ``problem``."""
    d = Path(out_dir)
    meta_path = d / TRACE_META
    if not meta_path.is_file():
        raise TracesNotFound(f"traces not found in {d} (run calibrate first)")
    meta = json.loads(meta_path.read_text())
    if meta["variant"] != problem.variant.value or meta["block_size"] != problem.block_size:
        raise ValueError(
            f"traces in {d} were produced by a {meta['variant']} model with block size "
            f"{meta['block_size']}, which does not match the configured model"
        )
    cfg = meta["config"]
    config = ChainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
    chains = []
    for entry in meta["chains"]:
        path = d / entry["file"]
        if not path.is_file():
            raise TracesNotFound(f"traces not found: {path}")
        cols = read_columns(path)
        k = problem.block_size
        theta1 = np.column_stack([cols[f"theta1_{j}"] for j in range(k)]) if k else None
        gp_variant = problem.variant is Variant.GP
        chains.append(ChainTrace(
            chain_index=int(entry["index"]), iterations=cols["iteration"].astype(int),
            theta1=theta1.reshape(-1, k), xi=cols["xi"], lam_y=cols["lambda_y"],
            nu=cols["nu"] if gp_variant else None,
            lam_theta=cols["lambda_theta"] if gp_variant else None,
            log_post=cols["log_post"], scales=entry["scales"],
            final_window=entry["final_burn_in_window"],
            post_accept=entry["post_burn_in_acceptance"], init_attempts=entry["init_attempts"],
        ))
    extra = {k: meta[k] for k in ("sweep_order", "seed", "adaptation", "rhat") if k in meta}
    return TraceSet(chains, problem, config, extra)


def write_prediction(pred: PredictionResult, path, names=None, draws_path=None):
    """Columns ``x..., mean, median, lower95, upper95``; optionally all draws."""
    X = pred.X_new
    names = names or ([f"x{k + 1}" for k in range(X.shape[1])] if X.shape[1] > 1 else ["x"])
    cols = {n: X[:, k] for k, n in enumerate(names)}
    cols.update(mean=pred.mean, median=pred.median, lower95=pred.lower95, upper95=pred.upper95)
    write_columns(path, cols)
    if draws_path is not None:
        write_columns(draws_path, {f"y{j}": pred.draws[:, j] for j in range(pred.m)})
