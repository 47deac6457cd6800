"""Config-driven experiment runners shared by the CLI and library users.

Each runner returns a list of row dicts; :func:`format_csv` and
:func:`format_json` turn them into text.  The CLI adds nothing but I/O, so a
library call with the same config yields byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings

import numpy as np
from scipy.special import logsumexp

from .asymptotics import sweep
from .config import ConfigError, ExperimentConfig
from .montecarlo import DegenerateESSWarning, is_tail, plain_mc_tail
from .network import WeightKernel, perron_vector

__all__ = [
    "ESTIMATE_FIELDS",
    "topology_info",
    "run_asymptotics",
    "run_estimate",
    "run_compare",
    "format_csv",
    "format_json",
    "format_number",
    "all_failed",
]

ESTIMATE_FIELDS = ("p_mc", "se_mc", "p_is", "se_is", "ess", "warning")


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def _json_value(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return [_json_value(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    return x


def format_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(row.get(name, "")) for name in header])
    return buf.getvalue()


def format_json(obj) -> str:
    """Non-finite numbers become ``null``; the row's ``error`` field says why."""
    return json.dumps(_json_value(obj), indent=2) + "\n"


def all_failed(rows: list[dict]) -> bool:
    cells = [r for r in rows if r.get("agent") != "mean"]
    return bool(cells) and all(r.get("error") for r in cells)


def topology_info(cfg: ExperimentConfig, rule: str | None = None) -> dict:
    A = cfg.combination_matrix(rule)
    return {
        "S": cfg.topology.S,
        "degrees": cfg.topology.degrees.tolist(),
        "combination": A.rule,
        "lambda2": A.lambda2,
        "perron": perron_vector(A).tolist(),
        "doubly_stochastic": A.is_doubly_stochastic,
    }


def _sweep(cfg: ExperimentConfig, rule: str | None = None):
    return sweep(
        cfg.tail,
        cfg.combination_matrix(rule),
        cfg.model,
        cfg.mu_grid,
        cfg.agents,
        trunc_tol=cfg.trunc_tol,
        variant=cfg.variant,
        workers=cfg.workers,
    )


def run_asymptotics(cfg: ExperimentConfig) -> list[dict]:
    return [rep.row() for rep in _sweep(cfg)]


def run_estimate(cfg: ExperimentConfig) -> list[dict]:
    """Sweep rows with plain-MC and IS columns appended.

    Every cell gets two child streams (MC, IS) spawned from the config seed in
    row order, so a cell's numbers do not depend on which other cells run.
    """
    if cfg.seed is None:
        raise ConfigError("seed: required for Monte Carlo estimation")
    reports = _sweep(cfg)
    A = cfg.combination_matrix()
    cell_seeds = np.random.SeedSequence(cfg.seed).spawn(len(reports))
    kernels: dict[float, WeightKernel] = {}
    rows = []
    for rep, ss in zip(reports, cell_seeds):
        row = rep.row()
        err = row.pop("error")
        extra = dict.fromkeys(ESTIMATE_FIELDS[:-1], math.nan)
        notes = []
        mc_ss, is_ss = ss.spawn(2)
        try:
            if rep.mu not in kernels:
                kernels[rep.mu] = WeightKernel(A, rep.mu, cfg.trunc_tol)
            kernel = kernels[rep.mu]
            if "mc" in cfg.estimators:
                mc = plain_mc_tail(cfg.tail, rep.agent, kernel, cfg.model, cfg.samples, mc_ss, cfg.workers)
                extra["p_mc"], extra["se_mc"] = mc.p_hat, mc.std_err
            if "is" in cfg.estimators:
                if not rep.ok:
                    raise ArithmeticError("no twist available: " + rep.error)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", DegenerateESSWarning)
                    est = is_tail(cfg.tail, rep.agent, kernel, cfg.model, cfg.samples, is_ss,
                                  theta=rep.theta, workers=cfg.workers)
                extra["p_is"], extra["se_is"], extra["ess"] = est.p_hat, est.std_err, est.ess
                if any(issubclass(w.category, DegenerateESSWarning) for w in caught):
                    notes.append(f"degenerate ESS ({est.ess:.3g} of {cfg.samples})")
        except (ValueError, ArithmeticError) as exc:
            msg = f"{type(exc).__name__}: {exc}"
            err = f"{err}; {msg}" if err else msg
        row.update(extra)
        row["warning"] = "; ".join(notes)
        row["error"] = err
        rows.append(row)
    return rows


def run_compare(cfg: ExperimentConfig) -> list[dict]:
    """Side-by-side ln P for two combination rules, with a mean-over-agents row per mu.

    The mean row holds ``ln((1/n) sum_k P_k)``, the log of the arithmetic mean
    of the agents' error probabilities.
    """
    ra, rb = cfg.compare_rules
    sa, sb = (ra, rb) if ra != rb else (f"{ra}_1", f"{rb}_2")
    side_a, side_b = _sweep(cfg, ra), _sweep(cfg, rb)
    rows = []
    n = len(cfg.agents)
    for i, mu in enumerate(cfg.mu_grid):
        block_a = side_a[i * n:(i + 1) * n]
        block_b = side_b[i * n:(i + 1) * n]
        for a, b in zip(block_a, block_b):
            errs = [f"{s}: {r.error}" for s, r in ((sa, a), (sb, b)) if r.error]
            rows.append({
                "mu": mu,
                "agent": a.agent,
                f"ln_p_{sa}": a.ln_p_asym,
                f"ln_p_{sb}": b.ln_p_asym,
                "diff_ln_p": a.ln_p_asym - b.ln_p_asym,
                f"rate_{sa}": a.rate,
                f"rate_{sb}": b.rate,
                "diff_rate": a.rate - b.rate,
                "error": "; ".join(errs),
            })
        mean_a = _log_mean([r.ln_p_asym for r in block_a])
        mean_b = _log_mean([r.ln_p_asym for r in block_b])
        rows.append({
            "mu": mu,
            "agent": "mean",
            f"ln_p_{sa}": mean_a,
            f"ln_p_{sb}": mean_b,
            "diff_ln_p": mean_a - mean_b,
            f"rate_{sa}": block_a[0].rate,
            f"rate_{sb}": block_b[0].rate,
            "diff_rate": block_a[0].rate - block_b[0].rate,
            "error": "" if not any(r.error for r in (*block_a, *block_b)) else "some agents failed",
        })
    return rows


def _log_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    if np.isnan(v).any():
        return math.nan
    return float(logsumexp(v) - math.log(v.size))

