"""Replicated simulation sweeps over the sample size.

Every replication derives its randomness from ``SeedSequence([seed, n, rep])``
so results do not depend on worker count or scheduling order.
"""

from __future__ import annotations

import dataclasses
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baseline, datagen, evaluation, glm
from .errors import ArgumentError
from .pipeline import PriorConfig, fit_dataset
from .vi import FitConfig

METHODS = ("proposed", "pcr")
METRIC_COLUMNS = ("zero_one_loss", "auc", "um", "cc", "rmse", "cp", "al", "excess_risk", "sigma2")
RECORD_COLUMNS = ("method", "n", "p", "rep", "seed", "status", "error") + METRIC_COLUMNS + (
    "n_test",
    "misclassified",
    "unconfident_misclassified",
    "confident",
    "confident_correct",
    "covered",
    "k",
    "iterations",
)


@dataclass(frozen=True)
class SweepConfig:
    preset: str = "logistic-gaussian"
    grid: tuple = (50, 100, 200)
    reps: int = 5
    methods: tuple = METHODS
    seed: int = 0
    n_test: int = 1000
    mc: int = 1000
    level: float = 0.95
    swap_average: bool = False
    unknown_variance: bool = False
    sigma2: float | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    pcr_grid: tuple = tuple(range(1, 31))
    pcr_folds: int = 5


def replication_seeds(seed, n, rep):
    """Dataset, fit, evaluation and CV seeds for one replication."""
    data, fit_, ev, cv = np.random.SeedSequence([seed, n, rep]).generate_state(4)
    return int(data), int(fit_), int(ev), int(cv)


def preset_spec(cfg):
    model, _ = datagen.PRESETS[cfg.preset]
    if model == "logistic":
        return glm.make_spec("bernoulli", "logistic")
    return glm.make_spec("gaussian", "softplus", sigma2=cfg.sigma2, unknown_variance=cfg.unknown_variance)


def _counts(rep_counts):
    keys = ("misclassified", "unconfident_misclassified", "confident", "confident_correct", "covered")
    return {k: rep_counts.get(k) for k in keys}


def _record(method, n, p, rep, seed, report=None, error=None, **extra):
    rec = dict.fromkeys(RECORD_COLUMNS)
    rec.update(method=method, n=n, p=p, rep=rep, seed=seed)
    if error is not None:
        rec.update(status="error", error=error)
        return rec
    rec.update(status="ok", error="")
    rec.update({k: v for k, v in report.metrics.items() if k in METRIC_COLUMNS})
    rec["n_test"] = report.counts.get("n")
    rec.update(_counts(report.counts))
    rec.update(extra)
    return rec


def _target(spec, test):
    return test.y if spec.family.kind == "bernoulli" else test.g_true


def run_proposed(cfg, train, test, fit_seed, eval_seed):
    spec = preset_spec(cfg)
    fit_cfg = dataclasses.replace(cfg.fit, seed=fit_seed)
    res = fit_dataset(train, spec, cfg.prior, fit_cfg, split_seed=fit_seed, swap_average=cfg.swap_average)
    model = res.model
    summ = evaluation.summarize(
        model.predictive, spec, test.X, cfg.mc, np.random.default_rng(eval_seed), cfg.level
    )
    if spec.family.kind == "bernoulli":
        report = evaluation.classification_metrics(summ, test.y)
    else:
        report = evaluation.regression_metrics(summ, _target(spec, test))
    extra = {
        "excess_risk": evaluation.excess_risk(model.point_estimate(), spec, train.true_beta, test.X),
        "sigma2": model.sigma2_mean() if spec.two_parameter else None,
        "k": int(model.meta["k"][0]),
        "iterations": int(sum(r.iterations for r in res.results)),
    }
    return report, extra


def run_pcr(cfg, train, test, cv_seed):
    spec = preset_spec(cfg)
    m = baseline.pcr_cv_fit(train, cfg.pcr_grid, cfg.pcr_folds, spec.family.kind, cv_seed)
    pred = baseline.pcr_predict(m, test.X)
    task = evaluation.task_for(spec)
    report = evaluation.point_metrics(pred, _target(spec, test), task)
    return report, {"k": int(m.n_components)}


def run_replication(cfg, n, rep):
    """All method records for one (n, rep) cell, plus their wall times."""
    data_seed, fit_seed, eval_seed, cv_seed = replication_seeds(cfg.seed, n, rep)
    p = datagen.overparam_dim(n)
    records, timings = [], []
    try:
        train, test = datagen.simulate_preset(cfg.preset, n, data_seed, n_test=cfg.n_test)
    except Exception as exc:  # noqa: BLE001 - any failure becomes an error marker
        msg = f"{type(exc).__name__}: {exc}"
        return [_record(m, n, p, rep, data_seed, error=msg) for m in cfg.methods], [0.0] * len(cfg.methods)
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "proposed":
                report, extra = run_proposed(cfg, train, test, fit_seed, eval_seed)
            else:
                report, extra = run_pcr(cfg, train, test, cv_seed)
            records.append(_record(method, n, p, rep, data_seed, report, **extra))
        except Exception as exc:  # noqa: BLE001
            last = traceback.extract_tb(exc.__traceback__)[-1]
            msg = f"{type(exc).__name__}: {exc} ({os.path.basename(last.filename)}:{last.lineno})"
            records.append(_record(method, n, p, rep, data_seed, error=msg))
        timings.append(time.perf_counter() - t0)
    return records, timings


def _run_cell(args):
    return run_replication(*args)


@dataclass
class SweepResult:
    records: list
    timings: list
    aggregate: list


def run_sweep(cfg, jobs=1):
    if not cfg.grid:
        raise ArgumentError("sweep grid is empty")
    cells = [(cfg, int(n), rep) for n in cfg.grid for rep in range(cfg.reps)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_run_cell, cells))
    else:
        outs = [_run_cell(c) for c in cells]
    records, timings = [], []
    for recs, times in outs:
        for r, t in zip(recs, times):
            records.append(r)
            timings.append({k: r[k] for k in ("method", "n", "rep", "seed")} | {"wall_time": t})
    order = {m: i for i, m in enumerate(METHODS)}

    def key(r):
        return (order.get(r["method"], len(order)), r["method"], r["n"], r["seed"])

    records.sort(key=key)
    timings.sort(key=key)
    return SweepResult(records, timings, aggregate(records))


AGGREGATE_STATS = ("mean", "se", "q05", "q95")


def aggregate(records):
    """Per-(method, n) mean, standard error and 5%/95% bands of each metric."""
    groups = {}
    for r in records:
        groups.setdefault((r["method"], r["n"]), []).append(r)
    rows = []
    for (method, n), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        row = {"method": method, "n": n, "p": rs[0]["p"], "reps": len(rs), "ok": len(ok)}
        for col in METRIC_COLUMNS:
            vals = np.array([r[col] for r in ok if r[col] is not None], dtype=float)
            if vals.size:
                row[f"{col}_mean"] = float(vals.mean())
                row[f"{col}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
                row[f"{col}_q05"] = float(np.quantile(vals, 0.05))
                row[f"{col}_q95"] = float(np.quantile(vals, 0.95))
            else:
                for s in AGGREGATE_STATS:
                    row[f"{col}_{s}"] = None
        rows.append(row)
    return rows


def aggregate_columns():
    cols = ["method", "n", "p", "reps", "ok"]
    for col in METRIC_COLUMNS:
        cols += [f"{col}_{s}" for s in AGGREGATE_STATS]
    return cols
