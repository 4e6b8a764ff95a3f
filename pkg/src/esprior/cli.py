"""Command-line front end.

Every subcommand resolves its flags (optionally layered over ``--config``)
into a concrete :class:`RunConfig`, stages all outputs in a hidden
directory, and publishes them together with ``run_config.json`` only on
success.  Exit codes: 0 ok, 1 usage or input error, 2 numeric failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baseline, datagen, evaluation, glm, gradcheck, sweep
from .errors import ArgumentError, DataError, EspriorError, NumericError
from .outputs import fmt, staged_output
from .pipeline import PriorConfig, check_compatible, fit_dataset, load_model, model_bytes
from .vi import FitConfig

log = logging.getLogger("esprior")

OUT_ROOT_ENV = "ESPRIOR_OUT_ROOT"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
DEFAULT_LINK = {"bernoulli": "logistic", "poisson": "softplus", "gaussian": "identity"}
SIM_PRESETS = tuple(datagen.PRESETS) + ("linear-gaussian",)


class UsageError(EspriorError):
    pass


@dataclass
class RunConfig:
    """Everything a subcommand needs; persisted verbatim as ``run_config.json``."""

    command: str
    out: str | None = None
    seed: int = 0
    # data source
    preset: str = "logistic-gaussian"
    n: int = 100
    p: int | None = None
    n_test: int = 1000
    train: str | None = None
    test: str | None = None
    labels: str | None = None
    test_labels: str | None = None
    format: str = "csv"
    model: str | None = None
    # model
    family: str | None = None
    link: str | None = None
    sigma2: float | None = None
    unknown_variance: bool = False
    # prior
    k: int | None = None
    evr: float = 0.95
    radius: float | None = None
    eta: float = 1.0
    xi: float = 1.0
    # variational fit
    lr: float = 1e-2
    iters: int = 5000
    tol: float = 1e-5
    mc_samples: int = 1
    factor: str = "auto"
    rank: int | None = None
    swap_average: bool = False
    # prediction
    mc: int = 1000
    level: float = 0.95
    # sweep and baseline
    grid: list | None = None
    reps: int = 5
    methods: list = field(default_factory=lambda: list(sweep.METHODS))
    folds: int = 5
    jobs: int | None = None
    # gradcheck
    instances: int = 20
    inject_fault: list = field(default_factory=list)

    def prior_config(self):
        return PriorConfig(self.k, self.evr, self.radius, self.eta, self.xi)

    def fit_config(self):
        return FitConfig(
            mc_samples=self.mc_samples,
            max_iters=self.iters,
            lr=self.lr,
            tol=self.tol,
            seed=self.seed,
            factor=self.factor,
            rank=self.rank,
        )

    def glm_spec(self):
        return glm.make_spec(self.family, self.link, self.sigma2, self.unknown_variance)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_int_list(text):
    """``"50,100,200"`` or ranges such as ``"1-30"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    return out


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


S = argparse.SUPPRESS


def _add_common(p):
    p.add_argument("--config", help="JSON RunConfig to start from (flags override it)")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p, test=False, labels=True):
    p.add_argument("--train", default=S, help="training table")
    if test:
        p.add_argument("--test", default=S, help="test table")
        p.add_argument("--test-labels", dest="test_labels", default=S)
    p.add_argument("--format", choices=("csv", "arcene"), default=S)
    if labels:
        p.add_argument("--labels", default=S, help="label file for --format arcene")


def _add_model(p):
    p.add_argument("--family", choices=glm.FAMILIES, default=S)
    p.add_argument("--link", choices=glm.LINKS, default=S)
    p.add_argument("--sigma2", type=float, default=S, help="known noise variance (gaussian)")
    p.add_argument("--unknown-variance", dest="unknown_variance", action="store_true", default=S)


def _add_fit(p):
    p.add_argument("--k", type=int, default=S, help="prior rank (overrides --evr)")
    p.add_argument("--evr", type=float, default=S, help="explained-variance target for the prior rank")
    p.add_argument("--radius", type=float, default=S)
    p.add_argument("--eta", type=float, default=S, help="inverse-Gaussian prior mean")
    p.add_argument("--xi", type=float, default=S, help="inverse-Gaussian prior shape")
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=S)
    p.add_argument("--factor", choices=("dense", "diag", "lowrank", "auto"), default=S)
    p.add_argument("--rank", type=int, default=S, help="columns of the lowrank factor")
    p.add_argument("--swap-average", dest="swap_average", action="store_true", default=S)


def _add_predict(p):
    p.add_argument("--model", default=S, help="model.npz written by `fit`")
    p.add_argument("--mc", type=int, default=S, help="predictive samples per test point")
    p.add_argument("--level", type=float, default=S)


def build_parser():
    ap = _Parser(prog="esprior", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a train/test pair from a simulation preset")
    _add_common(p)
    p.add_argument("--preset", choices=SIM_PRESETS, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--p", type=int, default=S)
    p.add_argument("--n-test", dest="n_test", type=int, default=S)
    p.add_argument("--sigma2", type=float, default=S)

    p = sub.add_parser("fit", help="fit the variational posterior to a table")
    _add_common(p)
    _add_data(p)
    _add_model(p)
    _add_fit(p)

    for name, desc in (("predict", "predictive means and intervals"), ("evaluate", "metrics on a test table")):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        _add_predict(p)
        p.add_argument("--test", default=S)
        p.add_argument("--test-labels", dest="test_labels", default=S)
        p.add_argument("--format", choices=("csv", "arcene"), default=S)

    p = sub.add_parser("sweep", help="replicated simulation over a grid of sample sizes")
    _add_common(p)
    p.add_argument("--preset", choices=tuple(datagen.PRESETS), default=S)
    p.add_argument("--grid", type=parse_int_list, default=S, help="sample sizes, e.g. 50,100,200")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--methods", type=_str_list, default=S, help="comma list from: proposed,pcr")
    p.add_argument("--jobs", type=int, default=S, help="worker processes (default: logical cores)")
    p.add_argument("--n-test", dest="n_test", type=int, default=S)
    p.add_argument("--folds", type=int, default=S)
    _add_model(p)
    _add_fit(p)
    p.add_argument("--mc", type=int, default=S)
    p.add_argument("--level", type=float, default=S)

    p = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    _add_common(p)
    p.add_argument("--instances", type=int, default=S)
    # testing hook: perturb the analytic side of a named check
    p.add_argument("--inject-fault", dest="inject_fault", action="append", default=S, help=S)

    p = sub.add_parser("baseline", help="baseline methods")
    bsub = p.add_subparsers(dest="baseline", parser_class=_Parser)
    q = bsub.add_parser("pcr", help="principal component regression with CV-chosen rank")
    _add_common(q)
    _add_data(q, test=True)
    q.add_argument("--family", choices=glm.FAMILIES, default=S)
    q.add_argument("--grid", type=parse_int_list, default=S, help="candidate component counts (default 1-30)")
    q.add_argument("--folds", type=int, default=S)
    return ap


def resolve_config(args):
    """Layer defaults, ``--config`` and explicit flags into a concrete RunConfig."""
    command = args.command if args.command != "baseline" else f"baseline-{args.baseline}"
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if base.get("command", command) != command:
            raise UsageError(f"config is for {base['command']!r}, not {command!r}")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "baseline", "command")}
    cfg = RunConfig.from_dict({**base, **flags, "command": command})

    if cfg.command in ("simulate", "sweep"):
        if cfg.preset in datagen.PRESETS:
            model, _ = datagen.PRESETS[cfg.preset]
            fam, link = ("bernoulli", "logistic") if model == "logistic" else ("gaussian", "softplus")
        else:
            fam, link = "gaussian", "identity"
        cfg.family, cfg.link = cfg.family or fam, cfg.link or link
    elif cfg.command in ("fit", "baseline-pcr"):
        cfg.family = cfg.family or "bernoulli"
        cfg.link = cfg.link or DEFAULT_LINK[cfg.family]
    if cfg.command == "sweep":
        cfg.grid = cfg.grid or [50, 100, 200]
        cfg.jobs = cfg.jobs or os.cpu_count() or 1
        bad = sorted(set(cfg.methods) - set(sweep.METHODS))
        if bad or not cfg.methods:
            raise UsageError(f"unknown methods {bad}; choose from {list(sweep.METHODS)}")
    if cfg.command == "baseline-pcr" and cfg.grid is None:
        cfg.grid = list(range(1, 31))
    if cfg.out is None:
        cfg.out = str(Path(os.environ.get(OUT_ROOT_ENV, "runs")) / cfg.command)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def _require(cfg, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError(f"{cfg.command} needs {', '.join(missing)}")


def _exists(path, what):
    if not Path(path).is_file():
        raise ArgumentError(f"{what} not found: {path}")


def _load(cfg, path, labels, family=None, center=None):
    _exists(path, "dataset")
    if labels is not None:
        _exists(labels, "label file")
    return datagen.load_table(path, cfg.format, labels, family, center)


def digest(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


def _npy_bytes(a):
    buf = io.BytesIO()
    np.save(buf, a)
    return buf.getvalue()


def cmd_simulate(cfg):
    p = datagen.overparam_dim(cfg.n) if cfg.p is None else cfg.p
    if cfg.preset == "linear-gaussian":
        spec = datagen.SpectrumSpec("decay", cfg.n, p)
        s2 = 1.0 if cfg.sigma2 is None else cfg.sigma2
        train, test = datagen.gen_linear_gaussian(cfg.n, p, spec, "gaussian", cfg.seed, n_test=cfg.n_test, sigma2=s2)
    else:
        if cfg.sigma2 is not None and datagen.PRESETS[cfg.preset][0] == "softplus":
            spec = datagen.SpectrumSpec("decay", cfg.n, p)
            train, test = datagen.gen_softplus_gaussian(
                cfg.n, p, spec, datagen.PRESETS[cfg.preset][1], cfg.seed, n_test=cfg.n_test, sigma2=cfg.sigma2
            )
        else:
            train, test = datagen.simulate_preset(cfg.preset, cfg.n, cfg.seed, n_test=cfg.n_test, p=p)
    meta = {
        "preset": cfg.preset,
        "n": cfg.n,
        "p": p,
        "n_test": cfg.n_test,
        "seed": cfg.seed,
        "family": cfg.family,
        "link": cfg.link,
        "true_sigma2": train.true_sigma2,
        "true_beta_sha256": digest(train.true_beta),
        "test_response": "labels" if cfg.family == "bernoulli" else "noiseless mean",
    }
    with staged_output(cfg.out) as out:
        datagen.write_csv(train, out.path("train.csv"))
        datagen.write_csv(test, out.path("test.csv"))
        out.write_bytes("true_beta.npy", _npy_bytes(train.true_beta))
        out.write_json("meta.json", meta)
        out.write_json("run_config.json", cfg.to_dict())
    print(f"wrote n={cfg.n} p={p} train/test to {cfg.out}")
    return EXIT_OK


def cmd_fit(cfg):
    _require(cfg, "train")
    spec = cfg.glm_spec()
    data = _load(cfg, cfg.train, cfg.labels, cfg.family)
    res = fit_dataset(data, spec, cfg.prior_config(), cfg.fit_config(), cfg.seed, cfg.swap_average)
    rows = [
        [c, i, fmt(float(f)), fmt(float(g))]
        for c, r in enumerate(res.results)
        for i, (f, g) in enumerate(zip(r.trace, r.grad_norms), start=1)
    ]
    summary = {
        "components": [
            {
                "iterations": r.iterations,
                "converged": bool(r.converged),
                "final_objective": float(r.trace[-1]) if r.trace else None,
                "k": int(pr.low_rank.rank),
                "radius": float(r.radius),
                "factor": r.state.kind,
            }
            for r, pr in zip(res.results, res.priors)
        ],
        "n": data.n,
        "p": data.p,
        "spec": spec.to_dict(),
    }
    if spec.two_parameter:
        summary["sigma2_posterior_mean"] = res.model.sigma2_mean()
    for r in res.results:
        log.info("fit: %d iterations in %.2fs (converged=%s)", r.iterations, r.wall_time, r.converged)
    with staged_output(cfg.out) as out:
        out.write_bytes("model.npz", model_bytes(res.model, {"run_config": {k: v for k, v in cfg.to_dict().items() if k != "out"}}))
        out.write_rows("trace.csv", ["component", "iteration", "objective", "grad_norm"], rows)
        out.write_json("fit_summary.json", summary)
        out.write_json("run_config.json", cfg.to_dict())
    print(f"fitted {len(res.results)} component(s); model written to {cfg.out}/model.npz")
    return EXIT_OK


def _load_model_and_test(cfg):
    _require(cfg, "model", "test")
    _exists(cfg.model, "model file")
    model, _ = load_model(cfg.model)
    test = _load(cfg, cfg.test, cfg.test_labels, model.spec.family.kind, model.center)
    check_compatible(model, test)
    return model, test


def cmd_predict(cfg):
    model, test = _load_model_and_test(cfg)
    summ = evaluation.summarize(
        model.predictive, model.spec, test.X, cfg.mc, np.random.default_rng(cfg.seed), cfg.level
    )
    rows = [
        [i, fmt(float(m)), fmt(float(lo)), fmt(float(hi)), int(c)]
        for i, (m, lo, hi, c) in enumerate(zip(summ.mc_mean, summ.lower, summ.upper, summ.confident))
    ]
    with staged_output(cfg.out) as out:
        out.write_rows("predictions.csv", ["index", "mean", "lower", "upper", "confident"], rows)
        out.write_json("run_config.json", cfg.to_dict())
    print(f"wrote {len(rows)} predictions to {cfg.out}/predictions.csv")
    return EXIT_OK


def _report_row(report, method, n, seed):
    keys = list(report.metrics) + [f"count_{k}" for k in report.counts]
    vals = list(report.metrics.values()) + list(report.counts.values())
    return ["method", "n", "seed", "task"] + keys, [method, n, seed, report.task] + [fmt(v) for v in vals]


def _write_report(out, report, method, n, seed):
    out.write_json("metrics.json", report.to_dict())
    header, row = _report_row(report, method, n, seed)
    out.write_rows("metrics.csv", header, [row])


def cmd_evaluate(cfg):
    model, test = _load_model_and_test(cfg)
    try:
        glm.validate_response(model.spec, test.y)
    except (ArgumentError, DataError) as exc:
        raise DataError(f"test set does not match the model family {model.spec.family.kind!r}: {exc}") from exc
    summ = evaluation.summarize(
        model.predictive, model.spec, test.X, cfg.mc, np.random.default_rng(cfg.seed), cfg.level
    )
    if evaluation.task_for(model.spec) == "classification":
        report = evaluation.classification_metrics(summ, test.y)
    else:
        report = evaluation.regression_metrics(summ, test.y)
    with staged_output(cfg.out) as out:
        _write_report(out, report, "proposed", test.n, cfg.seed)
        out.write_json("run_config.json", cfg.to_dict())
    print(report.to_json())
    return EXIT_OK


def _rows(records, columns):
    return [[fmt(r.get(c)) for c in columns] for r in records]


def cmd_sweep(cfg):
    scfg = sweep.SweepConfig(
        preset=cfg.preset,
        grid=tuple(cfg.grid),
        reps=cfg.reps,
        methods=tuple(cfg.methods),
        seed=cfg.seed,
        n_test=cfg.n_test,
        mc=cfg.mc,
        level=cfg.level,
        swap_average=cfg.swap_average,
        unknown_variance=cfg.unknown_variance,
        sigma2=cfg.sigma2,
        prior=cfg.prior_config(),
        fit=cfg.fit_config(),
        pcr_folds=cfg.folds,
    )
    res = sweep.run_sweep(scfg, jobs=cfg.jobs)
    failed = sum(r["status"] != "ok" for r in res.records)
    with staged_output(cfg.out) as out:
        out.write_rows("records.csv", sweep.RECORD_COLUMNS, _rows(res.records, sweep.RECORD_COLUMNS))
        cols = sweep.aggregate_columns()
        out.write_rows("aggregate.csv", cols, _rows(res.aggregate, cols))
        tcols = ["method", "n", "rep", "seed", "wall_time"]
        out.write_rows("timings.csv", tcols, _rows(res.timings, tcols))
        out.write_json("run_config.json", cfg.to_dict())
    for row in res.aggregate:
        keys = ("zero_one_loss", "auc", "rmse", "cp")
        shown = " ".join(f"{k}={row[k + '_mean']:.4f}" for k in keys if row.get(k + "_mean") is not None)
        print(f"{row['method']:<9s} n={row['n']:<5d} ok={row['ok']}/{row['reps']} {shown}")
    if failed:
        print(f"{failed} replication(s) failed; see the error column of records.csv", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(cfg):
    unknown = sorted(set(cfg.inject_fault) - set(gradcheck.CHECKS))
    if unknown:
        raise UsageError(f"unknown gradient checks: {unknown}")
    report = gradcheck.run(cfg.seed, cfg.instances, corrupt=set(cfg.inject_fault))
    for line in report.lines():
        print(line)
    with staged_output(cfg.out) as out:
        out.write_json(
            "gradcheck.json",
            {
                "seed": cfg.seed,
                "instances": cfg.instances,
                "tolerance": gradcheck.TOLERANCE,
                "checks": {r.name: {"worst": r.worst, "instance": r.worst_index} for r in report.results},
                "passed": report.passed,
            },
        )
        if not report.passed:
            out.write_json("failing_instances.json", report.replay_record())
        out.write_json("run_config.json", cfg.to_dict())
    if not report.passed:
        print(f"gradient check failed; replay record in {cfg.out}/failing_instances.json", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_baseline_pcr(cfg):
    _require(cfg, "train", "test")
    train = _load(cfg, cfg.train, cfg.labels, cfg.family)
    test = _load(cfg, cfg.test, cfg.test_labels, cfg.family, train.center)
    if train.p != test.p:
        raise ArgumentError(f"train has {train.p} covariates, test has {test.p}")
    spec = glm.make_spec(cfg.family, cfg.link)
    glm.validate_response(spec, train.y)
    glm.validate_response(spec, test.y)
    model = baseline.pcr_cv_fit(train, cfg.grid, cfg.folds, cfg.family, cfg.seed)
    pred = baseline.pcr_predict(model, test.X)
    report = evaluation.point_metrics(pred, test.y, evaluation.task_for(spec))
    info = {
        "components": model.n_components,
        "intercept": model.intercept,
        "coef": model.coef.tolist(),
        "converged": bool(model.converged),
        "ridge_fallback": bool(model.ridge_fallback),
    }
    with staged_output(cfg.out) as out:
        _write_report(out, report, "pcr", test.n, cfg.seed)
        out.write_json("pcr_model.json", info)
        out.write_json("run_config.json", cfg.to_dict())
    print(report.to_json())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "baseline-pcr": cmd_baseline_pcr,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None or (args.command == "baseline" and args.baseline is None):
            parser.print_help(sys.stderr)
            return EXIT_INPUT
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EspriorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
