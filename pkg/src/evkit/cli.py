"""``evkit`` command-line driver.

Commands write line-delimited JSON records (``--format json``) or CSV tables
(``--format csv``) to ``--out`` or stdout.  A JSON config file mirrors the
long flags (dashes become underscores); explicit flags override it and the
``EVKIT_SEED`` environment variable overrides the seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import EvidenceEstimate, LogOddsResult, RngHandle
from .models import build_model, parse_model_name

COMMANDS = ("evidence", "compare", "select-order", "detect-sweep")
ESTIMATORS = ("laplace", "importance", "ti", "ais", "nested", "vb")
DETERMINISTIC = ("laplace", "vb")
FORMATS = ("json", "csv")


@dataclass
class RunConfig:
    command: str = "evidence"
    model: str = "conjugate"
    model2: str | None = None
    estimator: str = "nested"
    seed: int = 0
    reps: int = 20
    out: str | None = None
    format: str = "json"
    workers: int = 1
    # nested sampling
    n_live: int = 300
    mcmc_steps: int = 20
    tol: float = 1e-4
    shrinkage: str = "deterministic"
    ns_quadrature: str = "rectangle"
    stop: str = "remainder"
    trace_dir: str | None = None
    # thermal
    rungs: int = 50
    schedule: str = "power"
    gamma: float = 3.0
    ti_steps: int = 500
    ti_quadrature: str = "trapezoid"
    chains: int = 64
    ais_steps: int = 10
    samples: int = 100_000
    is_mode: str = "simple"
    # model-order sweep
    k_min: int = 1
    k_max: int = 4
    # detection sweep
    snrs: list = field(default_factory=lambda: [float(s) for s in range(-6, 8)] + [10.0, 15.0,
                                                                                   20.0])
    epochs: int = 300
    targets: int = 30
    noise: str = "ar2"
    aggregate: str = "max"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}")
        parse_model_name(self.model)
        if self.model2 is not None:
            parse_model_name(self.model2)
        if self.command == "compare" and self.model2 is None:
            raise ValueError("compare needs --model2")
        if self.command == "select-order":
            if parse_model_name(self.model)[0] != "mixture":
                raise ValueError("select-order needs a mixture model")
            if not 1 <= self.k_min <= self.k_max <= 4:
                raise ValueError("K range must lie within 1..4")
        if self.reps < 1 or self.workers < 1:
            raise ValueError("reps and workers must be positive")
        self.snrs = [float(s) for s in self.snrs]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Estimator dispatch


def run_estimator(cfg: RunConfig, model_name: str, rng: RngHandle):
    """Run ``cfg.estimator`` on a zoo model; returns ``(estimate, entry, extra)``."""
    from . import laplace, nested, thermal, varbayes

    entry = build_model(model_name)
    spec = entry.spec
    extra = None
    if cfg.estimator == "laplace":
        est = laplace.laplace_log_evidence(spec).to_estimate()
    elif cfg.estimator == "importance":
        est = thermal.prior_importance_log_evidence(spec, cfg.samples, rng, cfg.is_mode)
    elif cfg.estimator == "ti":
        sched = thermal.make_schedule(cfg.rungs, cfg.schedule, cfg.gamma)
        est = thermal.thermodynamic_integration(spec, sched, cfg.ti_steps, rng=rng,
                                                quadrature=cfg.ti_quadrature)
    elif cfg.estimator == "ais":
        sched = thermal.make_schedule(cfg.rungs, cfg.schedule, cfg.gamma)
        est, _ = thermal.ais_log_evidence(spec, sched, cfg.chains, cfg.ais_steps, rng)
    elif cfg.estimator == "nested":
        run = nested.nested_sampling(spec, cfg.n_live, cfg.mcmc_steps, cfg.tol, rng,
                                     cfg.shrinkage, cfg.ns_quadrature, cfg.stop)
        est, extra = run.to_estimate(), run
    else:
        if not isinstance(entry.model, varbayes.NormalGammaModel):
            raise ValueError("vb is only available for the normal-gamma model")
        f, state = varbayes.vb_lower_bound(entry.model)
        est = EvidenceEstimate(f, 0.0, 0, {"converged": float(state.converged),
                                           "sweeps": float(len(state.f_history) - 1)})
    return est, entry, extra


def _n_reps(cfg: RunConfig) -> int:
    return 1 if cfg.estimator in DETERMINISTIC else cfg.reps


def _evidence_job(args):
    cfg_dict, rep = args
    cfg = RunConfig.from_dict(cfg_dict)
    base = {"command": "evidence", "model": cfg.model, "estimator": cfg.estimator,
            "seed": cfg.seed, "rep": rep}
    try:
        est, entry, run = run_estimator(cfg, cfg.model, RngHandle(cfg.seed, rep))
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return {**base, "status": "error", "error": str(exc)}
    if run is not None and cfg.trace_dir:
        os.makedirs(cfg.trace_dir, exist_ok=True)
        with open(os.path.join(cfg.trace_dir, f"trace_rep{rep}.csv"), "w") as fh:
            fh.write(run.trace_csv())
    return {**base, "status": "ok", **est.to_dict(), "oracle_log_z": entry.oracle_log_z}


def _compare_job(args):
    cfg_dict, rep = args
    cfg = RunConfig.from_dict(cfg_dict)
    base = {"command": "compare", "model_1": cfg.model, "model_2": cfg.model2,
            "estimator": cfg.estimator, "seed": cfg.seed, "rep": rep}
    try:
        e1, m1, _ = run_estimator(cfg, cfg.model, RngHandle(cfg.seed, 2 * rep))
        e2, m2, _ = run_estimator(cfg, cfg.model2, RngHandle(cfg.seed, 2 * rep + 1))
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return {**base, "status": "error", "error": str(exc)}
    res = LogOddsResult.from_estimates(e1, e2)
    oracle = None
    if m1.oracle_log_z is not None and m2.oracle_log_z is not None:
        oracle = m1.oracle_log_z - m2.oracle_log_z
    return {**base, "status": "ok", **res.to_dict(), "oracle_log_or": oracle}


def _order_job(args):
    cfg_dict, K, rep = args
    cfg = RunConfig.from_dict(cfg_dict)
    name = _mixture_name(cfg.model, K)
    try:
        est, entry, _ = run_estimator(cfg, name, RngHandle(cfg.seed, 100 * K + rep))
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return {"K": K, "rep": rep, "status": "error", "error": str(exc)}
    return {"K": K, "rep": rep, "status": "ok", "log_z": est.log_z, "std_err": est.std_err,
            "n_params": entry.n_params}


def _mixture_name(model: str, K: int) -> str:
    base, params = parse_model_name(model)
    if base != "mixture":
        raise ValueError("select-order needs a mixture model")
    params["K"] = K
    return "mixture:" + ",".join(f"{k}={params[k]}" for k in sorted(params))


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# ---------------------------------------------------------------------------
# Output


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def format_records(records, fmt: str, columns=None) -> str:
    records = [_clean(r) for r in records]
    if fmt == "json":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    columns = columns or sorted({k for r in records for k in r if not isinstance(r[k], dict)})
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands


EVIDENCE_COLUMNS = ["model", "estimator", "seed", "rep", "status", "log_z", "std_err", "n_evals",
                    "oracle_log_z", "error"]
COMPARE_COLUMNS = ["model_1", "model_2", "estimator", "seed", "rep", "status", "log_z_1",
                   "log_z_2", "log_or", "std_err", "oracle_log_or", "error"]
ORDER_COLUMNS = ["K", "n_params", "mean_log_z", "std_log_z", "mean_internal_err", "n_ok",
                 "selected"]
SWEEP_COLUMNS = ["snr_db", "rep", "auc_corr", "auc_or_plus", "auc_or_pm"]


def cmd_evidence(cfg: RunConfig) -> int:
    jobs = [(cfg.to_dict(), r) for r in range(_n_reps(cfg))]
    records = _map(_evidence_job, jobs, cfg.workers)
    _emit(format_records(records, cfg.format, EVIDENCE_COLUMNS), cfg.out)
    return 0 if all(r["status"] == "ok" for r in records) else 1


def cmd_compare(cfg: RunConfig) -> int:
    jobs = [(cfg.to_dict(), r) for r in range(_n_reps(cfg))]
    records = _map(_compare_job, jobs, cfg.workers)
    _emit(format_records(records, cfg.format, COMPARE_COLUMNS), cfg.out)
    return 0 if all(r["status"] == "ok" for r in records) else 1


def order_table(results, ks) -> list:
    """Aggregate per-run results into one row per K."""
    rows = []
    for K in ks:
        ok = [r for r in results if r["K"] == K and r["status"] == "ok"]
        z = np.array([r["log_z"] for r in ok])
        rows.append({
            "command": "select-order", "K": K,
            "n_params": ok[0]["n_params"] if ok else 3 * K - 1,
            "mean_log_z": float(z.mean()) if z.size else None,
            "std_log_z": float(z.std(ddof=1)) if z.size > 1 else None,
            "mean_internal_err": float(np.mean([r["std_err"] for r in ok])) if ok else None,
            "n_ok": len(ok),
        })
    scored = [r for r in rows if r["mean_log_z"] is not None]
    best = max(scored, key=lambda r: r["mean_log_z"])["K"] if scored else None
    for r in rows:
        r["selected"] = r["K"] == best
    return rows


def cmd_select_order(cfg: RunConfig) -> int:
    ks = list(range(cfg.k_min, cfg.k_max + 1))
    jobs = [(cfg.to_dict(), K, r) for K in ks for r in range(_n_reps(cfg))]
    results = _map(_order_job, jobs, cfg.workers)
    rows = order_table(results, ks)
    _emit(format_records(rows, cfg.format, ORDER_COLUMNS), cfg.out)
    errors = [r for r in results if r["status"] != "ok"]
    for e in errors:
        sys.stderr.write(f"K={e['K']} rep={e['rep']}: {e['error']}\n")
    return 0 if not errors else 1


def cmd_detect_sweep(cfg: RunConfig) -> int:
    from .detect import snr_sweep

    rows = snr_sweep(cfg.snrs, cfg.reps, cfg.seed, cfg.epochs, cfg.targets, cfg.noise,
                     cfg.aggregate, cfg.workers)
    rows = [{"command": "detect-sweep", **r} for r in rows]
    _emit(format_records(rows, cfg.format, SWEEP_COLUMNS), cfg.out)
    return 0


DISPATCH = {"evidence": cmd_evidence, "compare": cmd_compare,
            "select-order": cmd_select_order, "detect-sweep": cmd_detect_sweep}


# ---------------------------------------------------------------------------
# Parsing


def _floats(text: str) -> list:
    return [float(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evkit", description="Bayesian evidence estimation toolkit")
    p.add_argument("command", choices=COMMANDS)
    S = argparse.SUPPRESS
    add = p.add_argument
    add("--config", default=None, help="JSON file with keys mirroring the long flags")
    add("--model", default=S, help="zoo model, e.g. conjugate or mixture:K=2,truth=2")
    add("--model2", default=S, help="second model for compare")
    add("--estimator", choices=ESTIMATORS, default=S)
    add("--seed", type=int, default=S)
    add("--reps", type=int, default=S)
    add("--out", default=S)
    add("--format", choices=FORMATS, default=S)
    add("--workers", type=int, default=S)
    add("--n-live", dest="n_live", type=int, default=S)
    add("--mcmc-steps", dest="mcmc_steps", type=int, default=S)
    add("--tol", type=float, default=S)
    add("--shrinkage", choices=("deterministic", "sampled"), default=S)
    add("--ns-quadrature", dest="ns_quadrature", choices=("rectangle", "trapezoid"), default=S)
    add("--stop", choices=("remainder", "delta"), default=S)
    add("--trace-dir", dest="trace_dir", default=S)
    add("--rungs", type=int, default=S)
    add("--schedule", choices=("linear", "power"), default=S)
    add("--gamma", type=float, default=S)
    add("--ti-steps", dest="ti_steps", type=int, default=S)
    add("--ti-quadrature", dest="ti_quadrature", choices=("trapezoid", "left"), default=S)
    add("--chains", type=int, default=S)
    add("--ais-steps", dest="ais_steps", type=int, default=S)
    add("--samples", type=int, default=S)
    add("--is-mode", dest="is_mode", choices=("simple", "self_normalized"), default=S)
    add("--k-min", dest="k_min", type=int, default=S)
    add("--k-max", dest="k_max", type=int, default=S)
    add("--snrs", type=_floats, default=S, help="comma-separated SNR grid in dB")
    add("--epochs", type=int, default=S)
    add("--targets", type=int, default=S)
    add("--noise", choices=("white", "ar2"), default=S)
    add("--aggregate", choices=("max", "marginal"), default=S)
    return p


def parse_config(argv=None, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    args = vars(build_parser().parse_args(argv))
    settings = {}
    path = args.pop("config")
    if path:
        with open(path) as fh:
            settings.update(json.load(fh))
    settings.update(args)
    if environ.get("EVKIT_SEED"):
        settings["seed"] = int(environ["EVKIT_SEED"])
    return RunConfig.from_dict(settings)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"evkit: {exc}\n")
        return 2
    return DISPATCH[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
