"""Command-line entry point: ``primo run|elasticity|validate|sweep``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .core import Purpose, derive_stream
from .elasticity import RateSpec, estimate_elasticity, lipschitz_in_z, upsilon_per_action
from .environment import MCAR, MAR, MNAR, EnvironmentSpec, SpecError, build_environment
from .function_classes import propensity_map
from .runner import GammaSchedule, RegretTrace, RunConfig, aggregate, run_algorithm

__all__ = [
    "TRACE_HEADER",
    "main",
    "build_parser",
    "build_spec",
    "estimate_environment",
    "gamma_schedule",
    "run_traces",
    "run_experiment",
    "run_sweep",
    "write_trace_csv",
    "read_trace_csv",
]

log = logging.getLogger("primo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
TRACE_HEADER = "replication,round,epoch,algo,gamma,instant_regret,cum_regret,missing"
DEFAULT_OUT = "primo_out"


def build_spec(cfg: ExperimentConfig) -> EnvironmentSpec:
    return build_environment(**cfg.environment.build_kwargs())


def estimate_environment(spec: EnvironmentSpec, cfg: ExperimentConfig) -> dict:
    """Elasticity of g-tilde, per-action upsilon and L_Z, on one shared Monte-Carlo sample."""
    env = cfg.environment
    ecfg = cfg.elasticity
    reward_class = (spec.reward_map, env.reward_norm_bound)
    out = {"lipschitz_z": lipschitz_in_z(spec.reward_map, env.reward_norm_bound, spec.x_max)}
    if not ecfg.enabled:
        return out
    est = estimate_elasticity(
        spec, reward_class, spec.g_tilde, ecfg.n_samples,
        derive_stream(cfg.seed, 0, Purpose.ESTIMATION), method=ecfg.method,
    )
    ups = upsilon_per_action(spec, spec.f_star, spec.g_tilde, ecfg.n_samples,
                             derive_stream(cfg.seed, 0, Purpose.ESTIMATION))
    out["elasticity"] = {
        "value": est.value,
        "method": est.method,
        "samples_used": est.samples_used,
        "per_action": est.per_action_values.tolist(),
    }
    out["upsilon"] = {"value": float(ups.min()), "max": float(ups.max()), "per_action": ups.tolist()}
    return out


def gamma_schedule(spec: EnvironmentSpec, cfg: ExperimentConfig, algo: str, estimates: dict) -> GammaSchedule:
    g = next(a.gamma for a in cfg.algorithms if a.name == algo)
    if g.mode == "practical":
        return GammaSchedule(spec.n_actions, "practical", c=g.c, rho=g.rho)
    if "elasticity" not in estimates:
        raise ValueError("the theory schedule needs elasticity estimation enabled")
    rparam = g.reward_rate_param or float(spec.reward_map.output_dim)
    pparam = float(propensity_map(spec.d_x, cfg.environment.propensity_lifts).output_dim)
    return GammaSchedule(
        spec.n_actions, "theory", c=g.c, rho=g.rho,
        lam=spec.xi_bound, delta=g.delta,
        reward_rate=RateSpec(g.reward_rate, rparam),
        elasticity=estimates["elasticity"]["value"],
        upsilon=estimates["upsilon"]["value"],
        calibrated=(algo == "primo-cal"),
        lipschitz_z=estimates["lipschitz_z"],
        eps0=spec.eps0, delta0=spec.delta0, tau=spec.eta_bound, omega0=spec.eta_std,
        propensity_rate=RateSpec(g.propensity_rate, pparam),
        cover_d=g.cover_d,
    )


def _job(args):
    spec, run_cfg, seed, rep, algo = args
    return run_algorithm(spec, run_cfg, seed, rep, algo)


def run_traces(spec, cfg: ExperimentConfig, estimates: dict, workers: int = 1) -> dict[str, list[RegretTrace]]:
    """All (algorithm, replication) runs; the result order never depends on scheduling."""
    jobs = []
    for a in cfg.algorithms:
        run_cfg = RunConfig(
            cfg.horizon, gamma_schedule(spec, cfg, a.name, estimates),
            reward_norm_bound=cfg.environment.reward_norm_bound,
            propensity_lifts=tuple(cfg.environment.propensity_lifts),
            radius_scale=cfg.radius_scale,
        )
        jobs += [(spec, run_cfg, cfg.seed, r, a.name) for r in range(cfg.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_job, jobs))
    else:
        traces = [_job(j) for j in jobs]
    out: dict[str, list[RegretTrace]] = {a.name: [] for a in cfg.algorithms}
    for t in traces:
        out[t.algo].append(t)
    return out


def write_trace_csv(path, traces: list[RegretTrace]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for t in sorted(traces, key=lambda t: t.replication):
            rows = zip(t.rounds.tolist(), t.epoch.tolist(), t.gamma.tolist(), t.instant.tolist(),
                       t.cumulative.tolist(), t.missing.tolist())
            fh.writelines(
                f"{t.replication},{r},{e},{t.algo},{g:.17g},{i:.17g},{c:.17g},{m}\n"
                for r, e, g, i, c, m in rows
            )


def read_trace_csv(path) -> list[dict]:
    """Parse a trace file back into typed records."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if ",".join(reader.fieldnames or []) != TRACE_HEADER:
            raise ValueError(f"unexpected header in {path}")
        return [
            {
                "replication": int(row["replication"]),
                "round": int(row["round"]),
                "epoch": int(row["epoch"]),
                "algo": row["algo"],
                "gamma": float(row["gamma"]),
                "instant_regret": float(row["instant_regret"]),
                "cum_regret": float(row["cum_regret"]),
                "missing": int(row["missing"]),
            }
            for row in reader
        ]


def _missingness_name(spec: EnvironmentSpec) -> str:
    m = spec.missingness
    return {MCAR: "mcar", MAR: "mar", MNAR: "mnar"}[type(m)]


def _tail_stats(v: np.ndarray) -> dict:
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
            "median": float(np.median(v))}


def summarize(spec, cfg: ExperimentConfig, estimates: dict, traces: dict[str, list[RegretTrace]]) -> dict:
    summaries = aggregate([t for ts in traces.values() for t in ts], cfg.tail_fraction)
    algos = {}
    for name, s in summaries.items():
        algos[name] = {
            "final_regret": s.final_stats(),
            "tail_regret": _tail_stats(s.tail_by_replication),
            "final_by_replication": s.final_by_replication.tolist(),
            "tail_by_replication": s.tail_by_replication.tolist(),
            "fallback_epochs": [list(t.fallback_epochs) for t in traces[name]],
        }
    return {
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "replications": cfg.replications,
        "tail_fraction": cfg.tail_fraction,
        "missingness": _missingness_name(spec),
        "delta0": spec.delta0,
        "tau": spec.eta_bound,
        "omega0": spec.eta_std,
        "perturbation_scale": cfg.environment.perturbation_scale,
        **estimates,
        "algorithms": algos,
        "config": cfg.model_dump(mode="json"),
    }


def _prepare_out(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def run_experiment(cfg: ExperimentConfig, out, workers: int = 1) -> dict:
    """Run every algorithm and replication and write traces and summary.json under ``out``."""
    out = _prepare_out(out)
    spec = build_spec(cfg)
    estimates = estimate_environment(spec, cfg)
    traces = run_traces(spec, cfg, estimates, workers)
    for name, ts in traces.items():
        write_trace_csv(out / f"trace_{name}.csv", ts)
    summary = summarize(spec, cfg, estimates, traces)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


SWEEP_HEADER = "field,value,algo,elasticity,upsilon,final_mean,final_std,tail_mean,tail_std"


def _set_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node or not isinstance(node[k], dict):
            raise ConfigError([f"sweep field {dotted!r}: unknown field {k!r}"])
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError([f"sweep field {dotted!r}: unknown field {keys[-1]!r}"])
    node[keys[-1]] = value


def sweep_configs(cfg: ExperimentConfig, field: str, values) -> list[ExperimentConfig]:
    out = []
    for v in values:
        raw = cfg.model_dump()
        _set_path(raw, field, v)
        out.append(parse_config(raw))
    return out


def run_sweep(cfg: ExperimentConfig, field: str, values, out, workers: int = 1, traces: bool = False) -> list[dict]:
    """One experiment per grid value; writes sweep.csv (one row per value and algorithm) and sweep.json."""
    out = _prepare_out(out)
    configs = sweep_configs(cfg, field, values)
    rows, points = [], []
    for i, (v, c) in enumerate(zip(values, configs)):
        if traces:
            summary = run_experiment(c, out / f"point_{i:03d}", workers)
        else:
            spec = build_spec(c)
            est = estimate_environment(spec, c)
            summary = summarize(spec, c, est, run_traces(spec, c, est, workers))
        el = summary.get("elasticity", {}).get("value", float("nan"))
        up = summary.get("upsilon", {}).get("value", float("nan"))
        for name, a in summary["algorithms"].items():
            rows.append(
                f"{field},{v:.17g},{name},{el:.17g},{up:.17g},{a['final_regret']['mean']:.17g},"
                f"{a['final_regret']['std']:.17g},{a['tail_regret']['mean']:.17g},{a['tail_regret']['std']:.17g}"
            )
        summary.pop("config")
        points.append({"field": field, "value": v, **summary})
        log.info("sweep %s=%g done", field, v)
    (out / "sweep.csv").write_text("\n".join([SWEEP_HEADER] + rows) + "\n")
    (out / "sweep.json").write_text(json.dumps(points, indent=2, sort_keys=True) + "\n")
    return points


# -- argument handling -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed override (u64)")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    runlike = argparse.ArgumentParser(add_help=False)
    runlike.add_argument("--out", help="output directory (falls back to $PRIMO_OUT, then ./primo_out)")
    runlike.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="process pool size")
    runlike.add_argument("--algo", help="comma-separated algorithm list overriding the config")

    parser = argparse.ArgumentParser(prog="primo", description="Bandit experiments with pre-trained covariate models.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common, runlike], help="run an experiment and write traces")
    sub.add_parser("elasticity", parents=[common], help="estimate elasticity and upsilon only")
    sub.add_parser("validate", parents=[common], help="check a config file")
    sp = sub.add_parser("sweep", parents=[common, runlike], help="grid over one scalar config field")
    sp.add_argument("--field", required=True, help="dotted field path, e.g. environment.perturbation_scale")
    sp.add_argument("--values", required=True, help="comma-separated grid values")
    sp.add_argument("--traces", action="store_true", help="also write per-point trace files")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None or getattr(args, "algo", None):
        raw = cfg.model_dump()
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = parse_config(raw)
        if getattr(args, "algo", None):
            cfg = cfg.with_algorithms([a.strip() for a in args.algo.split(",") if a.strip()])
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> str:
    return args.out or os.environ.get("PRIMO_OUT") or cfg.out or DEFAULT_OUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = _load(args)
        if args.command == "validate":
            print("valid")
            return EXIT_OK
        if args.command == "sweep":
            try:
                values = [float(v) for v in args.values.split(",") if v.strip()]
            except ValueError:
                raise ConfigError([f"--values: not a list of numbers: {args.values!r}"]) from None
            sweep_configs(cfg, args.field, values[:1])
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "elasticity":
            spec = build_spec(cfg)
            est = estimate_environment(spec, cfg.model_copy(update={"elasticity": cfg.elasticity.model_copy(update={"enabled": True})}))
            print(f"elasticity {est['elasticity']['value']:.17g}")
            print(f"upsilon {est['upsilon']['value']:.17g}")
            print(f"lipschitz_z {est['lipschitz_z']:.17g}")
            return EXIT_OK
        out = _out_dir(args, cfg)
        workers = max(1, args.workers)
        if args.command == "run":
            summary = run_experiment(cfg, out, workers)
            for name, a in summary["algorithms"].items():
                log.info("%-17s final %.3f  tail %.5f", name, a["final_regret"]["mean"], a["tail_regret"]["mean"])
        else:
            run_sweep(cfg, args.field, values, out, workers, args.traces)
        log.info("results written to %s", out)
        return EXIT_OK
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - exit code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
