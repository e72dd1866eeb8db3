"""Command-line entry point: config parsing, seeding, dispatch, report emission.

Exit codes: 0 success, 1 config/usage error, 2 numerical breakdown or
acceptance starvation, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .conditioned import build_renewal_table, sample_limit_batches
from .env import EnvSpec, estimate_rho
from .errors import AcceptanceStarvationError, ConfigError, NumericalBreakdownError
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    run_diagnostics,
    run_theorem1,
    run_theorem2,
)
from .fluctuation import default_horizon, estimate_renewals
from .rng import ROLE_RENEWAL, substream
from .selftest import run_selftest

_COMMANDS = ("theorem1", "theorem2", "diagnostics", "fluctuation", "limits", "selftest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="bpre", description=__doc__)
    p.add_argument("--version", action="version", version=f"bpre {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        if name != "selftest":
            sp.add_argument("--config", required=True, help="path to the JSON config")
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")
            sp.add_argument("--replicas", type=int, default=None, help="override config replicas")
            sp.add_argument("--threads", type=int, default=None, help="worker processes")
            sp.add_argument("--format", choices=("csv", "json"), default="csv",
                            help="row output format")
    return p


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _digest(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    master_seed: int
    version: str
    started_utc: str
    finished_utc: str | None
    outputs: list[str]

    def write(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            json.dump(
                {
                    "tool": "bpre",
                    "version": self.version,
                    "command": self.command,
                    "config_digest": self.config_digest,
                    "master_seed": self.master_seed,
                    "started_utc": self.started_utc,
                    "finished_utc": self.finished_utc,
                    "outputs": self.outputs,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _apply_overrides(cfg: dict, args) -> dict:
    out = dict(cfg)
    if args.seed is not None:
        out["seed"] = int(args.seed)
    if args.replicas is not None:
        out["replicas"] = int(args.replicas)
    if getattr(args, "threads", None) is not None:
        out["threads"] = int(args.threads)
    return out


def _strict_keys(cfg: dict, known: set[str], what: str) -> None:
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"unknown {what} config keys: {sorted(extra)}")


def _write_report(report: ExperimentReport, outdir: Path, fmt: str) -> list[str]:
    outputs = []
    if fmt == "csv":
        report.write_csv(outdir / "report.csv")
        outputs.append("report.csv")
    else:
        report.write_rows_json(outdir / "report.json")
        outputs.append("report.json")
    report.write_aggregates(outdir / "aggregates.json")
    outputs.append("aggregates.json")
    return outputs


def _run_experiment(args, runner) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    try:
        config = ExperimentConfig.from_json_dict(cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=args.command,
        config_digest=_digest(cfg),
        master_seed=config.seed,
        version=__version__,
        started_utc=_now(),
        finished_utc=None,
        outputs=[],
    )
    manifest.write(outdir / "manifest.json")
    report = runner(config)
    manifest.outputs = _write_report(report, outdir, args.format) + ["manifest.json"]
    manifest.finished_utc = _now()
    manifest.write(outdir / "manifest.json")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _run_fluctuation(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    known = {"spec", "grid_max", "grid_points", "replicas", "horizon", "seed",
             "rho_horizon", "rho_replicas", "threads"}
    _strict_keys(cfg, known, "fluctuation")
    if "spec" not in cfg:
        raise ConfigError("fluctuation config must contain 'spec'")
    try:
        spec = EnvSpec.from_json_dict(cfg["spec"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    seed = int(cfg.get("seed", 0))
    grid_max = float(cfg.get("grid_max", 32.0))
    grid_points = int(cfg.get("grid_points", 65))
    replicas = int(cfg.get("replicas", 1000))
    horizon = int(cfg.get("horizon", default_horizon(grid_max)))
    if grid_max <= 0 or grid_points < 2:
        raise ConfigError("grid_max must be > 0 and grid_points >= 2")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, _digest(cfg), seed, __version__, _now(), None, [])
    manifest.write(outdir / "manifest.json")
    grid = np.concatenate([[0.0], np.geomspace(grid_max / (grid_points * 4), grid_max, grid_points - 1)])
    table = estimate_renewals(spec, grid, replicas, horizon, substream(seed, ROLE_RENEWAL))
    table.write_csv(outdir / "renewals.csv")
    rho_hat, rho_se = estimate_rho(
        spec, int(cfg.get("rho_horizon", 512)), int(cfg.get("rho_replicas", 400)),
        substream(seed, ROLE_RENEWAL, 1),
    )
    agg = {
        "d_hat": table.d_hat,
        "replicas": table.replicas,
        "horizon": table.horizon,
        "truncation_bias_v": table.truncation_bias_v,
        "truncation_bias_u": table.truncation_bias_u,
        "rho_hat": rho_hat,
        "rho_se": rho_se,
        "rho_exact": spec.rho_exact,
        "violates_positivity": spec.violates_positivity,
        "a2_note": spec.a2_note,
        "lattice_warning": None if spec.continuous_x else
            "lattice preset: sum P(S_j = 0) diverges, conditioned sampling unavailable",
    }
    with open(outdir / "aggregates.json", "w", newline="") as fh:
        json.dump({"command": "fluctuation", "config": cfg, "aggregates": agg}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    manifest.outputs = ["renewals.csv", "aggregates.json", "manifest.json"]
    manifest.finished_utc = _now()
    manifest.write(outdir / "manifest.json")
    if agg["lattice_warning"]:
        print(f"warning: {agg['lattice_warning']}", file=sys.stderr)
    return 0


def _run_limits(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    known = {"spec", "r_values", "batch", "constraint_len", "tol", "seed", "replicas", "threads"}
    _strict_keys(cfg, known, "limits")
    if "spec" not in cfg:
        raise ConfigError("limits config must contain 'spec'")
    try:
        spec = EnvSpec.from_json_dict(cfg["spec"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    seed = int(cfg.get("seed", 0))
    r_values = [int(r) for r in cfg.get("r_values", (-2, 0, 2))]
    batch = int(cfg.get("batch", cfg.get("replicas", 4096)))
    constraint_len = int(cfg.get("constraint_len", 2048))
    tol = float(cfg.get("tol", 1e-8))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, _digest(cfg), seed, __version__, _now(), None, [])
    manifest.write(outdir / "manifest.json")
    rng = substream(seed, ROLE_RENEWAL, 2)
    table = build_renewal_table(spec, constraint_len, substream(seed, ROLE_RENEWAL, 3))
    batches, stats = sample_limit_batches(
        spec, r_values, batch, tol, rng, constraint_len=constraint_len, table=table
    )
    with open(outdir / "limits.csv", "w", newline="") as fh:
        fh.write("family,R,index,value,weight,converged,steps\n")
        for r_val, lb in sorted(batches.items()):
            for fam, draws in (("theta_right", lb.draws_right()), ("theta_left", lb.draws_left())):
                for i, d in enumerate(draws):
                    fh.write(
                        f"{fam},{r_val},{i},{d.value!r},{d.weight!r},"
                        f"{int(d.converged)},{d.steps}\n"
                    )
    agg = {
        "ess_u": stats["ess_u"],
        "ess_v": stats["ess_v"],
        "minus_acceptance": stats["minus"]["acceptance"],
        "plus_acceptance": stats["plus"]["acceptance"],
        "converged_frac": {
            str(r): {
                "theta_right": float(np.mean(batches[r].conv_right)),
                "theta_left": float(np.mean(batches[r].conv_left)),
            }
            for r in r_values
        },
        "note_theta_right_r0": (
            "value uses the zero-argument reading at R=0 (complemented); "
            "compare survival_ratio draws against zeta_direct for the alternative"
        ),
    }
    with open(outdir / "aggregates.json", "w", newline="") as fh:
        json.dump({"command": "limits", "config": cfg, "aggregates": agg}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    manifest.outputs = ["limits.csv", "aggregates.json", "manifest.json"]
    manifest.finished_utc = _now()
    manifest.write(outdir / "manifest.json")
    return 0


def _run_selftest() -> int:
    checks = run_selftest()
    ok_all = True
    for name, ok, detail in checks:
        tag = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail and not ok else ""
        print(f"{tag}  {name}{suffix}")
        ok_all &= ok
    print(f"{sum(ok for _, ok, _ in checks)}/{len(checks)} checks passed")
    return 0 if ok_all else 3


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return _run_selftest()
        if args.command == "theorem1":
            return _run_experiment(args, run_theorem1)
        if args.command == "theorem2":
            return _run_experiment(args, run_theorem2)
        if args.command == "diagnostics":
            return _run_experiment(args, run_diagnostics)
        if args.command == "fluctuation":
            return _run_fluctuation(args)
        if args.command == "limits":
            return _run_limits(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalBreakdownError, AcceptanceStarvationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
