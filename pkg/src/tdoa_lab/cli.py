"""
Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical/degeneracy error or
failed check, 3 refusal to overwrite existing results, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import crb, spectral
from .errors import ConfigError, DegenerateGeometryError, NumericalConsistencyError
from .estimator import GaussNewtonConfig, localize, results_to_csv
from .experiments import CampaignConfig, ExperimentSummary, derive_seed, run_campaign
from .geometry import as_source, placement_from_config
from .jacobians import build_blocks, dump_blocks_csv
from .model import SPEED_OF_SOUND, NoiseModel, simulate_measurements

logger = logging.getLogger("tdoa_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OVERWRITE, EXIT_INTERRUPT = 0, 1, 2, 3, 130
SEED_ENV = "TDOA_LAB_SEED"

_SCENARIO_KEYS = {"schema", "placement", "source", "noise", "estimator"}
_NOISE_KEYS = {"sigma_t", "sigma_loc", "c"}


class OverwriteRefused(Exception):
    pass


def preset_names() -> list[str]:
    root = resources.files("tdoa_lab") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(name: str):
    """A filesystem path if it exists, otherwise a bundled preset by name."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-5] if name.endswith(".json") else name
    preset = resources.files("tdoa_lab") / "presets" / f"{stem}.json"
    if preset.is_file():
        return preset
    raise ConfigError(f"config {name!r} not found (bundled presets: {', '.join(preset_names())})")


def read_json(name: str) -> dict:
    path = resolve_config_path(name)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


class Scenario:
    """One geometry + noise setting, as used by ``report``, ``lemmas`` and ``localize``."""

    def __init__(self, data: dict, base_dir: Path | None = None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("schema") != 1:
            raise ConfigError(f"schema: expected 1, got {data.get('schema')!r}")
        unknown = set(data) - _SCENARIO_KEYS
        if unknown:
            raise ConfigError(f"unknown field(s) {sorted(unknown)}")
        if "placement" not in data:
            raise ConfigError("placement: missing required field")
        if "noise" not in data or not isinstance(data["noise"], dict):
            raise ConfigError("noise: missing required field")
        noise = data["noise"]
        unknown = set(noise) - _NOISE_KEYS
        if unknown:
            raise ConfigError(f"noise: unknown field(s) {sorted(unknown)}")
        for key in ("sigma_t", "sigma_loc"):
            if key not in noise:
                raise ConfigError(f"noise.{key}: missing required field")
        try:
            self.noise = NoiseModel(float(noise["sigma_t"]), float(noise["sigma_loc"]), float(noise.get("c", SPEED_OF_SOUND)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"noise: {exc}") from exc
        self.array = placement_from_config(data["placement"], base_dir)
        try:
            self.source = as_source(data.get("source", [0.0] * self.array.dim), self.array.dim)
        except ValueError as exc:
            raise ConfigError(f"source: {exc}") from exc
        est = data.get("estimator", {})
        unknown = set(est) - {"max_iter", "grad_tol", "damping", "init"}
        if unknown:
            raise ConfigError(f"estimator: unknown field(s) {sorted(unknown)}")
        self.init = est.get("init", "bbox")
        if self.init not in ("bbox", "truth"):
            raise ConfigError("estimator.init: must be 'bbox' or 'truth'")
        self.gn = GaussNewtonConfig(
            max_iter=int(est.get("max_iter", 100)),
            grad_tol=float(est.get("grad_tol", 1e-9)),
            damping=bool(est.get("damping", True)),
        )

    @classmethod
    def load(cls, name: str) -> "Scenario":
        path = resolve_config_path(name)
        base = path.parent if isinstance(path, Path) else None
        return cls(read_json(name), base)


def _guard(out_dir: Path, names: list[str], force: bool):
    existing = [n for n in names if (out_dir / n).exists()]
    if existing and not force:
        raise OverwriteRefused(f"refusing to overwrite {', '.join(existing)} in {out_dir} (use --force)")


def _seed(args, default: int) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env!r}") from exc
    return default


# -- subcommands ----------------------------------------------------------------------


def cmd_report(args) -> int:
    sc = Scenario.load(args.config)
    out = Path(args.out)
    names = ["report.json", "report.csv"] + (["j1.csv", "j2.csv"] if args.dump_jacobians else [])
    _guard(out, names, args.force)
    rep = crb.equality_report(sc.source, sc.array, sc.noise)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "report.csv").write_text(rep.to_csv())
    if args.dump_jacobians:
        dump_blocks_csv(build_blocks(sc.source, sc.array, sc.noise.c), out)
    if args.json:
        print(rep.to_json())
    else:
        print(f"N={rep.n} D={rep.dim} K={rep.k_factor:.6g}")
        print(f"tr(C')={rep.trace_c_prime:.6e} m^2  tr(C1)={rep.trace_c1:.6e} m^2  gap={rep.gap:.6e} m^2")
        print(f"(1+NK) tr(C')={(1 + rep.n * rep.k_factor) * rep.trace_c_prime:.6e} m^2  relative residual={rep.equality_residual:.3e}")
    return EXIT_OK


def cmd_lemmas(args) -> int:
    sc = Scenario.load(args.config)
    rep = spectral.spectral_report(sc.source, sc.array, sc.noise)
    passed = rep.passed()
    if args.out:
        out = Path(args.out)
        _guard(out, ["spectral.json"], args.force)
        out.mkdir(parents=True, exist_ok=True)
        (out / "spectral.json").write_text(rep.to_json() + "\n")
    if args.json:
        print(rep.to_json())
    else:
        rows = [
            ("lemma1", "max |sv - sqrt(N)/c| / (sqrt(N)/c)", rep.lemma1_residual, spectral.LEMMA1_TOL),
            ("lemma2", "max |sv(U2^T U1) - 1|", rep.lemma2_residual, spectral.LEMMA2_TOL),
            ("b_property", "||B^T B - (N/c^2) B|| / (N/c^2 ||B||)", rep.b_property_residual, spectral.B_PROPERTY_TOL),
            ("l_identity", "||L - NK I|| / (NK)", rep.l_matrix_residual, spectral.L_IDENTITY_TOL),
        ]
        print(f"{'check':<12} {'quantity':<40} {'residual':>11} {'tol':>8}  result")
        for key, what, val, tol in rows:
            print(f"{key:<12} {what:<40} {val:>11.3e} {tol:>8.0e}  {'PASS' if passed[key] else 'FAIL'}")
    return EXIT_OK if all(passed.values()) else EXIT_NUMERIC


def cmd_localize(args) -> int:
    sc = Scenario.load(args.config)
    seed = _seed(args, 0)
    trials = args.trials or 1
    out = Path(args.out)
    _guard(out, ["estimates.csv", "localize.json"], args.force)
    rows = []
    for k in range(trials):
        tseed = derive_seed(seed, k)
        rng = np.random.default_rng(tseed)
        bundle = simulate_measurements(sc.source, sc.array, sc.noise, int(rng.integers(2**63)))
        res = localize(bundle, sc.noise, rng, init=sc.init, truth_source=sc.source, config=sc.gn)
        rows.append((k, tseed, res))
    conv = [r for _, _, r in rows if r.converged]
    sq = [float(np.sum((r.source_estimate - sc.source) ** 2)) for r in conv]
    summary = {
        "trials": trials,
        "seed": seed,
        "converged": len(conv),
        "mse": float(np.mean(sq)) if sq else None,
    }
    if sc.noise.sigma_t > 0:
        summary["tr_c1"] = crb.equality_report(sc.source, sc.array, sc.noise).trace_c1
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimates.csv").write_text(results_to_csv(rows))
    (out / "localize.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.json:
        print(json.dumps(summary))
    else:
        print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def _campaign(args, default_config: str | None, expected: str | None) -> int:
    name = args.config or default_config
    if name is None:
        raise ConfigError("--config is required")
    cfg = CampaignConfig.from_dict(read_json(name))
    if expected is not None and cfg.experiment != expected:
        raise ConfigError(f"experiment: expected {expected!r}, got {cfg.experiment!r}")
    changes = {"seed": _seed(args, cfg.seed)}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.parallelism is not None:
        changes["parallelism"] = args.parallelism
    cfg = cfg.replace(**changes)
    out = Path(args.out)
    _guard(out, _planned_outputs(cfg), args.force)
    summary = run_campaign(cfg)
    summary.write(out)
    _print_summary(summary, args.json)
    if summary.partial:
        return EXIT_INTERRUPT
    return EXIT_OK if summary.checks.get("passed") else EXIT_NUMERIC


def _planned_outputs(cfg: CampaignConfig) -> list[str]:
    names = ["records.csv", "summary.json"]
    if cfg.experiment == "equality":
        names.append("equality_err.dat")
    elif cfg.experiment == "trace_compare":
        names += [f"trace_sloc_{float(v)!r}.dat" for v in cfg.sigma_loc]
    else:
        names.append("mse.dat")
    return names


def _print_summary(summary: ExperimentSummary, as_json: bool):
    if as_json:
        print(json.dumps(summary.summary_dict(), sort_keys=True))
        return
    for line in summary.arm_lines():
        print(line)
    print(f"checks: {'PASS' if summary.checks.get('passed') else 'FAIL'}" + (" (partial)" if summary.partial else ""))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdoa-lab", description="TDOA localization bounds and Monte Carlo campaigns.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True, campaign=False):
        p.add_argument("--config", required=config_required and not campaign, default=None, help="config file or bundled preset name")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing result files")
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--parallelism", type=int, default=None)
        return p

    p = common(sub.add_parser("report", help="CRB traces and equality residual for one configuration"))
    p.add_argument("--dump-jacobians", action="store_true", help="also write j1.csv and j2.csv")
    p.set_defaults(func=cmd_report)
    p = common(sub.add_parser("lemmas", help="spectral checks on one configuration"))
    p.set_defaults(func=cmd_lemmas, out=None)
    common(sub.add_parser("localize", help="Gauss-Newton localization on simulated measurements")).set_defaults(func=cmd_localize)
    common(sub.add_parser("verify-equality", help="equality Monte Carlo campaign"), campaign=True).set_defaults(
        func=lambda a: _campaign(a, "iv-a-desk", "equality")
    )
    common(sub.add_parser("trace-compare", help="placement trace comparison campaign"), campaign=True).set_defaults(
        func=lambda a: _campaign(a, "iv-b-2d", "trace_compare")
    )
    common(sub.add_parser("run-campaign", help="run any campaign config"), campaign=True).set_defaults(
        func=lambda a: _campaign(a, None, None)
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateGeometryError, NumericalConsistencyError) as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OverwriteRefused as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_OVERWRITE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
