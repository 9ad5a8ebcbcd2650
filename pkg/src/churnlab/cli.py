"""Command line entry point: ``churnlab generate | run | report | plot``.

Exit codes: 0 success, 1 runtime failure (including a failed leakage
audit), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .dataset import GeneratorConfig, generate_synthetic, load_csv, save_csv
from .logit import C_GRID
from .lstm import LstmHyper, lstm_grid
from .metrics import EmpcParams, read_lift_curve_csv
from .pipeline import (
    SMOKE_LSTM_GRID,
    SPEC_BY_KEY,
    CvConfig,
    LeakageError,
    improvement,
    run_experiment,
    select_specs,
)
from .plotting import lift_chart_svg

log = logging.getLogger("churnlab")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _add_generator_flags(p: argparse.ArgumentParser, defaults: GeneratorConfig) -> None:
    p.add_argument("--n", type=int, default=None, help=f"customers (default {defaults.n_customers})")
    p.add_argument("--churn-rate", type=float, default=None, help=f"default {defaults.churn_rate}")
    p.add_argument("--n-static", type=int, default=None, help=f"default {defaults.n_static}")
    p.add_argument("--signal-strength", type=float, default=None, help=f"default {defaults.signal_strength}")
    p.add_argument("--noise-scale", type=float, default=None, help=f"default {defaults.noise_scale}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="churnlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic panel CSV")
    _add_generator_flags(g, GeneratorConfig())
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output CSV path")

    r = sub.add_parser("run", help="run the nested cross-validation experiment")
    r.add_argument("--config", help="JSON config file; command line flags override it")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--panel", help="panel CSV (otherwise a synthetic panel is generated)")
    src.add_argument("--generate", action="store_true", help="generate the panel from generator settings")
    _add_generator_flags(r, GeneratorConfig())
    r.add_argument("--seed", type=int, default=None, help="master seed (also the generator seed)")
    r.add_argument("--out", default=None, help="output directory (default results)")
    r.add_argument("--specs", type=_csv_list, default=None,
                   help="comma-separated model keys: " + ",".join(SPEC_BY_KEY))
    r.add_argument("--grid", choices=("smoke", "full"), default=None,
                   help="LSTM grid: reduced smoke grid (default) or the full grid")
    r.add_argument("--c-grid", type=_float_list, default=None, help="comma-separated C values")
    r.add_argument("--outer-k", type=int, default=None)
    r.add_argument("--inner-k", type=int, default=None)
    r.add_argument("--stack-k", type=int, default=None)
    r.add_argument("--ratio", type=int, default=None, help="non-churners kept per churner")
    r.add_argument("--norm-quarter", choices=("preceding", "final"), default=None)
    r.add_argument("--no-agg-diff", action="store_true", default=None,
                   help="drop the mean-first-difference columns from the aggregate block")
    for name in ("clv", "d", "f", "alpha", "beta"):
        r.add_argument(f"--{name}", type=float, default=None, help="EMPC parameter")

    rep = sub.add_parser("report", help="print the report table of a finished run")
    rep.add_argument("--results", required=True, help="run output directory")

    pl = sub.add_parser("plot", help="write one SVG lift chart per outer fold")
    pl.add_argument("--results", required=True, help="run output directory")
    pl.add_argument("--models", type=_csv_list, default=None,
                    help="comma-separated model labels or keys to draw (default: all)")
    pl.add_argument("--out", default=None, help="SVG directory (default <results>/plots)")
    return parser


# --------------------------------------------------------------------------
# generate


def _generator_config(args, base: dict | None = None, seed: int | None = None) -> GeneratorConfig:
    cfg = asdict(GeneratorConfig())
    cfg.update(base or {})
    for flag, key in (("n", "n_customers"), ("churn_rate", "churn_rate"), ("n_static", "n_static"),
                      ("signal_strength", "signal_strength"), ("noise_scale", "noise_scale")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if seed is not None:
        cfg["seed"] = seed
    return GeneratorConfig(**cfg)


def cmd_generate(args) -> int:
    config = _generator_config(args, seed=args.seed)
    panel = generate_synthetic(config)
    save_csv(panel, args.out)
    print(f"wrote {args.out}: {len(panel)} customers, {panel.n_churners} churners "
          f"({panel.churn_rate:.5%}), {len(panel) - panel.n_churners} non-churners")
    return 0


# --------------------------------------------------------------------------
# run


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_run_config(args) -> dict:
    """Merge defaults, the optional JSON config file and command line flags."""
    cfg: dict = {
        "panel": None,
        "generator": asdict(GeneratorConfig()),
        "cv": asdict(CvConfig()),
        "empc": asdict(EmpcParams()),
        "grids": {"c": list(C_GRID), "lstm": "smoke"},
        "specs": list(SPEC_BY_KEY),
        "out": "results",
    }
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(loaded) - set(cfg) - {"panel_sha256", "lstm_grid_resolved"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, value in loaded.items():
            if isinstance(cfg.get(key), dict) and isinstance(value, dict):
                extra = set(value) - set(cfg[key])
                if extra:
                    raise ValueError(f"unknown keys in config section {key!r}: {sorted(extra)}")
                cfg[key].update(value)
            elif key in cfg:
                cfg[key] = value
    if args.panel:
        cfg["panel"] = args.panel
    if args.generate:
        cfg["panel"] = None
    cfg["generator"] = asdict(_generator_config(args, cfg["generator"]))
    if args.seed is not None:
        cfg["cv"]["master_seed"] = args.seed
        cfg["generator"]["seed"] = args.seed
    for flag, key in (("outer_k", "outer_k"), ("inner_k", "inner_k"), ("stack_k", "stack_k"),
                      ("ratio", "undersample_ratio"), ("norm_quarter", "quarter")):
        v = getattr(args, flag)
        if v is not None:
            cfg["cv"][key] = v
    if args.no_agg_diff:
        cfg["cv"]["agg_with_diff"] = False
    for name in ("clv", "d", "f", "alpha", "beta"):
        v = getattr(args, name)
        if v is not None:
            cfg["empc"][name] = v
    if args.grid is not None:
        cfg["grids"]["lstm"] = args.grid
    if args.c_grid is not None:
        cfg["grids"]["c"] = args.c_grid
    if args.specs is not None:
        cfg["specs"] = args.specs
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def _lstm_grid_from(value) -> list[LstmHyper]:
    if value == "smoke":
        return list(SMOKE_LSTM_GRID)
    if value == "full":
        return lstm_grid()
    if isinstance(value, list):
        return [LstmHyper(**{k: v for k, v in h.items() if k != "seed"}) for h in value]
    raise ValueError(f"grids.lstm must be 'smoke', 'full' or a list of settings, got {value!r}")


def cmd_run(args) -> int:
    cfg = resolve_run_config(args)
    specs = select_specs(cfg["specs"])
    cv = CvConfig(**cfg["cv"])
    empc_params = EmpcParams(**cfg["empc"])
    grid = _lstm_grid_from(cfg["grids"]["lstm"])
    if cfg["panel"]:
        panel = load_csv(cfg["panel"])
        cfg["panel_sha256"] = _sha256(cfg["panel"])
    else:
        panel = generate_synthetic(GeneratorConfig(**cfg["generator"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfg["lstm_grid_resolved"] = [
        {"hidden_units": h.hidden_units, "learning_rate": h.learning_rate, "epochs": h.epochs,
         "batch_size": h.batch_size} for h in grid]
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")

    log.info("panel: %d customers, %d churners", len(panel), panel.n_churners)
    result = run_experiment(panel, specs, cfg["grids"]["c"], grid, cv, empc_params)
    result.write(out)
    print(format_report(read_report(out / "report.csv")))
    print(f"leakage audit: {len(result.audit.trainings)} LSTM fits, "
          f"{sum(len(p[2]) for p in result.audit.predictions)} scored rows, 0 violations")
    return 0


# --------------------------------------------------------------------------
# report


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def format_report(rows: list[dict]) -> str:
    width = max([len("Model")] + [len(r["model"]) for r in rows])
    lines = [f"{'Model':<{width}}  {'AUC':>7}  {'Lift':>7}  {'EMPC':>8}  hyperparameters (selection)"]
    for r in rows:
        lines.append(f"{r['model']:<{width}}  {float(r['AUC']):7.3f}  {float(r['Lift']):7.3f}  "
                     f"{float(r['EMPC']):8.4f}  {r['hyperparameters']} ({r['selection']})")
    by_key = {r["key"]: r for r in rows}
    if "static" in by_key and "static_lstm" in by_key:
        base, new = by_key["static"], by_key["static_lstm"]
        if float(base["Lift"]) > 0:
            gain = improvement(float(new["Lift"]), float(base["Lift"]))
            lines.append(f"lift gain of 'Static + LSTM prob.' over 'Only static': {gain:+.1%}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.results) / "report.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `churnlab run` first")
    print(format_report(read_report(path)))
    return 0


# --------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    results = Path(args.results)
    files = sorted((results / "lift_curves").glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no lift curve files: expected {results / 'lift_curves'}/outer_fold_<k>.csv")
    out = Path(args.out) if args.out else results / "plots"
    # read and validate everything before writing any SVG
    charts = []
    label_of = {s.key: s.label for s in SPEC_BY_KEY.values()}
    for path in files:
        curves = read_lift_curve_csv(path)
        if args.models:
            wanted = [label_of.get(m, m) for m in args.models]
            missing = [m for m in wanted if m not in curves]
            if missing:
                raise ValueError(f"{path}: no curve for {missing}")
            curves = {m: curves[m] for m in wanted}
        if any(len(c) == 0 for c in curves.values()):
            raise ValueError(f"{path}: empty lift curve")
        title = path.stem.replace("_", " ").capitalize()
        charts.append((out / f"{path.stem}.svg", lift_chart_svg(curves, title)))
    out.mkdir(parents=True, exist_ok=True)
    for target, svg in charts:
        target.write_text(svg, encoding="utf-8")
        print(f"wrote {target}")
    return 0


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "report": cmd_report, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except LeakageError as exc:
        print(f"churnlab: leakage audit failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"churnlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
