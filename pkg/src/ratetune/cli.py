"""Command-line entry point.

    ratetune gen-schedule --signatures 200 --days 1000 --seed 7 --out sched.csv
    ratetune simulate --schedule sched.csv --theta 0.1 --beta 1 --out run/
    ratetune sweep --config sweep.txt --out sweep/
    ratetune selftest

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
Command-line flags override file values.  See ``CONFIG_KEYS`` for the keys.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .inference import InferenceConfig
from .model import MinRatePolicy, ModelError, WeightPolicy
from .plots import PLOT_KINDS, emit_plots
from .reporting import cell_stem, write_days, write_summaries
from .schedule import ScheduleError, generate_schedule, parse_schedule, write_schedule
from .simulation import Grid, SimConfig, SimulationError, run_simulation, summarize, sweep
from .traces import TraceError, TraceParams

log = logging.getLogger("ratetune")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _overlap(text: str) -> tuple[bool, ...]:
    t = text.strip().lower()
    if t == "both":
        return (True, False)
    if t in ("on", "true", "1"):
        return (True,)
    if t in ("off", "false", "0"):
        return (False,)
    raise ValueError("expected on, off or both")


def _switch(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError("expected on or off")


def _severity_table(text: str) -> dict[int, float]:
    """``1:0.05;2:0.1`` -> {1: 0.05, 2: 0.1}."""
    out = {}
    for item in text.replace(",", ";").split(";"):
        if item.strip():
            sev, val = item.split(":")
            out[int(sev)] = float(val)
    return out


CONFIG_KEYS: dict[str, Callable[[str], object]] = {
    "schedule": str,
    "out": str,
    "theta": _floats,
    "beta": _floats,
    "overlap": _overlap,
    "seed": int,
    "plots": _switch,
    "update_period": int,
    "days": int,
    "workers": int,
    "normalization": str,
    "replicate": str,
    "timing": _switch,
    "weight_policy": str,
    "weight_w0": float,
    "weight_delta": float,
    "weight_max_age_days": int,
    "min_rate_form": str,
    "min_rate_default": float,
    "min_rate_table": _severity_table,
    "y0": float,
    "floor": float,
    "rho": float,
    "jitter": float,
    "max_iterations": int,
    "damping": float,
    "tolerance": float,
    "timeout": float,
}

DEFAULTS: dict[str, object] = {
    "out": "report",
    "theta": (0.1,),
    "beta": (1.0,),
    "overlap": (True,),
    "seed": 0,
    "plots": True,
    "update_period": 3,
    "workers": 1,
    "normalization": "conventional",
    "replicate": "mass",
    "timing": True,
    "weight_policy": "exponential",
    "weight_w0": 1.0,
    "weight_delta": 0.9,
    "weight_max_age_days": 30,
    "min_rate_form": "lower_bound",
    "min_rate_default": 0.0,
    "min_rate_table": {},
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def parse_config(path) -> dict[str, object]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


@dataclass(frozen=True)
class RunConfig:
    base: SimConfig
    grid: Grid
    schedule_in: Path
    report_dir: Path
    plots: bool
    workers: int = 1


def build_run_config(values: dict[str, object]) -> RunConfig:
    v = {**DEFAULTS, **values}
    if "schedule" not in v:
        raise ConfigError("no schedule given (use --schedule or schedule = PATH)")
    try:
        weight = WeightPolicy(
            v["weight_policy"],
            max_age_days=v["weight_max_age_days"],
            w0=v["weight_w0"],
            delta=v["weight_delta"],
        )
        min_rate = MinRatePolicy(v["min_rate_form"], v["min_rate_table"], v["min_rate_default"])
        trace_kw = {k: v[k] for k in ("y0", "floor", "rho", "jitter") if k in v}
        infer_kw = {k: v[k] for k in ("max_iterations", "damping", "tolerance", "timeout") if k in v}
        base = SimConfig(
            theta=v["theta"][0],
            beta=v["beta"][0],
            overlap=v["overlap"][0],
            update_period=v["update_period"],
            weight_policy=weight,
            min_rate_policy=min_rate,
            normalization=v["normalization"],
            seed=v["seed"],
            days=v.get("days"),
            trace_params=TraceParams(**trace_kw),
            inference=InferenceConfig(**infer_kw),
            replicate=v["replicate"],
            timing=v["timing"],
        )
        grid = Grid(v["theta"], v["beta"], v["overlap"])
        for _, t, b in grid.cells():
            replace(base, theta=t, beta=b)  # validates every cell up front
    except (ModelError, SimulationError, TraceError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if v["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return RunConfig(base, grid, Path(v["schedule"]), Path(v["out"]), v["plots"], v["workers"])


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--schedule", metavar="PATH", help="signature schedule CSV")
    p.add_argument("--out", metavar="DIR", help="report directory")
    p.add_argument("--theta", metavar="LIST", help="comma-separated FP/TP volume ratios")
    p.add_argument("--beta", metavar="LIST", help="comma-separated FN cost relative to FP")
    p.add_argument("--overlap", choices=("on", "off", "both"))
    p.add_argument("--seed", metavar="N")
    p.add_argument("--plots", choices=("on", "off"))
    p.add_argument("--update-period", metavar="N", dest="update_period")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratetune",
        description="Tune classifier sampling rates and replay signature schedules.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    sim = sub.add_parser("simulate", help="run one (theta, beta, overlap) cell")
    _add_run_flags(sim)
    sw = sub.add_parser("sweep", help="run every cell of a theta x beta x overlap grid")
    _add_run_flags(sw)

    gen = sub.add_parser("gen-schedule", help="write a random synthetic schedule")
    gen.add_argument("--signatures", type=int, required=True)
    gen.add_argument("--days", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", metavar="PATH", help="output file (default: stdout)")

    st = sub.add_parser("selftest", help="run reduced oracle checks")
    st.add_argument("--seed", type=int, default=0)
    return parser


_FLAG_KEYS = ("schedule", "out", "theta", "beta", "overlap", "seed", "plots", "update_period")


def _gather(args: argparse.Namespace) -> dict[str, object]:
    values = parse_config(args.config) if args.config else {}
    for key in _FLAG_KEYS:
        raw = getattr(args, key)
        if raw is None:
            continue
        try:
            values[key] = CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"--{key.replace('_', '-')}: {exc}") from None
    return values


# ---------------------------------------------------------------------------
# commands


def _load_schedule(rc: RunConfig):
    try:
        return parse_schedule(rc.schedule_in)
    except OSError as exc:
        raise ConfigError(f"cannot read schedule {rc.schedule_in}: {exc.strerror}") from None


def _plots(rc: RunConfig, summaries, solve_ms) -> None:
    if rc.plots:
        for path in emit_plots(summaries, rc.report_dir, PLOT_KINDS, solve_ms):
            log.info("wrote %s", path)


def _overlap_label(o: bool) -> str:
    return "overlap" if o else "no overlap"


def cmd_simulate(args) -> int:
    rc = build_run_config(_gather(args))
    if len(rc.grid.cells()) != 1:
        raise ConfigError("simulate takes a single theta, beta and overlap; use sweep for grids")
    schedule = _load_schedule(rc)
    report = run_simulation(schedule, rc.base)
    rc.report_dir.mkdir(parents=True, exist_ok=True)
    write_days(report, rc.report_dir / "days.csv")
    summary = summarize(report)
    write_summaries([summary], rc.report_dir / "summary.csv")
    _plots(rc, [summary], {_overlap_label(rc.base.overlap): report.solve_ms})
    print(f"wrote {rc.report_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    rc = build_run_config(_gather(args))
    schedule = _load_schedule(rc)
    reports = sweep(schedule, rc.base, rc.grid, rc.workers)
    day_dir = rc.report_dir / "days"
    day_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    solve_ms: dict[str, list[float]] = {}
    for (theta, beta, overlap), report in reports.items():
        write_days(report, day_dir / f"{cell_stem(theta, beta, overlap)}.csv")
        summaries.append(summarize(report))
        solve_ms.setdefault(_overlap_label(overlap), []).extend(report.solve_ms)
    write_summaries(summaries, rc.report_dir / "summary.csv")
    _plots(rc, summaries, solve_ms)
    print(f"wrote {len(summaries)} cells to {rc.report_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_gen_schedule(args) -> int:
    if args.signatures < 0:
        raise ConfigError("--signatures must be >= 0")
    schedule = generate_schedule(args.signatures, args.days, args.seed)
    if args.out:
        write_schedule(schedule, args.out)
    else:
        from .schedule import format_schedule

        sys.stdout.write(format_schedule(schedule))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(seed=args.seed) else EXIT_FAILURE


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "gen-schedule": cmd_gen_schedule,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"ratetune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScheduleError, SimulationError, TraceError, ModelError) as exc:
        print(f"ratetune: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"ratetune: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
