"""Command-line front end: simulate, fit, evaluate and bench."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, with_overrides
from .errors import ListDTRError
from .io import read_wide_csv, write_wide_csv
from .model import deserialize_regime, render_list, serialize_regime
from .sim import BENCH_HEADER, SCENARIOS, ScenarioSpec, generate, monte_carlo_value, run_benchmark

log = logging.getLogger("listdtr")


class CliError(ListDTRError):
    code = "E_USAGE"


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return with_overrides(cfg, seed=getattr(args, "seed", None), threads=getattr(args, "threads", None))


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from None


def cmd_simulate(args) -> int:
    data = generate(ScenarioSpec(args.scenario, args.n, args.seed))
    try:
        write_wide_csv(data, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {data.n} trajectories to {args.out}")
    return 0


def cmd_fit(args) -> int:
    from .pipeline import fit_regime
    from .plotting import coverage_figure

    cfg = _config(args)
    data = read_wide_csv(args.data, cfg.missing, cfg.id_column)
    if data.n == 0:
        raise CliError(f"{args.data}: no complete rows to fit")
    fit = fit_regime(data, cfg.fit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "regime.json", serialize_regime(fit.regime) + "\n")
    report = fit.report()
    report["n_rows"] = data.n
    _write(out / "report.json", json.dumps(report, indent=2, default=str) + "\n")
    text = "\n\n".join(f"Stage {t}:\n" + render_list(fit.regime[t], data.history_names(t))
                       for t in range(1, data.T + 1))
    _write(out / "regime.txt", text + "\n")
    coverage_figure(fit.stages, out / "coverage.png")
    print(text)
    return 0


def cmd_evaluate(args) -> int:
    try:
        text = Path(args.regime).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.regime}: {exc.strerror}") from None
    regime = deserialize_regime(text)
    value = monte_carlo_value(ScenarioSpec(args.scenario, args.n_test), regime, args.n_test, args.seed)
    print(f"{value:.6f}")
    if args.out:
        _write(Path(args.out), json.dumps({"scenario": args.scenario, "n_test": args.n_test,
                                           "seed": args.seed, "value": value}, indent=2) + "\n")
    return 0


def _split(text, cast):
    return [cast(s.strip()) for s in str(text).split(",") if s.strip()]


def cmd_bench(args) -> int:
    from .plotting import benchmark_figure

    scenarios = _split(args.scenario, str)
    sizes = _split(args.n, int)
    if len(sizes) == 1:
        sizes = sizes * len(scenarios)
    if len(sizes) != len(scenarios):
        raise CliError("--n takes one size or one size per scenario")
    for s in scenarios:
        ScenarioSpec(s, 0)
    cfg = _config(args)
    reports = []
    out = Path(args.out)
    lines = [BENCH_HEADER]
    for scenario, n in zip(scenarios, sizes):
        rep = run_benchmark(scenario, n, args.replications, cfg.fit, args.n_test, cfg.seed,
                            workers=cfg.threads)
        reports.append(rep)
        lines.append(rep.csv_row())
        for r, err in rep.failures:
            print(f"replication {r} of scenario {scenario} failed: {err}", file=sys.stderr)
        _write(out, "\n".join(lines) + "\n")
        print(lines[-1], flush=True)
    benchmark_figure(reports, out.with_suffix(".png"))
    failed = sum(len(r.failures) for r in reports)
    if failed:
        raise CliError(f"{failed} replication(s) failed; see the messages above")
    return 0


class _Parser(argparse.ArgumentParser):
    """Usage errors become a single ``ERROR E_USAGE:`` line instead of argparse's banner."""

    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="listdtr",
                     description="Decision-list treatment regimes via kernel ridge Q-learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated data set as wide CSV")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate a regime from a wide CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="Monte Carlo value of a regime under a scenario")
    p.add_argument("regime", help="regime JSON file")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--n-test", dest="n_test", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="benchmark rows: generate, fit and evaluate repeatedly")
    p.add_argument("--scenario", required=True, help="scenario id or comma-separated ids")
    p.add_argument("--n", required=True, help="sample size, or one per scenario")
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--n-test", dest="n_test", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="CSV path; a .png figure is written beside it")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ListDTRError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR E_IO: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
