"""Command-line entry point: ``ddstop {backtest,calibrate,report,synth}``.

Settings come from an optional INI file (``--config``) whose sections are
``[backtest]``, ``[calibrate]``, ``[synth]`` and ``[assets]`` (``name = csv
path``); command-line flags override file values.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .analytics import (
    AssetComparison,
    aggregate,
    delta_nlv,
    error_analysis,
    read_comparison_csv,
    scatter_data,
    write_comparison_csv,
    write_scatter_csv,
)
from .backtest import BacktestConfig, Mode, calibrate_as_of, run_backtest
from .errors import DDStopError, InvalidParameter
from .market_data import (
    MINUTES_PER_DAY,
    PlantedSpec,
    generate_gbm,
    generate_planted,
    load_csv,
    parse_timestamp,
    save_csv,
)
from .rolling import RollingParams

log = logging.getLogger("ddstop")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64

ALL_MODES = [Mode.SIGNAL_ONLY, Mode.T_METHOD, Mode.R_METHOD, Mode.BUY_AND_HOLD]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- configuration -----------------------------------------------------------


def _read_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path is not None:
        if not cfg.read(path, encoding="utf-8"):
            raise UsageError(f"cannot read config file {path}")
    return cfg


def _setting(args, cfg, section, name, cast=str, default=None):
    """Flag value if given, else the config-file value, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if cfg.has_option(section, name):
        raw = cfg.get(section, name)
        try:
            return cast(raw)
        except ValueError as exc:
            raise UsageError(f"[{section}] {name}: {exc}") from None
    return default


def _parse_bool(text):
    return configparser.ConfigParser.BOOLEAN_STATES[str(text).strip().lower()]


def _parse_recalibrate(text) -> Optional[int]:
    """``per-entry`` or a positive number of hourly points (``24``, ``24h``, ``interval:24``)."""
    text = str(text).strip().lower()
    if text in ("per-entry", "entry", "per_entry"):
        return None
    text = text.removeprefix("interval:").removesuffix("h")
    value = int(text)
    if value < 1:
        raise ValueError("recalibration interval must be >= 1")
    return value


def _parse_modes(values) -> list[Mode]:
    if not values:
        return list(ALL_MODES)
    modes = []
    for v in values:
        for part in str(v).split(","):
            part = part.strip()
            if not part:
                continue
            if part.lower() == "all":
                chosen = ALL_MODES
            else:
                chosen = [Mode.parse(part)]
            modes.extend(m for m in chosen if m not in modes)
    return [m for m in ALL_MODES if m in modes]


def build_config(args, cfg, section="backtest") -> BacktestConfig:
    n_bins = _setting(args, cfg, section, "n_bins", int)
    n_policy = _setting(args, cfg, section, "n_policy", str, "fixed" if n_bins is not None else "sqrt")
    try:
        return BacktestConfig(
            initial_cash=_setting(args, cfg, section, "initial_cash", float, 100_000.0),
            sma_period=_setting(args, cfg, section, "sma_period", int, 20),
            n_policy=n_policy,
            n_bins=n_bins,
            rolling=RollingParams(
                l=_setting(args, cfg, section, "horizon_l", int, 20),
                m=_setting(args, cfg, section, "window_m", int, 250),
            ),
            recalibrate_every=_parse_recalibrate(_setting(args, cfg, section, "recalibrate", str, "per-entry")),
            min_corpus=_setting(args, cfg, section, "min_corpus", int, 30),
            include_forced_final_trade=_setting(args, cfg, section, "include_forced_final_trade", _parse_bool, True),
        )
    except (InvalidParameter, ValueError) as exc:
        raise UsageError(str(exc)) from None


# -- backtest ------------------------------------------------------------------


@dataclass(frozen=True)
class AssetSource:
    asset_id: str
    path: Optional[str] = None
    seed: Optional[int] = None
    gbm: dict = field(default_factory=dict)

    def load(self):
        if self.path is not None:
            return load_csv(self.path, self.asset_id)
        return generate_gbm(self.seed, asset_id=self.asset_id, **self.gbm)


@dataclass(frozen=True)
class RunManifest:
    assets: list
    config: BacktestConfig
    modes: list
    output_dir: Path
    parallelism: int = 1


def _gbm_params(args, cfg) -> dict:
    return {
        "p0": _setting(args, cfg, "synth", "p0", float, 100.0),
        "mu": _setting(args, cfg, "synth", "mu", float, 0.05),
        "sigma": _setting(args, cfg, "synth", "sigma", float, 0.2),
        "n_minutes": _setting(args, cfg, "synth", "n_minutes", int, 60 * MINUTES_PER_DAY),
    }


def build_manifest(args, cfg) -> RunManifest:
    names = list(args.asset or [])
    paths = list(args.data or [])
    assets = []
    if paths:
        if names and len(names) != len(paths):
            raise UsageError("--asset and --data must be given the same number of times")
        names = names or [Path(p).stem for p in paths]
        assets = [AssetSource(n, path=p) for n, p in zip(names, paths)]
    elif names:
        seed = _setting(args, cfg, "synth", "seed", int, 0)
        params = _gbm_params(args, cfg)
        assets = [AssetSource(n, seed=seed + i, gbm=params) for i, n in enumerate(names)]
    elif cfg.has_section("assets"):
        assets = [AssetSource(n, path=p) for n, p in cfg.items("assets")]
    if not assets:
        raise UsageError("no assets: pass --data/--asset or an [assets] config section")
    if len({a.asset_id for a in assets}) != len(assets):
        raise UsageError("asset ids must be unique")
    mode_values = args.mode or ([cfg.get("backtest", "modes")] if cfg.has_option("backtest", "modes") else None)
    try:
        modes = _parse_modes(mode_values)
    except InvalidParameter as exc:
        raise UsageError(str(exc)) from None
    out = _setting(args, cfg, "backtest", "out")
    if out is None:
        raise UsageError("--out is required")
    jobs = _setting(args, cfg, "backtest", "jobs", int)
    if jobs is None:
        jobs = min(os.cpu_count() or 1, len(assets))
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return RunManifest(assets, build_config(args, cfg), modes, Path(out), jobs)


def _run_job(job):
    source, config = job
    try:
        return run_backtest(source.load(), config), None
    except (DDStopError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_backtest(manifest: RunManifest) -> int:
    jobs = [(a, replace(manifest.config, mode=m)) for a in manifest.assets for m in manifest.modes]
    if manifest.parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=manifest.parallelism) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(j) for j in jobs]

    out = manifest.output_dir
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    log_lines = []
    for (source, config), (result, error) in zip(jobs, outcomes):
        key = f"{source.asset_id}/{config.mode.value}"
        if error is not None:
            log_lines.append(f"FAIL {key} {error}")
            log.error("%s failed: %s", key, error)
            continue
        result.write_bundle(out / source.asset_id / config.mode.value)
        results[(source.asset_id, config.mode)] = result
        log_lines.append(f"OK {key} final_nlv={result.final_nlv!r} trades={len(result.trades)}")

    rows = []
    for source in manifest.assets:
        base = results.get((source.asset_id, Mode.SIGNAL_ONLY))

        def delta(mode):
            other = results.get((source.asset_id, mode))
            if base is None or other is None:
                return None
            return delta_nlv(other.final_nlv, base.final_nlv)

        rows.append(AssetComparison(
            source.asset_id,
            delta(Mode.T_METHOD),
            delta(Mode.R_METHOD),
            None if base is None else len(base.trades),
        ))
    write_comparison_csv(rows, out / "comparison.csv")
    (out / "run.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    failed = len(jobs) - len(results)
    if failed == len(jobs):
        return EXIT_FAILURE
    return EXIT_PARTIAL if failed else EXIT_OK


# -- calibrate ---------------------------------------------------------------


def cmd_calibrate(series, config: BacktestConfig, method: Mode, as_of=None, out_dir=None) -> tuple[int, dict]:
    """Write ``report.json`` and ``histogram.csv`` (or ``error.json``) to ``out_dir``."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        report = calibrate_as_of(series, config, method, as_of)
    except DDStopError as exc:
        payload = exc.to_dict()
        if out_dir is not None:
            _write_json(payload, out_dir / "error.json")
        return EXIT_FAILURE, payload
    payload = report.to_dict()
    payload["method"] = method.value
    payload["asset"] = series.asset_id
    if out_dir is not None:
        _write_json(payload, out_dir / "report.json")
        report.write_histogram_csv(out_dir / "histogram.csv")
    return EXIT_OK, payload


# -- report ------------------------------------------------------------------


def cmd_report(table_path, out_dir) -> tuple[int, dict]:
    """Aggregate both delta columns and correlate each with trade counts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comparisons = read_comparison_csv(table_path)
    summary = {}
    correlation = {}
    for column in ("TS", "RS"):
        try:
            summary[column] = aggregate(comparisons, column).to_dict()
        except DDStopError as exc:
            summary[column] = exc.to_dict()
        try:
            correlation[column] = error_analysis(comparisons, column).to_dict()
        except DDStopError as exc:
            correlation[column] = exc.to_dict()
        write_scatter_csv(scatter_data(comparisons, column), out_dir / f"scatter_{column.lower()}.csv")
    _write_json(summary, out_dir / "summary.json")
    _write_json(correlation, out_dir / "correlation.json")
    if all("error" in s for s in summary.values()):
        return EXIT_FAILURE, {"summary": summary, "correlation": correlation}
    return EXIT_OK, {"summary": summary, "correlation": correlation}


# -- synth -------------------------------------------------------------------


def cmd_synth(kind: str, seed: int, out_path, params: dict, asset_id: str | None = None) -> dict:
    """Write a synthetic series CSV; planted series also get a ``.json`` sidecar."""
    out_path = Path(out_path)
    asset_id = asset_id or out_path.stem
    if kind == "gbm":
        series = generate_gbm(seed, asset_id=asset_id, **params)
        meta = {"kind": "gbm", "seed": seed, **params}
    elif kind == "planted":
        spec = PlantedSpec(**params)
        series, d_star = generate_planted(seed, spec, asset_id=asset_id)
        meta = {
            "kind": "planted",
            "seed": seed,
            "d_star": d_star,
            "degenerate": spec.degenerate,
            "n_winners": spec.n_winners,
            "n_losers": spec.n_losers,
            **params,
        }
        _write_json(meta, out_path.with_suffix(".json"))
    else:
        raise InvalidParameter(f"unknown synth kind {kind!r}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(series, out_path)
    return meta


# -- argument parsing ----------------------------------------------------------


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_calibration_flags(p):
    p.add_argument("--n-bins", dest="n_bins", type=int)
    p.add_argument("--n-policy", dest="n_policy", choices=["sqrt", "fixed"])
    p.add_argument("--horizon-l", dest="horizon_l", type=int)
    p.add_argument("--window-m", dest="window_m", type=int)
    p.add_argument("--min-corpus", dest="min_corpus", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddstop", description="Drawdown-calibrated trailing stop backtests.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("backtest", help="run (asset, mode) backtests and write result bundles")
    p.add_argument("--config")
    p.add_argument("--asset", action="append", help="asset id (repeatable); synthesized when no --data")
    p.add_argument("--data", action="append", help="price CSV (repeatable)")
    p.add_argument("--mode", action="append", help="SignalOnly, TMethod, RMethod, BuyAndHold or all")
    _add_calibration_flags(p)
    p.add_argument("--recalibrate", help="per-entry or an interval in hourly points")
    p.add_argument("--initial-cash", dest="initial_cash", type=float)
    p.add_argument("--seed", type=int, help="base seed for synthesized assets")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("calibrate", help="compute one stop threshold and its histogram")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--asset")
    p.add_argument("--mode", default="TMethod", help="TMethod or RMethod")
    p.add_argument("--as-of", dest="as_of")
    _add_calibration_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("report", help="aggregate a comparison table")
    p.add_argument("table", nargs="?")
    p.add_argument("--data", help="comparison CSV (alternative to the positional argument)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic price CSV")
    p.add_argument("--config")
    p.add_argument("kind", nargs="?", choices=["gbm", "planted"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--asset")
    p.add_argument("--p0", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--n-minutes", dest="n_minutes", type=int)
    p.add_argument("--d-star", dest="d_star", type=float)
    p.add_argument("--gain", type=float)
    p.add_argument("--loss", type=float)
    p.add_argument("--n-trades", dest="n_trades", type=int)
    p.add_argument("--win-fraction", dest="win_fraction", type=float)
    return parser


def _synth_params(args, cfg, kind):
    if kind == "gbm":
        params = _gbm_params(args, cfg)
    else:
        defaults = PlantedSpec()
        params = {
            "d_star": _setting(args, cfg, "synth", "d_star", float, defaults.d_star),
            "gain": _setting(args, cfg, "synth", "gain", float, defaults.gain),
            "loss": _setting(args, cfg, "synth", "loss", float, defaults.loss),
            "n_trades": _setting(args, cfg, "synth", "n_trades", int, defaults.n_trades),
            "win_fraction": _setting(args, cfg, "synth", "win_fraction", float, defaults.win_fraction),
            "p0": _setting(args, cfg, "synth", "p0", float, defaults.p0),
        }
    return params


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _read_config(getattr(args, "config", None))
        if args.command == "backtest":
            return cmd_backtest(build_manifest(args, cfg))
        if args.command == "calibrate":
            config = build_config(args, cfg, "calibrate")
            method = Mode.parse(args.mode)
            if method not in (Mode.T_METHOD, Mode.R_METHOD):
                raise UsageError("calibrate --mode must be TMethod or RMethod")
            series = load_csv(args.data, args.asset)
            as_of = parse_timestamp(args.as_of) if args.as_of else None
            status, payload = cmd_calibrate(series, config, method, as_of, args.out)
            print(json.dumps(payload, indent=2, sort_keys=True))
            return status
        if args.command == "report":
            table = args.table or args.data
            if table is None:
                raise UsageError("report needs a comparison table path")
            status, payload = cmd_report(table, args.out)
            print(json.dumps(payload, indent=2, sort_keys=True))
            return status
        if args.command == "synth":
            kind = args.kind or _setting(args, cfg, "synth", "kind", str, "gbm")
            seed = _setting(args, cfg, "synth", "seed", int, 0)
            meta = cmd_synth(kind, seed, args.out, _synth_params(args, cfg, kind), args.asset)
            print(json.dumps(meta, sort_keys=True))
            return EXIT_OK
    except (UsageError, InvalidParameter) as exc:
        print(f"ddstop: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DDStopError, OSError) as exc:
        print(f"ddstop: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
