"""``portlab`` command line: fetch, train, backtest, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
error, 4 backtest error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import MODEL_NAMES, RunConfig, load_config
from .data import ReturnPanel, compute_returns, fetch_prices, load_prices, write_prices
from .errors import (BacktestError, ConfigError, DataError, FetchError, PortlabError,
                     StrategyError, TrainingError)
from .strategies import ALL_STRATEGIES, REQUIRED_MODELS, StrategyKind

log = logging.getLogger("portlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN, EXIT_BACKTEST = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
    p.add_argument("--out", help="run directory")
    p.add_argument("--data", help="price CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="portlab", description="Portfolio strategy lab")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("fetch", help="download adjusted closes to a price CSV")
    _common(p)
    p.add_argument("--tickers", help="comma separated symbols")
    p.add_argument("--start")
    p.add_argument("--end")
    p = sub.add_parser("train", help="train models on the pre-test range")
    _common(p)
    p.add_argument("--models", default="all", help=f"comma list of {', '.join(MODEL_NAMES)} or all")
    p = sub.add_parser("backtest", help="backtest strategies over the test range")
    _common(p)
    p.add_argument("--strategies", default="all", help="comma list of strategy names or all")
    p = sub.add_parser("report", help="re-render tables and charts from stored results")
    _common(p)
    p.add_argument("--format", choices=("json", "csv", "md"), default="md")
    return parser


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        overrides["seed"] = str(args.seed)
    if args.out:
        overrides["out"] = args.out
    for flag, key in (("tickers", "data.tickers"), ("start", "data.start"), ("end", "data.end")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _names(text: str, valid: tuple, what: str) -> list[str]:
    if text.strip() == "all":
        return list(valid)
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in valid]
    if bad or not names:
        raise UsageError(f"unknown {what} {bad or text!r}; valid names: {', '.join(valid)}")
    return list(dict.fromkeys(names))


def _returns(args, cfg: RunConfig) -> ReturnPanel:
    path = args.data or str(Path(cfg.out) / "prices.csv")
    if not Path(path).exists():
        raise DataError(f"price file not found: {path}")
    return compute_returns(load_prices(path))


# ---------------------------------------------------------------- commands

def cmd_fetch(args) -> int:
    cfg = _config(args)
    if args.tickers is not None and not [t for t in args.tickers.split(",") if t.strip()]:
        raise UsageError("empty ticker list")
    panel = fetch_prices(cfg.data.tickers, cfg.data.start, cfg.data.end, cfg.data.endpoint,
                         cfg.data.cache_dir or None, timeout=cfg.data.timeout)
    path = Path(args.data or Path(cfg.out) / "prices.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_prices(panel, path)
    print(f"wrote {path}: {len(panel)} rows x {len(panel.tickers)} tickers"
          f" ({panel.repairs} forward-filled cells)")
    return EXIT_OK


def _loss_log(history) -> str:
    if isinstance(history, dict):
        keys = sorted(history)
        n = max(len(history[k]) for k in keys)
        lines = ["epoch," + ",".join(keys)]
        for i in range(n):
            lines.append(f"{i}," + ",".join(repr(history[k][i]) if i < len(history[k]) else ""
                                            for k in keys))
        return "\n".join(lines) + "\n"
    if history and isinstance(history[0], dict):
        keys = sorted(history[0])
        lines = ["iteration," + ",".join(keys)]
        lines += [f"{i}," + ",".join(repr(h[k]) for k in keys) for i, h in enumerate(history)]
        return "\n".join(lines) + "\n"
    return "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history))


def train_models(train: ReturnPanel, cfg: RunConfig, names: list[str], model_dir: Path) -> dict:
    """Train the requested models in dependency order and write their containers."""
    from .models.autoencoder import AutoencoderModel, fit_autoencoder_model
    from .models.drl import train_drl
    from .models.gnn import fit_gnn_model
    from .models.transformer import train_transformer

    model_dir.mkdir(parents=True, exist_ok=True)
    trained = {}
    wanted = list(names)
    if "ae_drl" in wanted and "ae" not in wanted and not (model_dir / "ae.json").exists():
        wanted.insert(0, "ae")
    fitters = {"ae": lambda: fit_autoencoder_model(train, cfg.ae_config()),
               "gnn": lambda: fit_gnn_model(train, cfg.gnn_config()),
               "tf": lambda: train_transformer(train, cfg.tf_config()),
               "drl": lambda: train_drl(train, cfg.drl_config()),
               "ae_drl": lambda: train_drl(train, cfg.drl_config(hybrid=True),
                                           trained.get("ae") or AutoencoderModel.load(model_dir / "ae.json"))}
    for name in [m for m in MODEL_NAMES if m in wanted]:
        t0 = time.perf_counter()
        try:
            model = fitters[name]()
        except Exception as exc:
            raise TrainingError(f"training {name} failed: {exc}") from exc
        trained[name] = model
        model.save(model_dir / f"{name}.json")
        (model_dir / f"{name}_log.csv").write_text(_loss_log(model.history), encoding="utf-8")
        log.info("trained %s in %.1fs", name, time.perf_counter() - t0)
    return trained


def cmd_train(args) -> int:
    cfg = _config(args)
    names = _names(args.models, MODEL_NAMES, "model")
    returns = _returns(args, cfg)
    train = returns.before(cfg.backtest.test_start)
    if len(train) < 2:
        raise DataError("no training rows before backtest.test_start")
    trained = train_models(train, cfg, names, Path(cfg.out) / "models")
    print(f"trained {', '.join(trained)} on {len(train)} days "
          f"({train.dates[0]} .. {train.dates[-1]})")
    return EXIT_OK


def load_models(model_dir: Path, needed: set) -> dict:
    from .models.autoencoder import AutoencoderModel
    from .models.drl import DRLModel
    from .models.gnn import GnnModel
    from .models.transformer import TransformerModel

    loaders = {"ae": AutoencoderModel, "gnn": GnnModel, "tf": TransformerModel,
               "drl": DRLModel, "ae_drl": DRLModel}
    models = {}
    for name in sorted(needed):
        path = model_dir / f"{name}.json"
        if path.exists():
            models[name] = loaders[name].load(path)
    return models


def run_strategies(returns: ReturnPanel, cfg: RunConfig, strategies: list[str], models: dict,
                   report_dir: Path):
    from .backtest import run_backtest
    from .report import render_report

    report_dir.mkdir(parents=True, exist_ok=True)
    done, failures = [], {}
    for s in strategies:
        t0 = time.perf_counter()
        try:
            result = run_backtest(s, returns, cfg.backtest_config(), models, cfg.strategy_config())
        except (PortlabError, ValueError, ArithmeticError) as exc:
            failures[s] = f"{type(exc).__name__}: {exc}"
            log.warning("strategy %s failed: %s", s, exc)
            continue
        result.write(report_dir)
        done.append(s)
        log.info("backtested %s in %.1fs", s, time.perf_counter() - t0)
    report = render_report(report_dir, done, failures)
    return report, failures


def cmd_backtest(args) -> int:
    from .report import format_table

    cfg = _config(args)
    strategies = _names(args.strategies, tuple(k.value for k in ALL_STRATEGIES), "strategy")
    returns = _returns(args, cfg)
    needed = {m for s in strategies for m in REQUIRED_MODELS.get(StrategyKind(s), ())}
    models = load_models(Path(cfg.out) / "models", needed)
    report, failures = run_strategies(returns, cfg, strategies, models, Path(cfg.out) / "report")
    sys.stdout.write(format_table(report.rows, "md"))
    for s, msg in failures.items():
        print(f"FAILED {s}: {msg}", file=sys.stderr)
    if failures and len(failures) == len(strategies):
        return EXIT_BACKTEST
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import format_table, load_report, render_report

    cfg = _config(args)
    report_dir = Path(cfg.out) / "report"
    if not (report_dir / "report.json").exists():
        raise DataError(f"no stored report in {report_dir}")
    stored = load_report(report_dir)
    if args.format == "json":
        sys.stdout.write((report_dir / "report.json").read_text(encoding="utf-8"))
        return EXIT_OK
    report = render_report(report_dir, [r["strategy"] for r in stored.rows], stored.failures)
    sys.stdout.write(format_table(report.rows, args.format))
    return EXIT_OK


COMMANDS = {"fetch": cmd_fetch, "train": cmd_train, "backtest": cmd_backtest, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FetchError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (BacktestError, StrategyError) as exc:
        print(f"backtest error: {exc}", file=sys.stderr)
        return EXIT_BACKTEST


if __name__ == "__main__":
    sys.exit(main())
