"""Command-line harness: synth, train, eval, score-difficulty, compare, noise-sweep.

Failures exit nonzero after printing one line ``error: <category>: <message>``.
Config values come from TrainConfig defaults, then an optional INI file, then
command-line flags, in increasing precedence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from stc_dropout.curriculum import STRATEGIES
from stc_dropout.data import (
    SignalDataset,
    ZScore,
    chronological_split,
    load_csv,
    make_windows,
    read_nodes_meta,
    synth_generate,
    write_synth,
)
from stc_dropout.graph import k_order_neighbors, normalized_adjacency, read_edge_list
from stc_dropout.metrics import evaluate, write_metrics_csv
from stc_dropout.model import STModel
from stc_dropout.training import ConfigError, TrainConfig, eval_sample, rmse_of, run, score_model

OUTPUT_ROOT_ENV = "STC_OUTPUT_ROOT"
DEFAULT_DELTAS = (0.0, 0.1, 0.25, 0.5, 0.75)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
PARTIAL_MARKER = ".partial"

# INI section for every config key
SECTIONS = {
    "model": ("window", "horizon", "channels", "kernel", "tap_layer"),
    "training": ("batch_size", "lr", "max_epochs", "patience", "min_delta", "seed", "eval_batch_windows", "split", "epsilon"),
    "curriculum": ("strategy", "alpha_bar", "beta", "refresh_every", "node_weighting", "dropout_p"),
    "difficulty": ("rho", "k", "symmetrize"),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}

_UMASK = os.umask(0)
os.umask(_UMASK)

EXIT_CODES = {"config": 2, "input": 3, "io": 4, "interrupted": 130, "internal": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# --- config values -------------------------------------------------------------


def _format_default(name: str) -> str:
    v = _DEFAULTS[name]
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_value(name: str, text: str):
    """Parse a config value given as text, using the type of the TrainConfig default."""
    if name not in _DEFAULTS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _DEFAULTS[name]
    s = str(text).strip()
    try:
        if name in ("beta", "refresh_every"):
            if s.lower() == "auto":
                return None
            return float(s) if name == "beta" else int(s)
        if isinstance(default, bool):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, tuple):
            return tuple(int(p) for p in s.split(",") if p.strip())
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        return s
    except ValueError:
        kind = "'auto' or a number" if default is None else type(default).__name__
        if isinstance(default, tuple):
            kind = "comma-separated integers"
        raise ConfigError(f"{name}={s!r}: expected {kind}") from None


def read_ini(path) -> dict:
    """Read an INI config with one section per module; keys must sit in their own section."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise CliError("input", f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]; expected one of {', '.join(SECTIONS)}")
        for key, text in parser.items(section):
            if key not in _SECTION_OF:
                raise ConfigError(f"{path}: unknown config key {key!r} in [{section}]")
            if _SECTION_OF[key] != section:
                raise ConfigError(f"{path}: key {key!r} belongs in [{_SECTION_OF[key]}], not [{section}]")
            out[key] = parse_value(key, text)
    return out


def build_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_ini(args.config))
    for name in _DEFAULTS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = parse_value(name, v)
    return TrainConfig.from_dict(values)


def config_keys_epilog() -> str:
    lines = ["config keys (INI section / flag, default):"]
    for sec, keys in SECTIONS.items():
        for key in keys:
            lines.append(f"  [{sec}] --{key.replace('_', '-')}  (default: {_format_default(key)})")
    return "\n".join(lines)


# --- file helpers ----------------------------------------------------------------


def output_dir(path: str | None, default_name: str) -> Path:
    out = Path(path) if path else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def atomic_write(path: Path, write_fn) -> None:
    """Write via a temporary sibling file and rename, so readers never see a torn file."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        os.chmod(tmp, 0o666 & ~_UMASK)
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def partial_marker(out: Path):
    """Marker file that exists only while a command is still writing ``out``."""
    marker = out / PARTIAL_MARKER
    marker.write_text("incomplete run; outputs in this directory may be missing\n")
    yield
    marker.unlink()


def load_dataset(data_dir) -> tuple[SignalDataset, object]:
    d = Path(data_dir)
    signals, edges = d / "signals.csv", d / "edges.csv"
    for p in (signals, edges):
        if not p.exists():
            raise CliError("input", f"missing input file {p}")
    try:
        ds = load_csv(signals)
        g = read_edge_list(edges, num_nodes=ds.num_nodes)
        meta = d / "nodes_meta.csv"
        if meta.exists():
            labels, coords = read_nodes_meta(meta)
            if len(labels) == ds.num_nodes:
                ds = replace(ds, labels=tuple(labels), coords=coords)
    except ValueError as exc:
        raise CliError("input", str(exc)) from None
    return ds, g


def write_rows(path: Path, header, rows) -> None:
    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    atomic_write(path, write)


def _num(x: float) -> str:
    return repr(float(x))


# --- commands --------------------------------------------------------------------


def cmd_synth(args) -> None:
    out = output_dir(args.out, "synth")
    ds, g = synth_generate(
        num_nodes=args.nodes,
        num_hard_temporal=args.hard_temporal,
        num_hard_spatial=args.hard_spatial,
        num_steps=args.steps,
        seed=args.seed,
    )
    with partial_marker(out):
        write_synth(ds, g, out)
    print(f"wrote {ds.num_nodes} nodes x {ds.num_steps} steps to {out}")


def cmd_train(args) -> None:
    cfg = build_config(args)
    ds, g = load_dataset(args.data)
    out = output_dir(args.out, f"train-{cfg.strategy}-seed{cfg.seed}")
    with partial_marker(out):
        model, record, data = run(ds, g, cfg, noise=args.noise)
        scaler = data.splits.scaler
        extra = {
            "train_config": cfg.to_dict(),
            "noise": args.noise,
            "scaler_mean": scaler.mean.tolist(),
            "scaler_std": scaler.std.tolist(),
        }
        atomic_write(out / "model.npz", lambda p: model.save(p, extra))
        record.trace_file = "trace.csv"
        atomic_write(out / "trace.csv", record.write_trace)
        atomic_write(out / "run.json", record.write)
    print(f"test rmse {rmse_of(record):.6g}  best epoch {record.best_epoch}  -> {out}")


def _load_checkpoint(path):
    try:
        model, extra = STModel.load(path)
    except FileNotFoundError:
        raise CliError("input", f"checkpoint not found: {path}") from None
    except (ValueError, KeyError, OSError) as exc:
        raise CliError("input", f"unreadable checkpoint {path}: {exc}") from None
    if "train_config" not in extra:
        raise CliError("input", f"{path}: checkpoint lacks its training config")
    cfg = TrainConfig.from_dict(extra["train_config"])
    scaler = ZScore(np.array(extra["scaler_mean"]), np.array(extra["scaler_std"]))
    return model, cfg, scaler


def cmd_eval(args) -> None:
    model, cfg, scaler = _load_checkpoint(args.checkpoint)
    ds, g = load_dataset(args.data)
    splits = chronological_split(ds, cfg.split, min_span=cfg.window + cfg.horizon)
    part = {"train": splits.train, "val": splits.val, "test": splits.test}[args.split]
    x, y = make_windows(scaler.transform(part.values), cfg.window, cfg.horizon)
    try:
        pred = model.predict(x, normalized_adjacency(g))
    except ValueError as exc:
        raise CliError("input", f"data does not match the checkpoint: {exc}") from None
    sets = evaluate(scaler.inverse(pred, feature=0), scaler.inverse(y, feature=0), epsilon=cfg.epsilon)
    out = Path(args.out) if args.out else output_dir(None, "eval") / "metrics.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, lambda p: write_metrics_csv(sets, p))
    print(f"{args.split} rmse {sets[-1].rmse:.6g} -> {out}")


def cmd_score_difficulty(args) -> None:
    ds, g = load_dataset(args.data)
    if args.checkpoint:
        model, cfg, scaler = _load_checkpoint(args.checkpoint)
        splits = chronological_split(ds, cfg.split, min_span=cfg.window + cfg.horizon)
    else:
        cfg = build_config(args)
        model = STModel.init(cfg.model_config(ds.num_features))
        splits = chronological_split(ds, cfg.split, min_span=cfg.window + cfg.horizon, allow_constant=True)
        scaler = splits.scaler
    k = args.k_override or cfg.k
    rho = args.rho_override or cfg.rho
    x, _ = make_windows(scaler.transform(splits.train.values), cfg.window, cfg.horizon)
    x = x[eval_sample(len(x), cfg.eval_batch_windows, cfg.seed)]
    nbrs = k_order_neighbors(g, k, symmetrize=cfg.symmetrize)
    report = score_model(model, x, normalized_adjacency(g), nbrs, rho)
    out = Path(args.out) if args.out else output_dir(None, "difficulty") / "difficulty.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, report.to_csv)
    print(f"scored {report.num_nodes} nodes (R={report.radius:.4g}) -> {out}")


def _run_cell(data_dir: str, cfg_dict: dict, noise: float, cell_path: str) -> dict:
    ds, g = load_dataset(data_dir)
    cfg = TrainConfig.from_dict(cfg_dict)
    _, record, _ = run(ds, g, cfg, noise=noise)
    atomic_write(Path(cell_path), record.write)
    return next(m for m in record.test_metrics if m["horizon"] == "all")


def _run_cells(data_dir: str, cells: list[tuple], workers: int) -> list[dict]:
    """Run ``(cfg, noise, path)`` cells, in parallel when ``workers > 1``; results keep cell order."""
    jobs = [(data_dir, cfg.to_dict(), noise, str(path)) for cfg, noise, path in cells]
    if workers <= 1:
        return [_run_cell(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, *zip(*jobs)))


def _seed_list(text: str | None) -> tuple[int, ...]:
    if not text:
        return DEFAULT_SEEDS
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"seeds={text!r}: expected comma-separated integers") from None
    if not seeds or min(seeds) < 0:
        raise ConfigError(f"seeds={text!r}: expected non-negative integers")
    return seeds


def cmd_compare(args) -> None:
    base = build_config(args)
    seeds = _seed_list(args.seeds)
    strategies = tuple(args.strategies.split(",")) if args.strategies else STRATEGIES
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"strategy={s!r}: expected one of {', '.join(STRATEGIES)}")
    load_dataset(args.data)
    out = output_dir(args.out, "compare")
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    cells = [
        (replace(base, strategy=s, seed=seed), args.noise, cells_dir / f"{s}_seed{seed}.json")
        for s in strategies
        for seed in seeds
    ]
    with partial_marker(out):
        results = _run_cells(args.data, cells, args.workers)
        rows = [
            (cfg.strategy, cfg.seed, _num(m["mae"]), _num(m["mape"]), _num(m["rmse"]))
            for (cfg, _, _), m in zip(cells, results)
        ]
        write_rows(out / "summary.csv", ("strategy", "seed", "mae", "mape", "rmse"), rows)
    print(f"{len(rows)} runs -> {out / 'summary.csv'}")


def cmd_noise_sweep(args) -> None:
    base = build_config(args)
    seeds = _seed_list(args.seeds)
    try:
        deltas = tuple(float(d) for d in args.deltas.split(",")) if args.deltas else DEFAULT_DELTAS
    except ValueError:
        raise ConfigError(f"deltas={args.deltas!r}: expected comma-separated numbers") from None
    if min(deltas) < 0:
        raise ConfigError(f"deltas={args.deltas!r}: expected values >= 0")
    load_dataset(args.data)
    out = output_dir(args.out, "noise-sweep")
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    cells = [
        (replace(base, strategy=s, seed=seed), d, cells_dir / f"delta{d!r}_{s}_seed{seed}.json")
        for d in deltas
        for s in ("none", "stc")
        for seed in seeds
    ]
    with partial_marker(out):
        results = _run_cells(args.data, cells, args.workers)
        rows = [(_num(d), cfg.strategy, cfg.seed, _num(m["rmse"])) for (cfg, d, _), m in zip(cells, results)]
        write_rows(out / "sweep.csv", ("delta", "strategy", "seed", "rmse"), rows)
    print(f"{len(rows)} runs -> {out / 'sweep.csv'}")


# --- parser ------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model], [training], [curriculum], [difficulty] sections")
    group = p.add_argument_group("config keys (override the INI file)")
    for name in _DEFAULTS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, metavar="V", help=f"default: {_format_default(name)}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="stc-dropout",
        description="Node-level curriculum dropout for spatial-temporal graph forecasting.",
        epilog=config_keys_epilog() + f"\n\noutputs default to ${OUTPUT_ROOT_ENV} (else ./runs)/<command>",
        formatter_class=fmt,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate the synthetic benchmark", formatter_class=fmt)
    p.add_argument("--nodes", type=int, default=40)
    p.add_argument("--hard-temporal", type=int, default=6)
    p.add_argument("--hard-spatial", type=int, default=6)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model", epilog=config_keys_epilog(), formatter_class=fmt)
    p.add_argument("--data", required=True, help="directory with signals.csv and edges.csv")
    p.add_argument("--noise", type=float, default=0.0, help="multiplicative training noise bound (default: 0)")
    p.add_argument("--out", help="output directory for model.npz, run.json, trace.csv")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score-difficulty", help="write per-node difficulty scores", formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="trained model; omit to score a freshly initialized one")
    p.add_argument("--out", help="difficulty CSV path")
    p.add_argument("--neighbor-order", dest="k_override", type=int, help="override k from the config")
    p.add_argument("--ball-quantile", dest="rho_override", type=float, help="override rho from the config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_score_difficulty)

    for name, func, extra in (
        ("compare", cmd_compare, "strategies"),
        ("noise-sweep", cmd_noise_sweep, "deltas"),
    ):
        p = sub.add_parser(name, help=f"run the {name} grid", epilog=config_keys_epilog(), formatter_class=fmt)
        p.add_argument("--data", required=True)
        p.add_argument("--seeds", help="comma-separated seeds (default: 1,2,3,4,5)")
        if extra == "strategies":
            p.add_argument("--strategies", help=f"comma-separated subset (default: {','.join(STRATEGIES)})")
            p.add_argument("--noise", type=float, default=0.0)
        else:
            p.add_argument("--deltas", help=f"comma-separated noise bounds (default: {','.join(map(str, DEFAULT_DELTAS))})")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes (default: 1)")
        p.add_argument("--out", help="output directory")
        _add_config_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        category, msg = exc.category, str(exc)
    except ConfigError as exc:
        category, msg = "config", str(exc)
    except KeyboardInterrupt:
        category, msg = "interrupted", "run stopped before completion"
    except (FileNotFoundError, ValueError) as exc:
        category, msg = "input", str(exc)
    except OSError as exc:
        category, msg = "io", str(exc)
    else:
        return 0
    print(f"error: {category}: {' '.join(msg.split())}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
