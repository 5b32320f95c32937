"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .autonet import save_params
from .data import gen_gaussian_blobs_shift, gen_two_moons_shift, load_csv, save_csv
from .evalkit import atomic_write_text, build_report, write_result
from .trainer import ConfigError, TrainConfig, run

log = logging.getLogger("atdoc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _shift(text: str, dim: int) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        vec = np.zeros(dim)
        vec[0] = parts[0]
        return vec
    if len(parts) != dim:
        raise UsageError(f"--shift needs 1 or {dim} comma-separated values, got {len(parts)}")
    return np.array(parts)


def cmd_generate(args) -> int:
    try:
        if args.generator == "two-moons":
            ds = gen_two_moons_shift(args.n, args.rotation, args.noise, args.seed)
        else:
            shift = _shift(args.shift, args.dim)
            ds = gen_gaussian_blobs_shift(args.classes, args.dim, args.n, shift, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out)
    print(
        f"wrote {out}: {ds.n_source} source, {ds.n_target_unlabeled} target, "
        f"{ds.class_count} classes, dim {ds.dim}"
    )
    return EXIT_OK


def _load_config(path: Optional[str], seed: Optional[int]) -> TrainConfig:
    doc: dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
    if seed is not None:
        doc["seed"] = seed
    return TrainConfig.from_dict(doc)


def _check_data(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset not found: {p}")
    return p


def cmd_train(args) -> int:
    config = _load_config(args.config, args.seed)
    data = load_csv(_check_data(args.data))
    log.info("training %s on %s (seed %d)", config.method, args.data, config.seed)
    result = run(config, data)
    write_result(result, args.output)
    if args.save_params:
        save_params(result.params, args.save_params)
    print(json.dumps({"output": str(args.output), "seed": config.seed, **_headline(result.metrics)}))
    return EXIT_OK


def _headline(metrics: dict) -> dict:
    keys = ("target_accuracy", "target_mean_class_accuracy", "source_accuracy")
    return {k: metrics.get(k) for k in keys}


def _cell_name(cell: dict) -> str:
    parts = []
    for k, v in cell.items():
        text = json.dumps(v) if not isinstance(v, str) else v
        parts.append(f"{k}={text}".replace("/", "_").replace(" ", ""))
    return "__".join(parts) or "base"


def expand_grid(base: dict, axes: dict[str, list]) -> list[tuple[str, dict]]:
    for key, values in axes.items():
        if not isinstance(values, list) or not values:
            raise UsageError(f"axis {key!r} has no values")
    keys = sorted(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        cell = dict(zip(keys, combo))
        cells.append((_cell_name(cell), {**base, **cell}))
    return cells


def _run_cell(name: str, doc: dict, data_path: str, out_dir: str) -> tuple[str, Optional[str]]:
    try:
        result = run(TrainConfig.from_dict(doc), load_csv(data_path))
        write_result(result, Path(out_dir) / f"{name}.json")
        return name, None
    except Exception as e:  # noqa: BLE001 - recorded per cell
        atomic_write_text(Path(out_dir) / f"{name}.failed.txt", f"{type(e).__name__}: {e}\n")
        return name, f"{type(e).__name__}: {e}"


def _parse_axis(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise UsageError(f"--axis expects key=v1,v2,..., got {text!r}")
    key, raw = text.split("=", 1)
    values = []
    for item in filter(None, raw.split(",")):
        try:
            values.append(json.loads(item))
        except json.JSONDecodeError:
            values.append(item)
    return key, values


def cmd_sweep(args) -> int:
    base: dict = {}
    axes: dict[str, list] = {}
    if args.spec:
        p = Path(args.spec)
        if not p.is_file():
            raise UsageError(f"sweep spec not found: {p}")
        doc = json.loads(p.read_text(encoding="utf-8"))
        unknown = set(doc) - {"base", "axes"}
        if unknown:
            raise UsageError(f"unknown sweep spec key(s): {', '.join(sorted(unknown))}")
        base = doc.get("base", {})
        axes = doc.get("axes", {})
    for text in args.axis or []:
        key, values = _parse_axis(text)
        axes[key] = values
    if not axes:
        raise UsageError("sweep needs at least one axis")
    data = _check_data(args.data)
    cells = expand_grid(base, axes)
    for _, doc in cells:
        TrainConfig.from_dict(doc)  # reject bad cells before any work
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    todo = [(n, d) for n, d in cells if not (args.resume and (out_dir / f"{n}.json").is_file())]
    log.info("%d cells, %d to run", len(cells), len(todo))
    failures = []
    if args.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = [pool.submit(_run_cell, n, d, str(data), str(out_dir)) for n, d in todo]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_cell(n, d, str(data), str(out_dir)) for n, d in todo]
    for name, err in outcomes:
        if err:
            failures.append(name)
            print(f"cell {name} failed: {err}", file=sys.stderr)
        else:
            stale = out_dir / f"{name}.failed.txt"
            if stale.exists():
                stale.unlink()
    print(f"{len(cells)} cells: {len(todo) - len(failures)} ran, {len(cells) - len(todo)} skipped, {len(failures)} failed")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_report(args) -> int:
    d = Path(args.directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    text, skipped = build_report(d)
    if text.count("\n") <= 1:
        print(f"warning: no results in {d}", file=sys.stderr)
    for name in skipped:
        print(f"warning: skipped unreadable {name}", file=sys.stderr)
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atdoc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic domain-shift dataset as CSV")
    gsub = gen.add_subparsers(dest="generator", required=True)
    moons = gsub.add_parser("two-moons")
    moons.add_argument("--n", type=int, required=True, help="samples per domain")
    moons.add_argument("--rotation", type=float, required=True, help="target rotation in degrees")
    moons.add_argument("--noise", type=float, default=0.1)
    blobs = gsub.add_parser("blobs")
    blobs.add_argument("--classes", type=int, required=True)
    blobs.add_argument("--dim", type=int, default=2)
    blobs.add_argument("--n", type=int, required=True, help="samples per class")
    blobs.add_argument("--shift", default="0", help="scalar (first axis) or comma-separated vector")
    for p in (moons, blobs):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-o", "--output", required=True)
        p.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="run one experiment")
    train.add_argument("--config", help="TrainConfig JSON (defaults apply when omitted)")
    train.add_argument("--data", required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("-o", "--output", required=True)
    train.add_argument("--save-params", help="also write the final parameter checkpoint")
    train.set_defaults(func=cmd_train)

    sweep = sub.add_parser("sweep", help="run a cartesian grid of configs")
    sweep.add_argument("--spec", help='JSON {"base": {...}, "axes": {"key": [values]}}')
    sweep.add_argument("--axis", action="append", help="key=v1,v2,... (repeatable)")
    sweep.add_argument("--data", required=True)
    sweep.add_argument("-o", "--output", required=True, help="result directory")
    sweep.add_argument("--resume", action="store_true", help="skip cells with an existing result")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="aggregate a directory of results into CSV")
    report.add_argument("directory")
    report.add_argument("-o", "--output")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
