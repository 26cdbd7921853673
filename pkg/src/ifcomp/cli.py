"""Command-line front end: ``ifcomp <command> [options]``.

Commands ``train``, ``fit-curvature`` and ``score`` form a pipeline over
files in ``--out-dir``; the task commands run a full experiment on
synthetic blobs and write a JSON report plus CSV tables.

Exit status is 0 on success, 2 for configuration, input or missing-artifact
problems, and 1 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .curvature import EkfacState, fit_ekfac
from .data import Dataset, NormStats, load_csv, load_idx, read_manifest, save_csv, write_manifest
from .errors import ConfigurationError, FormatError, IfcompError
from .model import MlpParams
from .pnml import score_dataset, write_csv, write_jsonl
from .tasks import TASKS, blob_problem, fit_model, write_rows

log = logging.getLogger("ifcomp")

MANIFEST = "manifest.json"


class MissingArtifact(ConfigurationError):
    pass


def _positive(text: str) -> str:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return text


def _nonnegative(text: str) -> str:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifcomp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI-style run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=_nonnegative, help="test-point weight of the pNML output")
    common.add_argument("--beta", type=_positive, help="inverse temperature (curvature and pNML)")
    common.add_argument("--delta", type=_positive, help="curvature damping")
    common.add_argument("--workers", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any configuration key; repeatable")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the base model")
    p = sub.add_parser("fit-curvature", parents=[common], help="fit EKFAC curvature for a checkpoint")
    p.add_argument("--checkpoint", type=Path)
    p = sub.add_parser("score", parents=[common], help="score a split with IF-COMP")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--curvature", type=Path)
    p.add_argument("--input", type=Path)
    for name in TASKS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    return parser


def config_from_args(args: argparse.Namespace) -> config_mod.RunConfig:
    file = config_mod.read_config_file(args.config) if args.config else None
    overrides = [config_mod.parse_override(o) for o in args.overrides]
    if args.seed is not None:
        overrides.append(("run", "seed", str(args.seed)))
    if args.workers is not None:
        overrides.append(("run", "workers", str(args.workers)))
    if args.alpha is not None:
        overrides.append(("pnml", "alpha", args.alpha))
    if args.beta is not None:
        overrides += [("curvature", "beta", args.beta), ("pnml", "beta", args.beta)]
    if args.delta is not None:
        overrides.append(("curvature", "delta", args.delta))
    if args.out_dir is not None:
        overrides.append(("paths", "out_dir", str(args.out_dir)))
    for key in ("checkpoint", "curvature", "input"):
        if getattr(args, key, None) is not None:
            overrides.append(("paths", key, str(getattr(args, key))))
    task = args.command if args.command in TASKS else None
    return config_mod.resolve(task, file, overrides)


# --- data and artifact plumbing ----------------------------------------------------------


def _require_file(path: Optional[Path], what: str) -> Path:
    if path is None or not Path(path).is_file():
        raise MissingArtifact(f"{what} not found: {path}")
    return Path(path)


def load_split(path: Path, labels_path: Optional[Path], num_classes: int, stats: Optional[NormStats]) -> Dataset:
    """Read a CSV (raw features, label column) or an IDX image/label pair."""
    _require_file(path, "dataset")
    if labels_path is not None:
        _require_file(labels_path, "label file")
        return load_idx(path, labels_path, stats=stats, num_classes=num_classes)
    if stats is None:
        raw = load_csv(path, num_classes=num_classes)
        stats = NormStats.fit(raw.features)
        return replace(raw, features=stats.apply(raw.features), stats=stats)
    return load_csv(path, num_classes=num_classes, stats=stats)


def _write_raw_csv(ds: Dataset, path: Path) -> None:
    save_csv(replace(ds, features=ds.stats.invert(ds.features)), path)


def _checkpoint_path(cfg) -> Path:
    return cfg["paths"]["checkpoint"] or cfg.out_dir / "checkpoint.json"


def _curvature_path(cfg) -> Path:
    return cfg["paths"]["curvature"] or cfg.out_dir / "curvature.json"


def _manifest_for(checkpoint: Path) -> dict:
    path = checkpoint.parent / MANIFEST
    _require_file(path, "run manifest")
    return read_manifest(path)


def _training_data(cfg, manifest: dict) -> Dataset:
    paths = cfg["paths"]
    data = paths["train_data"] or Path(manifest["train_data"])
    labels = paths["train_labels"] or (Path(manifest["train_labels"]) if manifest.get("train_labels") else None)
    return load_split(data, labels, manifest["num_classes"], NormStats.from_dict(manifest["stats"]))


def cmd_train(cfg) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    paths, t = cfg["paths"], cfg["task"]
    entries: dict = {"seed": cfg.seed}
    if paths["train_data"] is None:
        splits = blob_problem(cfg, {"train": t["n_per_class"], "test": t["test_per_class"]})
        for name, ds in splits.items():
            _write_raw_csv(ds, out / f"{name}.csv")
        train_path, labels_path, k = out / "train.csv", None, t["classes"]
        entries["test_data"] = str(out / "test.csv")
    else:
        train_path, labels_path, k = paths["train_data"], paths["train_labels"], t["classes"]
    train = load_split(train_path, labels_path, k, None)
    params, info, curve = fit_model(cfg, train)
    checkpoint = _checkpoint_path(cfg)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    params.save(checkpoint)
    if curve:
        write_rows(curve, out / "train_curve.csv")
    entries.update(train_data=str(train_path), train_labels=None if labels_path is None else str(labels_path),
                   num_classes=k, stats=train.stats.to_dict(), checkpoint=str(checkpoint))
    write_manifest(checkpoint.parent / MANIFEST, entries)
    final = curve[-1]["train_acc"] if curve else float("nan")
    log.info("trained %s on %d examples; final train accuracy %.4f", params.sizes, len(train), final)
    log.info("checkpoint written to %s", checkpoint)
    return 0


def cmd_fit_curvature(cfg) -> int:
    checkpoint = _require_file(_checkpoint_path(cfg), "checkpoint")
    params = MlpParams.load(checkpoint)
    train = _training_data(cfg, _manifest_for(checkpoint))
    state = fit_ekfac(params, train, cfg.beta, delta=cfg.delta, labels=cfg["curvature"]["labels"], seed=cfg.seed)
    path = _curvature_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    state.save(path)
    for i, layer in enumerate(state.layers):
        log.info("layer %d: A eig [%.3e, %.3e]  G eig [%.3e, %.3e]  moments [%.3e, %.3e]", i,
                 layer.a_values.min(), layer.a_values.max(), layer.g_values.min(), layer.g_values.max(),
                 layer.moments.min(), layer.moments.max())
    log.info("curvature (beta=%g, delta=%g) written to %s", state.beta, state.delta, path)
    return 0


def score_split(cfg, params: MlpParams, state: EkfacState, ds: Dataset, workers: int = 1):
    """Score records in input order, computed over ``workers`` contiguous chunks."""
    if state.beta != cfg.beta:
        raise ConfigurationError(f"curvature was fit at beta={state.beta}, configuration uses beta={cfg.beta}")
    state = state.with_delta(cfg.delta) if state.delta != cfg.delta else state
    pcfg = cfg.pnml_config(state.n)
    bounds = np.linspace(0, len(ds), min(workers, len(ds)) + 1).astype(int)
    jobs = [(s, e) for s, e in zip(bounds[:-1], bounds[1:]) if e > s]

    def run(job):
        s, e = job
        return score_dataset(state, params, ds.features[s:e], ds.labels[s:e], pcfg, ids=range(s, e))

    if len(jobs) <= 1:
        return [r for job in jobs for r in run(job)]
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        return [r for chunk in pool.map(run, jobs) for r in chunk]


def cmd_score(cfg) -> int:
    checkpoint = _require_file(_checkpoint_path(cfg), "checkpoint")
    curvature = _require_file(_curvature_path(cfg), "curvature file")
    params = MlpParams.load(checkpoint)
    state = EkfacState.load(curvature)
    manifest = _manifest_for(checkpoint)
    stats = NormStats.from_dict(manifest["stats"])
    paths = cfg["paths"]
    if paths["input"] is not None:
        ds = load_split(paths["input"], paths["input_labels"], manifest["num_classes"], stats)
    elif manifest.get("test_data"):
        ds = load_split(Path(manifest["test_data"]), None, manifest["num_classes"], stats)
    else:
        raise MissingArtifact("no input split: set paths.input or --input")
    records = score_split(cfg, params, state, ds, cfg["run"]["workers"])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, out / "scores.jsonl")
    write_csv(records, out / "scores.csv")
    log.info("scored %d examples -> %s", len(records), out / "scores.jsonl")
    return 0


def cmd_task(cfg, name: str) -> int:
    report = TASKS[name](cfg)
    written = report.write(cfg.out_dir)
    for path in written:
        log.info("wrote %s", path)
    return 0


COMMANDS = {"train": cmd_train, "fit-curvature": cmd_fit_curvature, "score": cmd_score}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command in COMMANDS:
            return COMMANDS[args.command](cfg)
        return cmd_task(cfg, args.command)
    except (ConfigurationError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"ifcomp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except IfcompError as exc:
        print(f"ifcomp {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
