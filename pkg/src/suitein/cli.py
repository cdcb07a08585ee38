"""Command-line entry point: simulate, train, eval, plot.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 training
aborted on a non-finite loss. Every command writes a run_manifest.json next
to its outputs. Seed precedence: --seed flag, then SUITEIN_SEED, then the
config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dataio, evaluator, simkit, svgplot, trainer
from . import network as N
from .errors import NaNLossError, SuiteInError
from .network import ModelConfig

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NAN = 4


def _resolve_seed(flag_seed, config_seed):
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("SUITEIN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SuiteInError(f"SUITEIN_SEED must be an integer, got {env!r}") from None
    return config_seed


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SuiteInError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e


def _write_run_manifest(out_dir: Path, command: str, config_paths: list[str],
                        seed, artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config_paths": config_paths,
        "seed": seed,
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
        "created_unix": time.time(),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_split(data_dir: Path) -> dict:
    split_path = data_dir / "split.json"
    if not split_path.exists():
        raise SuiteInError(f"{split_path}: split file not found")
    return _read_json(split_path)


def _load_bundles(data_dir: Path, ids: list[str]) -> list[dataio.SequenceBundle]:
    return [dataio.load_sequence(data_dir / sid / "manifest.json") for sid in ids]


# -- commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    config_path = Path(args.config) if args.config else None
    recipe = _read_json(config_path) if config_path else {}
    out_dir = Path(args.out)
    if "sequences" in recipe:
        configs = [simkit.SimConfig.from_dict(c) for c in recipe["sequences"]]
        split = recipe.get("split") or {
            "train": [c.sequence_id for c in configs], "val": [], "test": []}
    else:
        seed = _resolve_seed(args.seed, recipe.get("seed", simkit.default_recipe()["seed"]))
        recipe["seed"] = seed
        configs, split = simkit.build_dataset_configs(recipe)
    paths = simkit.emit_dataset(configs, out_dir, split)
    _write_run_manifest(
        out_dir, "simulate", [str(config_path)] if config_path else [],
        recipe.get("seed"), [str(p.parent.name) for p in paths] + ["split.json"])
    print(f"wrote {len(paths)} sequences to {out_dir}")
    return 0


def _train_setup(args):
    data_dir = Path(args.data)
    cfg_dict = _read_json(Path(args.config)) if args.config else {}
    model_dict = cfg_dict.get("model", {})
    config = trainer.TrainConfig.from_dict(cfg_dict)
    config.seed = _resolve_seed(args.seed, config.seed)
    if args.no_contrastive:
        config.ablation.use_contrastive = False
    if args.no_aggregation:
        config.ablation.use_aggregation = False
    if args.device_subset:
        subset = [d.strip() for d in args.device_subset.split(",") if d.strip()]
        if not subset:
            raise SuiteInError("--device-subset must list at least one device")
    else:
        subset = None

    split = _load_split(data_dir)
    train_bundles = _load_bundles(data_dir, split.get("train", []))
    val_bundles = _load_bundles(data_dir, split.get("val", []))
    if not train_bundles:
        raise SuiteInError("split file lists no training sequences")

    devices = list(train_bundles[0].device_ids)
    if subset:
        devices = subset
    devices = list(trainer.resolve_ablation_devices(devices, config.ablation))

    def windows_for(bundles):
        batches = [
            dataio.prepare_windows(b.subset_devices(devices), config.window_len, config.stride)
            for b in bundles
        ]
        return dataio.WindowBatch.concatenate(batches) if batches else None

    train_windows = windows_for(train_bundles)
    val_windows = windows_for(val_bundles)
    model_config = ModelConfig(
        j=len(devices),
        window_len=config.window_len,
        devices=tuple(devices),
        **model_dict,
    )
    return config, model_config, train_windows, val_windows


def cmd_train(args) -> int:
    config, model_config, train_windows, val_windows = _train_setup(args)
    params = N.init_params(model_config, config.seed,
                           include_private=config.ablation.use_contrastive)
    params, log = trainer.train(train_windows, params, model_config, config,
                                val_dataset=val_windows)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(params, model_config, out_path)
    log_path = Path(args.log) if args.log else out_path.with_suffix(".log.csv")
    log_path.write_text(log.to_csv())
    _write_run_manifest(
        out_path.parent, "train",
        [str(args.config)] if args.config else [], config.seed,
        [out_path.name, log_path.name])
    final = log.epochs[-1]
    print(f"trained {config.epochs} epochs on {train_windows.count} windows; "
          f"final total loss {final.total:.6f}, val MSE {final.val_mse:.6f}")
    print(f"checkpoint: {out_path}")
    return 0


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    params, config = trainer.load_checkpoint(Path(args.model))
    split = _load_split(data_dir)
    if args.split not in split:
        raise SuiteInError(f"split {args.split!r} not in split file (has {list(split)})")
    ids = split[args.split]
    if not ids:
        raise SuiteInError(f"split {args.split!r} lists no sequences")
    out_dir = Path(args.out) if args.out else data_dir / f"eval_{args.split}"
    out_dir.mkdir(parents=True, exist_ok=True)

    def score(sid: str) -> evaluator.EvalReport:
        bundle = dataio.load_sequence(data_dir / sid / "manifest.json")
        if config.devices:
            bundle = bundle.subset_devices(config.devices)
        return evaluator.evaluate_sequence(
            params, config, bundle,
            stride=args.stride, rte_interval_s=args.rte_interval,
            oracle=args.oracle_velocities)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(score, ids))
    else:
        reports = [score(sid) for sid in ids]

    artifacts = []
    for report in reports:
        rp = out_dir / f"{report.sequence_id}_report.json"
        rp.write_text(report.to_json())
        tp = out_dir / f"{report.sequence_id}_traj.csv"
        tp.write_text(evaluator.trajectory_csv(report.trajectory))
        artifacts += [rp.name, tp.name]
    agg_path = out_dir / "aggregate.csv"
    agg_path.write_text(evaluator.aggregate_csv(reports))
    artifacts.append(agg_path.name)
    _write_run_manifest(out_dir, "eval", [str(args.model)], None, artifacts)
    for report in reports:
        print(f"{report.sequence_id}: ATE {report.ate_m:.3f} m, RTE {report.rte_m:.3f} m "
              f"(interval {report.interval_s} s)")
    mean_ate = float(np.mean([r.ate_m for r in reports]))
    print(f"mean ATE over {len(reports)} sequences: {mean_ate:.3f} m -> {out_dir}")
    return 0


def cmd_plot(args) -> int:
    pred_path, gt_path = Path(args.pred), Path(args.gt)
    pred = evaluator.trajectory_from_csv(pred_path.read_text(), str(pred_path))
    gt = evaluator.trajectory_from_csv(gt_path.read_text(), str(gt_path))
    ate_m = evaluator.ate(pred, gt)
    rte_m = evaluator.rte(pred, gt, args.rte_interval)
    svg = svgplot.render_trajectories(pred, gt, ate_m, rte_m, args.rte_interval,
                                      title=args.title)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg)
    _write_run_manifest(out_path.parent, "plot", [str(pred_path), str(gt_path)],
                        None, [out_path.name])
    print(f"wrote {out_path} (ATE {ate_m:.3f} m, RTE {rte_m:.3f} m)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suitein",
        description="Multi-device inertial odometry: simulate, train, evaluate, plot.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="dataset recipe or explicit sequence list (JSON)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--log", help="training log CSV path (default: <out>.log.csv)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-contrastive", action="store_true",
                   help="drop the contrastive/orthogonality terms and private extractors")
    p.add_argument("--no-aggregation", action="store_true",
                   help="train on a single designated device only")
    p.add_argument("--device-subset", help="comma-separated device ids to train on")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="output directory (default: <data>/eval_<split>)")
    p.add_argument("--rte-interval", type=float, default=10.0)
    p.add_argument("--stride", type=int, default=None,
                   help="inference window stride (default: window length)")
    p.add_argument("--oracle-velocities", action="store_true",
                   help="substitute ground-truth window velocities for predictions")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render predicted vs. ground-truth trajectories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="SVG output path")
    p.add_argument("--rte-interval", type=float, default=10.0)
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NaNLossError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NAN
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except SuiteInError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
