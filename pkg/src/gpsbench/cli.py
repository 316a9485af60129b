"""Command-line front end: run experiments, sweeps, and single-image demos.

Subcommands: run, sweep, compress, reconstruct, inspect-buffer.
Exit codes: 0 success, 2 config error, 3 data/format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import learner as L
from .assembly import grid_concat
from .bench import (
    Dataset,
    OnlineConfig,
    average_end_accuracy,
    generate_synthetic,
    load_cifar100_dataset,
    run_online,
    split_tasks,
    SyntheticSpec,
)
from .buffer import MODE_GPS, PixelBudget, ReplayBuffer
from .config import ExperimentConfig, config_to_dict, load_config
from .errors import ConfigError, EmptyStateError, FormatError, GpsError, NumericalError
from .imaging import (
    DOMAIN_BUFFER,
    DOMAIN_DATA,
    DOMAIN_MODEL_INIT,
    DOMAIN_TASK_SPLIT,
    GridSpec,
    Rng,
    load_ppm,
    require_square,
    save_ppm,
)
from .sampler import gps_sample


def _load_image_dir(root, test_fraction, rng):
    """Per-class subdirectories of PPM files; seeded per-class train/test split."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"image_dir {root} is not a directory")
    train, test = [], []
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ConfigError(f"image_dir {root} contains no class subdirectories")
    for d in class_dirs:
        try:
            label = int(d.name)
        except ValueError:
            raise ConfigError(
                f"class directory name {d.name!r} is not a non-negative integer"
            ) from None
        files = sorted(d.glob("*.ppm"))
        if not files:
            raise ConfigError(f"class directory {d} holds no .ppm files")
        images = [load_ppm(f).with_label(label) for f in files]
        images = rng.split(label).shuffled(images)
        n_test = max(1, int(round(len(images) * test_fraction)))
        if n_test >= len(images):
            raise ConfigError(
                f"class {label}: {len(images)} images cannot support a test split"
            )
        test.extend(images[:n_test])
        train.extend(images[n_test:])
    return Dataset(train, test)


def build_dataset(config: ExperimentConfig, rng: Rng) -> Dataset:
    if config.dataset == "synthetic":
        spec = SyntheticSpec(
            num_classes=config.synthetic_classes,
            resolution=config.synthetic_resolution,
            channels=config.synthetic_channels,
            train_per_class=config.synthetic_train_per_class,
            test_per_class=config.synthetic_test_per_class,
            noise_amplitude=config.synthetic_noise,
            pattern_seed=config.synthetic_pattern_seed,
            pattern_contrast=config.synthetic_contrast,
            pattern_baseline=config.synthetic_baseline,
        )
        return generate_synthetic(spec, rng)
    if config.dataset == "cifar100":
        return load_cifar100_dataset(config.cifar_train_path, config.cifar_test_path)
    return _load_image_dir(config.image_dir, config.image_test_fraction, rng)


def _dataset_geometry(dataset: Dataset):
    """Common (resolution, channels) of all images; mixed shapes are an error."""
    first = dataset.train[0]
    resolution = require_square(first)
    for img in dataset.train + dataset.test:
        if img.height != resolution or img.width != resolution:
            raise ConfigError(
                f"mixed image sizes: {img.height}x{img.width} vs {resolution}x{resolution}"
            )
        if img.channels != first.channels:
            raise ConfigError("mixed channel counts in dataset")
    return resolution, first.channels


def run_one_seed(config: ExperimentConfig, seed: int):
    """Execute one seeded run; returns a dict of everything the writer needs."""
    root = Rng(seed)
    dataset = build_dataset(config, root.split(DOMAIN_DATA))
    stream = split_tasks(dataset, config.tasks, config.classes_per_task,
                         root.split(DOMAIN_TASK_SPLIT))
    resolution, channels = _dataset_geometry(dataset)
    num_classes = max(max(cs) for cs in stream.class_sets) + 1
    params = L.init_params(resolution, channels, config.hidden_units,
                           config.embedding_units, num_classes,
                           root.split(DOMAIN_MODEL_INIT))
    buf = None
    if config.buffer_mode != "none":
        budget = PixelBudget(config.budget_images, resolution)
        buf = ReplayBuffer(budget, config.buffer_mode, root.split(DOMAIN_BUFFER),
                           factor=config.factor, channels=channels)
    online = OnlineConfig(
        stream_batch=config.stream_batch,
        replay_batch=config.replay_batch,
        replay_units=config.replay_units,
        learning_rate=config.learning_rate,
        replay_weight=config.replay_weight,
        head=config.head,
        normalize_embeddings=config.normalize_embeddings,
    )
    status = "ok"
    failure = None
    try:
        result = run_online(stream, params, buf, online, root)
    except NumericalError as exc:
        result = exc.partial_result
        status = "numerical_failure"
        failure = str(exc)
    out = {"seed": seed, "status": status, "failure": failure,
           "entries": [], "task_count": config.tasks,
           "end_row": None, "a_end": None, "snapshot": None}
    if result is not None:
        matrix = result.matrix
        out["entries"] = matrix.entries()
        out["task_count"] = matrix.task_count
        if matrix.final_row_complete:
            out["end_row"] = matrix.end_row()
            out["a_end"] = average_end_accuracy(matrix)
        if result.buffer is not None:
            out["snapshot"] = result.buffer.snapshot()
    return out


def _write_matrix_csvs(out_dir: Path, record):
    seed = record["seed"]
    suffix = "" if record["status"] == "ok" else ".partial"
    matrix_path = out_dir / f"seed_{seed}_matrix{suffix}.csv"
    with open(matrix_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,i,a\n")
        for t, i, a in record["entries"]:
            fh.write(f"{t},{i},{a!r}\n")
    if record["end_row"] is not None:
        end_path = out_dir / f"seed_{seed}_end.csv"
        with open(end_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("task_i,a_N_i\n")
            for i, a in enumerate(record["end_row"]):
                fh.write(f"{i},{a!r}\n")
    if record["snapshot"] is not None:
        (out_dir / f"seed_{seed}_buffer.gpsb").write_bytes(record["snapshot"])


def _summary_stats(a_ends):
    mean = float(np.mean(a_ends))
    std = float(np.std(a_ends, ddof=1)) if len(a_ends) > 1 else 0.0
    return mean, std


def _execute_runs(config: ExperimentConfig, threads: int):
    """All seeds of one config, optionally in a process pool; order preserved."""
    seeds = list(config.seeds)
    if threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one_seed, [config] * len(seeds), seeds))
    return [run_one_seed(config, s) for s in seeds]


def cmd_run(config: ExperimentConfig, out_dir: Path, threads: int = 1) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    records = _execute_runs(config, threads)
    for record in records:
        _write_matrix_csvs(out_dir, record)
    ok = [r for r in records if r["status"] == "ok"]
    a_ends = [r["a_end"] for r in ok]
    if a_ends:
        mean, std = _summary_stats(a_ends)
        with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n_seeds,mean_a_end,std_a_end\n")
            fh.write(f"{len(a_ends)},{mean!r},{std!r}\n")
    manifest = {
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config_to_dict(config),
        "status": "ok" if len(ok) == len(records) else "numerical_failure",
        "runs": [
            {"seed": r["seed"], "status": r["status"], "a_end": r["a_end"],
             "failure": r["failure"]}
            for r in records
        ],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for r in records:
        label = f"seed {r['seed']}"
        if r["status"] == "ok":
            print(f"{label}: a_end = {r['a_end']:.4f}")
        else:
            print(f"{label}: FAILED ({r['failure']})")
    if a_ends:
        mean, std = _summary_stats(a_ends)
        print(f"summary: mean a_end = {mean:.4f} +- {std:.4f} over {len(a_ends)} seeds")
    if len(ok) != len(records):
        raise NumericalError("one or more seeds failed; partial artifacts written")
    return 0


_SWEEP_AXES = {
    "f": "factor",
    "factor": "factor",
    "k": "budget_images",
    "budget": "budget_images",
    "mode": "buffer_mode",
}


def _sweep_point(config: ExperimentConfig, axis_field: str, raw_value: str):
    if axis_field == "buffer_mode":
        value = raw_value.strip().lower()
    else:
        try:
            value = int(raw_value)
        except ValueError:
            raise ConfigError(f"sweep value {raw_value!r} is not an integer") from None
    return replace(config, **{axis_field: value}).validate(), value


def cmd_sweep(config: ExperimentConfig, axis: str, values: list[str], out_dir: Path,
              threads: int = 1) -> int:
    axis_key = axis.strip().lower()
    if axis_key not in _SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}: expected f, K, or mode")
    axis_field = _SWEEP_AXES[axis_key]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for raw in values:
        point_config, value = _sweep_point(config, axis_field, raw)
        point_dir = out_dir / f"{axis_field}_{value}"
        point_dir.mkdir(parents=True, exist_ok=True)
        records = _execute_runs(point_config, threads)
        for record in records:
            _write_matrix_csvs(point_dir, record)
        bad = [r for r in records if r["status"] != "ok"]
        if bad:
            raise NumericalError(
                f"sweep point {axis_field}={value} failed on seed {bad[0]['seed']}"
            )
        mean, std = _summary_stats([r["a_end"] for r in records])
        rows.append((value, mean, std))
        print(f"{axis_field} = {value}: mean a_end = {mean:.4f} +- {std:.4f}")
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{axis_field},mean_a_end,std_a_end\n")
        for value, mean, std in rows:
            fh.write(f"{value},{mean!r},{std!r}\n")
    return 0


def cmd_compress(input_path, factor, seed, output_path) -> int:
    image = load_ppm(input_path)
    resolution = require_square(image)
    grid = GridSpec(factor, resolution)
    sample = gps_sample(image.with_label(0), factor, Rng(seed))
    save_ppm(output_path, sample.to_image())
    print(
        f"resolution={resolution} surrogate_side={grid.side} factor={factor} "
        f"ratio={factor * factor} dropped_pixels={grid.dropped_pixels}"
    )
    return 0


def cmd_reconstruct(snapshot_path, class_id, seed, output_path) -> int:
    buf = ReplayBuffer.restore(Path(snapshot_path).read_bytes())
    if buf.mode != MODE_GPS:
        raise ConfigError("reconstruction needs a gps-mode buffer snapshot")
    group_size = buf.factor ** 2
    rng = Rng(seed)
    if class_id is None:
        candidates = [c for c in buf.classes_present()
                      if len(buf.indices_for_class(c)) >= group_size]
        if not candidates:
            raise EmptyStateError(
                f"no class holds {group_size} exemplars; nothing to reconstruct"
            )
        class_id = candidates[0]
    indices = buf.indices_for_class(class_id)
    if len(indices) < group_size:
        raise EmptyStateError(
            f"class {class_id} holds {len(indices)} exemplars, need {group_size}"
        )
    chosen = rng.shuffled(indices)[:group_size]
    parts = [buf.slots[i] for i in chosen]
    recon = grid_concat(parts, buf.factor, slot_indices=chosen)
    save_ppm(output_path, recon.image)
    print(f"class={class_id} side={recon.image.height} slots={list(recon.constituents)}")
    return 0


def cmd_inspect_buffer(snapshot_path) -> int:
    buf = ReplayBuffer.restore(Path(snapshot_path).read_bytes())
    print(f"mode={buf.mode}")
    print(f"budget_images={buf.budget.image_count}")
    print(f"resolution={buf.budget.resolution}")
    print(f"factor={buf.factor}")
    print(f"slots={buf.slot_count}")
    print(f"occupied={buf.occupied_count}")
    print(f"seen={buf.seen_count}")
    print(f"pixels_used={buf.occupied_pixels}")
    print(f"pixels_capacity={buf.budget.capacity_pixels}")
    counts = buf.class_counts()
    print(f"classes={len(counts)}")
    for label, count in counts.items():
        print(f"class_{label}={count}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gps",
        description="Grid-based patch sampling replay: experiments and demos.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config across its seeds")
    p_run.add_argument("--config", required=True, help="path to the experiment config")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config's seed list with one seed")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker processes across seeds")

    p_sweep = sub.add_parser("sweep", help="run one config over an axis of values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, help="f, K, or mode")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values, e.g. 1,2,4")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--threads", type=int, default=1)

    p_comp = sub.add_parser("compress", help="compress one PPM image into a surrogate")
    p_comp.add_argument("input", help="square binary PPM file")
    p_comp.add_argument("--factor", "-f", type=int, default=2)
    p_comp.add_argument("--seed", type=int, default=0)
    p_comp.add_argument("--out", required=True, help="output PPM path")

    p_rec = sub.add_parser("reconstruct",
                           help="tile same-class surrogates from a buffer snapshot")
    p_rec.add_argument("snapshot", help="buffer snapshot (.gpsb) path")
    p_rec.add_argument("--class-id", type=int, default=None)
    p_rec.add_argument("--seed", type=int, default=0)
    p_rec.add_argument("--out", required=True, help="output PPM path")

    p_ins = sub.add_parser("inspect-buffer", help="report a buffer snapshot's contents")
    p_ins.add_argument("snapshot", help="buffer snapshot (.gpsb) path")
    return parser


def _dispatch(args) -> int:
    if args.command == "run":
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seeds=(args.seed,)).validate()
        out_dir = Path(args.out) if args.out else Path(config.out_dir)
        return cmd_run(config, out_dir, threads=args.threads)
    if args.command == "sweep":
        config = load_config(args.config)
        out_dir = Path(args.out) if args.out else Path(config.out_dir)
        values = [v for v in args.values.split(",") if v.strip()]
        return cmd_sweep(config, args.axis, values, out_dir, threads=args.threads)
    if args.command == "compress":
        return cmd_compress(args.input, args.factor, args.seed, args.out)
    if args.command == "reconstruct":
        return cmd_reconstruct(args.snapshot, args.class_id, args.seed, args.out)
    return cmd_inspect_buffer(args.snapshot)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except GpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
