"""The `slz` command line: tile, train, eval, descend, report.

Every subcommand accepts long-form flags plus an optional YAML config file
(`--config`); explicit flags win over config values, which win over the
built-in defaults. Each run echoes its fully resolved configuration to
`effective_config.yaml` in the output directory, so runs are reproducible
from artifacts alone. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data, metrics, pipeline, report, synth, unet
from .geometry import CameraModel, backproject_crop
from .pipeline import crop_window


class DataError(Exception):
    """Bad or inconsistent input data (exit code 2)."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over config-file values over defaults. Flags parse
    with default=None so an unset flag is distinguishable."""
    config = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise DataError(f"{path}: config must be a mapping")
        config = doc
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    return resolved


def _echo_config(out_dir: Path, subcommand: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"subcommand": subcommand}
    doc.update({k: v for k, v in sorted(resolved.items())})
    (out_dir / "effective_config.yaml").write_text(
        yaml.safe_dump(doc, sort_keys=False))


def _require_value(resolved: dict, key: str) -> None:
    if resolved[key] is None:
        raise DataError(f"missing required option --{key.replace('_', '-')}")


# ---------------------------------------------------------------------------
# tile
# ---------------------------------------------------------------------------

_TILE_DEFAULTS = dict(in_dir=None, out=None, tile_size=256, scale=1.0,
                      scheme="model3", palette=None)


def cmd_tile(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _TILE_DEFAULTS)
    _require_value(cfg, "in_dir")
    _require_value(cfg, "out")
    in_dir = Path(cfg["in_dir"])
    out_dir = Path(cfg["out"])
    palette = data.load_palette(cfg["palette"])
    scheme = data.load_scheme(cfg["scheme"], palette)

    images_dir = in_dir / "images"
    masks_dir = in_dir / "masks"
    if not images_dir.is_dir():
        raise DataError(f"no images directory under {in_dir}")
    image_paths = sorted(images_dir.glob("*.png"))
    if not image_paths:
        raise DataError(f"no PNG images in {images_dir}")

    tiles: list[data.LabeledTile] = []
    skipped: list[str] = []
    for img_path in image_paths:
        mask_path = masks_dir / img_path.name
        if not mask_path.exists():
            skipped.append(img_path.name)
            continue
        image = data.load_image_png(img_path)
        color_mask = data.load_color_mask_png(mask_path)
        base_mask = data.decode_palette_mask(color_mask, palette)
        mask = data.remap(base_mask, scheme)
        tiles.extend(data.tile(image, mask, tile_size=int(cfg["tile_size"]),
                               scale=float(cfg["scale"]),
                               source=img_path.stem))
    for name in skipped:
        print(f"warning: no mask for {name}, skipped", file=sys.stderr)
    if not tiles:
        raise DataError("no image/mask pairs could be tiled")
    _echo_config(out_dir, "tile", cfg)
    data.save_tile_corpus(tiles, out_dir, scheme.name, int(cfg["tile_size"]))
    print(f"wrote {len(tiles)} tiles to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = dict(tiles=None, out=None, scheme="model3", depth=2,
                       base_channels=8, seed=0, epochs=10, batch_size=8,
                       learning_rate=1e-3, max_steps=None)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _TRAIN_DEFAULTS)
    _require_value(cfg, "tiles")
    _require_value(cfg, "out")
    out_dir = Path(cfg["out"])
    scheme = data.load_scheme(cfg["scheme"])
    try:
        _, _, tiles = data.load_tile_corpus(cfg["tiles"])
    except FileNotFoundError as e:
        raise DataError(str(e))
    for t in tiles:
        if t.mask.max() >= scheme.num_classes:
            raise DataError(
                f"tile {t.source} r{t.row} c{t.col} holds class "
                f"{int(t.mask.max())} but scheme '{scheme.name}' has "
                f"{scheme.num_classes} classes")

    net_cfg = unet.UNetConfig(depth=int(cfg["depth"]),
                              base_channels=int(cfg["base_channels"]),
                              num_classes=scheme.num_classes,
                              seed=int(cfg["seed"]))
    params = unet.build(net_cfg)
    hyper = unet.TrainConfig(
        epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        shuffle_seed=int(cfg["seed"]),
        learning_rate=float(cfg["learning_rate"]),
        max_steps=None if cfg["max_steps"] is None else int(cfg["max_steps"]))
    result = unet.train(params, tiles, hyper)

    _echo_config(out_dir, "train", cfg)
    unet.save_checkpoint(result.params, out_dir / "checkpoint.slzk")
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(result.loss_history):
            writer.writerow([i, f"{loss:.8f}"])
    score = unet.mean_iou_on_tiles(result.params, tiles)
    print(f"trained {len(result.loss_history)} steps; "
          f"final loss {result.loss_history[-1]:.4f}; "
          f"train mean IOU {score.mean:.4f}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_EVAL_DEFAULTS = dict(checkpoint=None, tiles=None, out=None, scheme="model3")


def evaluate_tiles(predict_fn, tiles, scheme: data.ClassScheme
                   ) -> metrics.IouResult:
    """Aggregate a confusion matrix over tiles with an arbitrary predictor
    (tile -> mask) and reduce it to per-class/mean IOU."""
    k = scheme.num_classes
    cm = np.zeros((k, k), dtype=np.int64)
    for t in tiles:
        cm += metrics.confusion(predict_fn(t), t.mask, k)
    return metrics.iou(cm)


def write_eval_csv(path, result: metrics.IouResult,
                   scheme: data.ClassScheme) -> None:
    """One row per evaluation: per-class IOUs in scheme order (other last),
    then the mean over defined classes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*scheme.output_classes, "mean", "flags"])
        cells = ["" if math.isnan(v) else f"{v:.6f}" for v in result.per_class]
        flags = ";".join(f"iou_undefined:{scheme.output_classes[i]}"
                         for i, d in enumerate(result.defined) if not d)
        writer.writerow([*cells, f"{result.mean:.6f}", flags])


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _EVAL_DEFAULTS)
    _require_value(cfg, "checkpoint")
    _require_value(cfg, "tiles")
    _require_value(cfg, "out")
    out_dir = Path(cfg["out"])
    scheme = data.load_scheme(cfg["scheme"])
    try:
        params = unet.load_checkpoint(cfg["checkpoint"])
        _, _, tiles = data.load_tile_corpus(cfg["tiles"])
    except FileNotFoundError as e:
        raise DataError(str(e))
    if params.config.num_classes != scheme.num_classes:
        raise DataError(
            f"checkpoint predicts {params.config.num_classes} classes but "
            f"scheme '{scheme.name}' defines {scheme.num_classes}")
    result = evaluate_tiles(
        lambda t: unet.predict_mask(params, t.image), tiles, scheme)
    _echo_config(out_dir, "eval", cfg)
    write_eval_csv(out_dir / "eval.csv", result, scheme)
    cells = " ".join(f"{n}={v:.3f}" for n, v in
                     zip(scheme.output_classes, result.per_class)
                     if not math.isnan(v))
    print(f"{cells} mean={result.mean:.3f}")
    return 0


# ---------------------------------------------------------------------------
# descend
# ---------------------------------------------------------------------------

_DESCEND_DEFAULTS = dict(checkpoint=None, oracle=None, manifest=None, out=None,
                         scheme="model3", stride=1, crop_fraction=1.0,
                         threshold=0.84, footprint_m=1.0, fov_deg=107.0,
                         drop_per_frame=None)


def _descent_metrics(records, decisions, summary, scheme, cfg_pipeline):
    """Per-processed-frame IOU and FPR against the initial frame's mask
    back-projected to each altitude."""
    truth0 = data.remap(records[0].load_truth_mask(), scheme)
    h0 = records[0].altitude_m
    by_index = {r.frame_index: r for r in records}
    rows = []
    for d in decisions:
        rec = by_index[d.frame_index]
        if rec.altitude_m <= 0 or rec.altitude_m > h0:
            continue
        projected = backproject_crop(truth0, h0, rec.altitude_m, kind="mask")
        y0, x0, h, w = crop_window(truth0.shape[0], truth0.shape[1],
                                   cfg_pipeline.crop_fraction)
        truth = projected[y0:y0 + h, x0:x0 + w]
        pred = summary.pred_masks[d.frame_index]
        cm = metrics.confusion(pred, truth, scheme.num_classes)
        rows.append(metrics.FrameMetrics(
            frame_index=d.frame_index, altitude_m=rec.altitude_m,
            iou_result=metrics.iou(cm),
            fpr_result=metrics.fpr(metrics.to_binary(pred, scheme),
                                   metrics.to_binary(truth, scheme))))
    return rows


def cmd_descend(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _DESCEND_DEFAULTS)
    _require_value(cfg, "manifest")
    _require_value(cfg, "out")
    if not cfg["oracle"] and cfg["checkpoint"] is None:
        raise DataError("choose a segmenter: --checkpoint or --oracle")
    out_dir = Path(cfg["out"])
    scheme = data.load_scheme(cfg["scheme"])
    camera = CameraModel(fov_degrees=float(cfg["fov_deg"]))
    pipe_cfg = pipeline.PipelineConfig(
        scheme=scheme, stride=int(cfg["stride"]),
        crop_fraction=float(cfg["crop_fraction"]),
        dynamic_iou_threshold=float(cfg["threshold"]),
        drone_footprint_m=float(cfg["footprint_m"]))
    if cfg["oracle"]:
        segmenter = pipeline.OracleSegmenter(scheme)
    else:
        try:
            params = unet.load_checkpoint(cfg["checkpoint"])
        except FileNotFoundError as e:
            raise DataError(str(e))
        segmenter = pipeline.UNetSegmenter(params, scheme)

    manifests = cfg["manifest"]
    if isinstance(manifests, (str, Path)):
        manifests = [manifests]
    _echo_config(out_dir, "descend", {**cfg, "manifest": list(map(str, manifests))})

    env_rows: dict[str, list[metrics.FrameMetrics]] = {}
    for manifest in manifests:
        try:
            env, records = synth.load_descent_manifest(manifest)
        except FileNotFoundError as e:
            raise DataError(str(e))
        if cfg["oracle"] and not all(r.has_truth for r in records):
            raise DataError(f"{manifest}: the oracle segmenter needs ground-"
                            f"truth masks for every frame")
        name = Path(manifest).parent.name or "run"
        want_metrics = all(r.has_truth for r in records)
        decisions, summary = pipeline.run_descent(
            segmenter, records, pipe_cfg, camera, keep_masks=want_metrics)
        pipeline.write_decisions_csv(out_dir / f"decisions_{name}.csv", decisions)
        ious = [v for _, _, v in summary.iou_series]
        floor = min(ious) if ious else float("nan")
        print(f"{name} [{env}]: {summary.processed_frames} frames processed, "
              f"{summary.total_pixels_processed} pixels, "
              f"min inter-frame IOU {floor:.4f}")
        if want_metrics:
            rows = _descent_metrics(records, decisions, summary, scheme, pipe_cfg)
            metrics.write_metrics_csv(out_dir / f"metrics_{name}.csv", rows,
                                      scheme.output_classes)
            env_rows.setdefault(env, []).extend(rows)

    if env_rows:
        with open(out_dir / "environment_summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["environment", "frame_index", "altitude_m",
                             "mean_iou", "fpr", "runs"])
            for env in sorted(env_rows):
                per_frame: dict[int, list[metrics.FrameMetrics]] = {}
                for row in env_rows[env]:
                    per_frame.setdefault(row.frame_index, []).append(row)
                for idx in sorted(per_frame):
                    group = per_frame[idx]
                    mean_iou = float(np.mean([g.iou_result.mean for g in group]))
                    mean_fpr = float(np.mean([g.fpr_result.value for g in group]))
                    alt = float(np.mean([g.altitude_m for g in group]))
                    writer.writerow([env, idx, f"{alt:.6f}", f"{mean_iou:.6f}",
                                     f"{mean_fpr:.6f}", len(group)])
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_REPORT_DEFAULTS = dict(decisions=None, metrics=None, env_summary=None, out=None)


def _read_csv_columns(path, columns, numeric) -> dict[str, list]:
    """Read the named columns; numeric ones must parse as float on every row
    (empty cells are skipped row-wise)."""
    out: dict[str, list] = {c: [] for c in columns}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for i, row in enumerate(reader, start=2):
            values = {}
            skip = False
            for c in columns:
                cell = row[c]
                if c in numeric:
                    if cell == "":
                        skip = True
                        break
                    try:
                        values[c] = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: row {i}: bad number {cell!r} in column {c!r}")
                else:
                    values[c] = cell
            if skip:
                continue
            for c in columns:
                out[c].append(values[c])
    return out


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _REPORT_DEFAULTS)
    _require_value(cfg, "out")
    out_dir = Path(cfg["out"])
    if not (cfg["decisions"] or cfg["metrics"] or cfg["env_summary"]):
        raise DataError("nothing to plot: pass --decisions, --metrics "
                        "or --env-summary")
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, "report", cfg)
    written = []

    def as_list(v):
        return [v] if isinstance(v, (str, Path)) else list(v)

    if cfg["decisions"]:
        series = []
        for path in as_list(cfg["decisions"]):
            cols = _read_csv_columns(path, ["altitude_m", "interframe_binary_iou"],
                                     numeric={"altitude_m", "interframe_binary_iou"})
            series.append(report.Series(Path(path).stem, cols["altitude_m"],
                                        cols["interframe_binary_iou"]))
        path = out_dir / "iou_vs_altitude.svg"
        report.write_chart(path, series, "altitude (m)",
                           "inter-frame binary IOU")
        written.append(path)

    if cfg["metrics"]:
        series = []
        for path in as_list(cfg["metrics"]):
            cols = _read_csv_columns(path, ["frame_index", "mean_iou"],
                                     numeric={"frame_index", "mean_iou"})
            series.append(report.Series(Path(path).stem, cols["frame_index"],
                                        cols["mean_iou"]))
        path = out_dir / "mean_iou_per_frame.svg"
        report.write_chart(path, series, "frame index", "mean IOU")
        written.append(path)

    if cfg["env_summary"]:
        cols = _read_csv_columns(cfg["env_summary"],
                                 ["environment", "frame_index", "mean_iou", "fpr"],
                                 numeric={"frame_index", "mean_iou", "fpr"})
        envs = sorted(set(cols["environment"]))

        def env_series(metric):
            out = []
            for env in envs:
                xs = [x for e, x in zip(cols["environment"], cols["frame_index"])
                      if e == env]
                ys = [y for e, y in zip(cols["environment"], cols[metric])
                      if e == env]
                out.append(report.Series(env, xs, ys))
            return out

        path = out_dir / "iou_per_frame_by_env.svg"
        report.write_chart(path, env_series("mean_iou"), "frame index",
                           "mean IOU")
        written.append(path)
        path = out_dir / "fpr_per_frame_by_env.svg"
        report.write_chart(path, env_series("fpr"), "frame index",
                           "false positive rate")
        written.append(path)

    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="slz",
                     description="Safe-landing-zone toolkit: dataset prep, "
                                 "training, evaluation, descent simulation "
                                 "and reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="cut image/mask pairs into labeled tiles")
    p.add_argument("--in-dir", dest="in_dir")
    p.add_argument("--out")
    p.add_argument("--tile-size", type=int, dest="tile_size")
    p.add_argument("--scale", type=float)
    p.add_argument("--scheme")
    p.add_argument("--palette")
    p.add_argument("--config")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--tiles")
    p.add_argument("--out")
    p.add_argument("--scheme")
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a tile corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--tiles")
    p.add_argument("--out")
    p.add_argument("--scheme")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("descend", help="run the landing pipeline on descents")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_const", const=True)
    p.add_argument("--manifest", action="append")
    p.add_argument("--out")
    p.add_argument("--scheme")
    p.add_argument("--stride", type=int)
    p.add_argument("--crop-fraction", type=float, dest="crop_fraction")
    p.add_argument("--threshold", type=float)
    p.add_argument("--footprint-m", type=float, dest="footprint_m")
    p.add_argument("--fov-deg", type=float, dest="fov_deg")
    p.add_argument("--drop-per-frame", type=float, dest="drop_per_frame")
    p.add_argument("--config")
    p.set_defaults(func=cmd_descend)

    p = sub.add_parser("report", help="render SVG charts from descent CSVs")
    p.add_argument("--decisions", action="append")
    p.add_argument("--metrics", action="append")
    p.add_argument("--env-summary", dest="env_summary")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    try:
        return args.func(args)
    except (DataError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
