"""Command-line entry point.

Subcommands: validate-annotations, blend, synth, tile, mock-detect, merge,
eval, measure, pipeline. Settings come from flags, a JSON config file, or
defaults, in that precedence order; all randomness derives from one master
seed. Structured log events (one JSON object per line) go to stderr, results
to stdout and to files.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 convergence or
runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import annot, blend, metrics, synth, tile
from .core import ClassLabel, ConfigurationError, Instance, ToolkitError, load_image, save_image
from .seeds import derive_seed

_USAGE_EXIT = 1
_DATA_EXIT = 2
_RUNTIME_EXIT = 3


def log_event(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, sort_keys=True), file=sys.stderr)


class Config:
    """Dotted-path access to the declarative config document."""

    def __init__(self, payload: Optional[dict] = None, source: str = "<none>"):
        self.payload = payload or {}
        self.source = source

    @classmethod
    def load(cls, path) -> "Config":
        if path is None:
            return cls()
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path}: malformed JSON at offset {exc.pos}") from exc
        if not isinstance(payload, dict):
            raise ConfigurationError(f"config {path}: top level must be an object")
        return cls(payload, source=str(path))

    def get(self, dotted: str, default=None):
        node = self.payload
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def pick(self, flag_value, dotted: str, default=None, required: bool = False):
        """Flag value if given, else config value, else default."""
        if flag_value is not None:
            return flag_value
        value = self.get(dotted)
        if value is not None:
            return value
        if required:
            raise ConfigurationError(
                f"missing setting: pass a flag or set config key {dotted!r} in {self.source}"
            )
        return default

    def path(self, flag_value, dotted: str, required: bool = False, must_exist: bool = True):
        value = self.pick(flag_value, dotted, required=required)
        if value is None:
            return None
        resolved = Path(value)
        if must_exist and not resolved.exists():
            raise ConfigurationError(f"config key {dotted}: path does not exist: {resolved}")
        return resolved


def _parse_pair(text: str, name: str) -> tuple[int, int]:
    for sep in ("x", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            try:
                return int(a), int(b)
            except ValueError:
                break
    try:
        single = int(text)
        return single, single
    except ValueError:
        raise ConfigurationError(f"cannot parse {name} {text!r}; expected WxH or dx,dy") from None


def _parse_thresholds(spec: Optional[str]) -> list[float]:
    if spec is None:
        return metrics.default_thresholds()
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"threshold range must be start:stop:step, got {spec!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigurationError("threshold step must be positive")
        values = []
        i = 0
        while True:
            value = round(start + i * step, 10)
            if value > stop + 1e-12:
                break
            values.append(min(value, 1.0))
            i += 1
        return values
    if "," in spec:
        return [float(p) for p in spec.split(",")]
    count = int(spec)
    return metrics.default_thresholds(count)


def _parse_class_filter(name: Optional[str]) -> Optional[ClassLabel]:
    if name is None or name == "damage":
        return ClassLabel.DAMAGE
    if name == "all":
        return None
    return ClassLabel.parse(name)


def _manifest_entries(manifest_path) -> list[annot.AnnotatedImage]:
    return annot.read_image_manifest(manifest_path)


def _entry_instances(entry: annot.AnnotatedImage) -> list[Instance]:
    return [
        Instance(label=label, mask=mask)
        for label, mask in entry.ground_truth_masks()
    ]


# --- subcommand implementations ---

def cmd_validate_annotations(args) -> int:
    images = annot.load_via(args.via, class_key=args.class_key, image_root=args.image_root)
    counts = {label.value: 0 for label in ClassLabel}
    for image in images:
        for region in image.instances:
            counts[region.label.value] += 1
    total = sum(counts.values())
    log_event("annotations_validated", file=str(args.via), images=len(images), regions=total)
    print(f"{len(images)} images, {total} regions ({counts})")
    if args.manifest_out:
        annot.write_image_manifest(args.manifest_out, images)
        print(f"manifest written to {args.manifest_out}")
    if args.split is not None:
        if args.split_out is None:
            raise ConfigurationError("--split requires --split-out")
        manifest = annot.split_manifest(images, args.split, args.seed)
        annot.write_dataset_manifest(args.split_out, manifest)
        print(
            f"split written to {args.split_out}: "
            f"{len(manifest.training)} training, {len(manifest.validation)} validation"
        )
    return 0


def cmd_blend(args) -> int:
    source = load_image(args.src)[..., :3]
    destination = load_image(args.dst)[..., :3]
    mask_image = load_image(args.mask)
    region = (mask_image[..., :3] > 127).any(axis=2)
    dx, dy = _parse_pair(args.offset, "--offset")
    task = blend.CloneTask(
        source=np.ascontiguousarray(source),
        destination=np.ascontiguousarray(destination),
        region=region,
        offset=(dx, dy),
    )
    settings = blend.SolverSettings(tolerance=args.tolerance, max_iterations=args.max_iterations)
    values, report = blend.solve_interior(task, settings)
    output = task.destination.copy()
    output[task.region] = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    save_image(args.out, output)
    log_event(
        "blend_done",
        out=str(args.out),
        iterations=report.iterations,
        residual=report.residual,
        region_pixels=int(region.sum()),
    )
    if args.emit_annotation:
        height, width = output.shape[:2]
        entry = annot.AnnotatedImage(
            path=Path(args.out).name,
            width=width,
            height=height,
            instances=[annot.MaskRegion(label=ClassLabel.parse(args.label), mask=region)],
        )
        annot.write_image_manifest(args.emit_annotation, [entry])
        log_event("blend_annotation_written", path=str(args.emit_annotation))
    return 0


def cmd_synth(args) -> int:
    cfg = Config.load(args.config)
    seed = cfg.pick(args.seed, "seed", required=True)
    exemplar_dir = cfg.path(args.exemplars, "paths.exemplars", required=True)
    background_dir = cfg.path(args.backgrounds, "paths.backgrounds", required=True)
    out_dir = cfg.path(args.out, "paths.output", required=True, must_exist=False)
    canvas = cfg.pick(args.canvas and list(_parse_pair(args.canvas, "--canvas")), "synth.canvas", [1024, 768])
    count = cfg.pick(args.count, "synth.count", 8)
    workers = cfg.pick(args.workers, "synth.workers", 1)

    settings = synth.SynthSettings(
        canvas_size=(int(canvas[0]), int(canvas[1])),
        background_dir=str(background_dir),
        exemplar_count=tuple(cfg.get("synth.exemplar_count", (2, 8))),
        scale_range=tuple(cfg.get("synth.scale_range", (0.3, 2.0))),
        rotation_range=tuple(cfg.get("synth.rotation_range", (-180.0, 180.0))),
        surround_crop_range=tuple(cfg.get("synth.surround_crop_range", (0.0, 0.5))),
        seed=int(seed),
    )
    library = synth.load_exemplar_library(exemplar_dir)
    log_event("synth_start", count=int(count), seed=int(seed), workers=int(workers))
    samples = synth.generate_samples(library, settings, int(count), workers=int(workers))
    manifest_path = synth.write_dataset(samples, out_dir)
    instances = sum(len(s.instances) for s in samples)
    log_event("synth_done", manifest=str(manifest_path), samples=len(samples), instances=instances)
    print(f"{len(samples)} samples ({instances} instances) written under {out_dir}")
    return 0


def _do_tile(image_path, image_id: str, window: tuple[int, int], overlap: int, out_dir: Path):
    image = load_image(image_path)[..., :3]
    height, width = image.shape[:2]
    plan = tile.plan_tiling((width, height), window, overlap)
    crops = tile.extract_windows(image, plan)
    window_files = []
    for k, crop in enumerate(crops):
        name = f"windows/window_{k:03d}.png"
        save_image(out_dir / name, crop)
        window_files.append(name)
    doc = {
        "image_id": image_id,
        "image_path": str(image_path),
        "plan": tile.plan_to_dict(plan),
        "windows": window_files,
    }
    tiles_path = out_dir / "tiles.json"
    tiles_path.parent.mkdir(parents=True, exist_ok=True)
    tiles_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
    log_event("tile_done", image=str(image_path), windows=len(crops), out=str(tiles_path))
    return plan, tiles_path


def cmd_tile(args) -> int:
    window = _parse_pair(args.window, "--window")
    image_id = args.image_id or Path(args.image).stem
    _do_tile(args.image, image_id, window, args.overlap, Path(args.out))
    return 0


def _load_tiles_doc(tiles_path) -> dict:
    doc = json.loads(Path(tiles_path).read_text(encoding="utf-8"))
    doc["plan_obj"] = tile.plan_from_dict(doc["plan"])
    return doc


def _select_entry(entries: list[annot.AnnotatedImage], image_id: Optional[str]) -> annot.AnnotatedImage:
    if image_id is None:
        if len(entries) == 1:
            return entries[0]
        raise ConfigurationError("--image-id is required when the manifest holds several images")
    for entry in entries:
        if entry.image_id == image_id:
            return entry
    raise ToolkitError(f"image id {image_id!r} not found in manifest")


def _do_mock_windows(
    entry: annot.AnnotatedImage,
    plan: tile.TilingPlan,
    mock_cfg: tile.MockDetectorSettings,
    master_seed: int,
    out_dir: Path,
) -> list[Path]:
    truth = _entry_instances(entry)
    paths = []
    for k, window in enumerate(plan.windows):
        clipped = tile.clip_to_window(truth, window)
        settings = tile.MockDetectorSettings(
            dilation_radius=mock_cfg.dilation_radius,
            seed=derive_seed(master_seed, "mock", entry.image_id, k),
            false_positive_rate=mock_cfg.false_positive_rate,
        )
        preds = tile.mock_detect(
            clipped,
            window.width,
            window.height,
            settings,
            image_id=entry.image_id,
            window_index=k,
        )
        path = out_dir / "predictions" / f"window_{k:03d}.json"
        tile.write_predictions(path, preds)
        paths.append(path)
    return paths


def cmd_mock_detect(args) -> int:
    entries = _manifest_entries(args.truth)
    entry = _select_entry(entries, args.image_id)
    mock_cfg = tile.MockDetectorSettings(
        dilation_radius=args.dilation,
        seed=0,
        false_positive_rate=args.fp_rate,
    )
    out_dir = Path(args.out)
    if args.tiles:
        doc = _load_tiles_doc(args.tiles)
        paths = _do_mock_windows(entry, doc["plan_obj"], mock_cfg, args.seed, out_dir)
        log_event("mock_detect_done", windows=len(paths), out=str(out_dir))
    else:
        truth = _entry_instances(entry)
        settings = tile.MockDetectorSettings(
            dilation_radius=args.dilation,
            seed=derive_seed(args.seed, "mock", entry.image_id, "full"),
            false_positive_rate=args.fp_rate,
        )
        preds = tile.mock_detect(
            truth, entry.width, entry.height, settings, image_id=entry.image_id
        )
        path = out_dir / f"{entry.image_id}.json"
        tile.write_predictions(path, preds)
        log_event("mock_detect_done", windows=0, out=str(path))
    return 0


def _do_merge(tiles_path, pred_dir: Path, out_path: Path, min_overlap: int) -> tile.PredictionSet:
    doc = _load_tiles_doc(tiles_path)
    plan: tile.TilingPlan = doc["plan_obj"]
    per_window = []
    for k in range(len(plan.windows)):
        path = pred_dir / f"window_{k:03d}.json"
        if not path.is_file():
            raise ToolkitError(f"missing per-window predictions: {path}")
        per_window.append(tile.read_predictions(path))
    merged = tile.merge_predictions(
        per_window, plan, tile.MergeSettings(min_overlap_pixels=min_overlap)
    )
    tile.write_predictions(out_path, merged)
    log_event("merge_done", instances=len(merged.instances), out=str(out_path))
    return merged


def cmd_merge(args) -> int:
    pred_dir = Path(args.pred_dir) if args.pred_dir else Path(args.tiles).parent / "predictions"
    _do_merge(args.tiles, pred_dir, Path(args.out), args.min_overlap)
    return 0


def _find_predictions(pred_arg: Path, image_id: str) -> Optional[Path]:
    if pred_arg.is_file():
        return pred_arg
    for candidate in (
        pred_arg / f"{image_id}.json",
        pred_arg / image_id / "merged.json",
    ):
        if candidate.is_file():
            return candidate
    return None


def _do_eval(
    entries: list[annot.AnnotatedImage],
    pred_arg: Path,
    thresholds: list[float],
    class_filter: Optional[ClassLabel],
    out_csv: Optional[Path],
    out_json: Optional[Path],
    overlays_dir: Optional[Path],
    dataset_root: Optional[Path],
) -> metrics.ThresholdSweep:
    pairs = []
    for entry in entries:
        pred_path = _find_predictions(pred_arg, entry.image_id)
        if pred_path is None:
            raise ToolkitError(f"no predictions found for image {entry.image_id!r} under {pred_arg}")
        predictions = tile.read_predictions(pred_path)
        pairs.append(
            metrics.EvalPair(
                image_id=entry.image_id,
                ground_truth=_entry_instances(entry),
                predictions=predictions,
            )
        )
    result = metrics.sweep(pairs, thresholds, class_filter)
    if out_csv:
        metrics.write_sweep_csv(out_csv, result)
    if out_json:
        metrics.write_report_json(
            out_json,
            result,
            meta={
                "images": [e.image_id for e in entries],
                "class_filter": class_filter.value if class_filter else "all",
            },
        )
    if overlays_dir:
        if dataset_root is None:
            raise ConfigurationError("--overlays requires --dataset-root to locate images")
        for entry, pair in zip(entries, pairs):
            image = load_image(Path(dataset_root) / entry.path)[..., :3]
            overlay = metrics.overlay_detections(image, pair, thresholds[0], class_filter)
            save_image(Path(overlays_dir) / f"{entry.image_id}.png", overlay)
    defined = [(t, v) for t, v in zip(result.thresholds, result.aggregate_iou) if v is not None]
    if defined:
        best_t, best_iou = max(defined, key=lambda tv: tv[1])
        log_event("eval_done", best_iou=best_iou, best_threshold=best_t, pairs=len(pairs))
        print(f"best aggregate IoU {best_iou:.4f} at threshold {best_t:g} over {len(pairs)} images")
    else:
        log_event("eval_done", best_iou=None, pairs=len(pairs))
        print("aggregate IoU undefined at every threshold (no masks on either side)")
    return result


def cmd_eval(args) -> int:
    entries = _manifest_entries(args.truth)
    if args.image_id:
        entries = [_select_entry(entries, args.image_id)]
    _do_eval(
        entries,
        Path(args.pred),
        _parse_thresholds(args.thresholds),
        _parse_class_filter(args.classes),
        Path(args.out_csv) if args.out_csv else None,
        Path(args.out_json) if args.out_json else None,
        Path(args.overlays) if args.overlays else None,
        Path(args.dataset_root) if args.dataset_root else None,
    )
    return 0


def cmd_measure(args) -> int:
    predictions = tile.read_predictions(args.pred)
    if not 0 <= args.index < len(predictions.instances):
        raise ToolkitError(
            f"instance index {args.index} out of range; file holds {len(predictions.instances)}"
        )
    instance = predictions.instances[args.index]
    scale = metrics.ReferenceScale(
        reference_length=args.ref_length,
        reference_extent_px=args.ref_extent,
        units=args.units,
    )
    measurement = metrics.measure_area(instance, scale)
    payload = {
        "image_id": predictions.image_id,
        "instance": args.index,
        "class": instance.label.value,
        "pixels": instance.area(),
        "area": measurement.area,
        "units": f"{measurement.units}^2",
        "units_per_pixel": measurement.units_per_pixel,
        "fronto_parallel_assumed": measurement.fronto_parallel_assumed,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_pipeline(args) -> int:
    cfg = Config.load(args.config)
    seed = int(cfg.pick(args.seed, "seed", required=True))
    manifest_path = cfg.path(args.truth, "paths.manifest", required=True)
    dataset_root = cfg.path(args.dataset_root, "paths.dataset_root", must_exist=True) or manifest_path.parent
    out_dir = cfg.path(args.out, "paths.output", required=True, must_exist=False)
    if args.window is not None:
        window = _parse_pair(args.window, "--window")
    else:
        window = tuple(cfg.get("tiling.window", (1024, 1024)))
    overlap = int(cfg.pick(args.overlap, "tiling.overlap", 256))
    mock_cfg = tile.MockDetectorSettings(
        dilation_radius=int(cfg.pick(args.dilation, "mock.dilation_radius", 0)),
        seed=0,
        false_positive_rate=float(cfg.pick(args.fp_rate, "mock.false_positive_rate", 0.0)),
    )
    thresholds = _parse_thresholds(args.thresholds or cfg.get("eval.thresholds"))
    class_filter = _parse_class_filter(args.classes or cfg.get("eval.class_filter"))

    entries = _manifest_entries(manifest_path)
    log_event("pipeline_start", images=len(entries), seed=seed)
    for entry in entries:
        image_out = out_dir / entry.image_id
        _, tiles_path = _do_tile(
            Path(dataset_root) / entry.path, entry.image_id, window, overlap, image_out
        )
        doc = _load_tiles_doc(tiles_path)
        _do_mock_windows(entry, doc["plan_obj"], mock_cfg, seed, image_out)
        _do_merge(tiles_path, image_out / "predictions", image_out / "merged.json", args.min_overlap)
    _do_eval(
        entries,
        out_dir,
        thresholds,
        class_filter,
        out_dir / "eval" / "sweep.csv",
        out_dir / "eval" / "report.json",
        out_dir / "eval" / "overlays" if args.overlays else None,
        Path(dataset_root),
    )
    log_event("pipeline_done", out=str(out_dir))
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="towervision",
        description="Deterministic tooling around a pluggable damage detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-annotations", help="check a VIA project and summarize it")
    p.add_argument("--via", required=True)
    p.add_argument("--image-root", default=None)
    p.add_argument("--class-key", default=annot.DEFAULT_CLASS_KEY)
    p.add_argument("--manifest-out", default=None)
    p.add_argument("--split", type=float, default=None, help="validation fraction")
    p.add_argument("--split-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate_annotations)

    p = sub.add_parser("blend", help="seamlessly clone a source patch into a destination")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--offset", default="0,0")
    p.add_argument("--out", required=True)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--emit-annotation", default=None)
    p.add_argument("--label", default="damage")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("synth", help="generate synthetic labeled training images")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--exemplars", default=None)
    p.add_argument("--backgrounds", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--canvas", default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tile", help="subdivide an image into overlapping windows")
    p.add_argument("--image", required=True)
    p.add_argument("--image-id", default=None)
    p.add_argument("--window", default="1024")
    p.add_argument("--overlap", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("mock-detect", help="run the deterministic mock detector")
    p.add_argument("--truth", required=True, help="canonical image manifest")
    p.add_argument("--image-id", default=None)
    p.add_argument("--tiles", default=None, help="tiles.json for per-window output")
    p.add_argument("--dilation", type=int, default=0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mock_detect)

    p = sub.add_parser("merge", help="merge per-window predictions into the full frame")
    p.add_argument("--tiles", required=True)
    p.add_argument("--pred-dir", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--min-overlap", type=int, default=1)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="precision/recall and aggregate IoU sweeps")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True, help="predictions file or directory")
    p.add_argument("--image-id", default=None)
    p.add_argument("--thresholds", default=None, help='count, "a,b,c", or start:stop:step')
    p.add_argument("--classes", default=None, help="damage (default), dirt, or all")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.add_argument("--overlays", default=None)
    p.add_argument("--dataset-root", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("measure", help="physical area of a predicted instance")
    p.add_argument("--pred", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--ref-length", type=float, required=True)
    p.add_argument("--ref-extent", type=float, required=True)
    p.add_argument("--units", default="mm")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("pipeline", help="tile, mock-detect, merge, and eval in one run")
    p.add_argument("--config", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--dataset-root", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", default=None)
    p.add_argument("--overlap", type=int, default=None)
    p.add_argument("--dilation", type=int, default=None)
    p.add_argument("--fp-rate", type=float, default=None)
    p.add_argument("--thresholds", default=None)
    p.add_argument("--classes", default=None)
    p.add_argument("--min-overlap", type=int, default=1)
    p.add_argument("--overlays", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else _USAGE_EXIT
    try:
        return args.func(args)
    except ConfigurationError as exc:
        log_event("error", kind="config", message=str(exc))
        return _USAGE_EXIT
    except blend.ConvergenceError as exc:
        log_event("error", kind="convergence", message=str(exc), residual=exc.residual)
        return _RUNTIME_EXIT
    except (ToolkitError, OSError) as exc:
        log_event("error", kind="data", message=str(exc))
        return _DATA_EXIT
    except Exception as exc:  # pragma: no cover - defensive
        log_event("error", kind="runtime", message=f"{type(exc).__name__}: {exc}")
        return _RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
