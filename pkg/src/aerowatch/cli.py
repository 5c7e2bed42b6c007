"""Command-line entry point.

Exit codes: 0 ok, 1 other error, 2 no motion found, 3 imbalanced states,
4 model/stream dimension mismatch, 5 detections/labels length mismatch,
6 malformed spec or config file. Detections go to stdout as JSON lines;
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .background import AgmmConfig
from .classifier import evaluate
from .detector import (DimensionMismatchError, ImbalanceError, NoMotionError, StreamingDetector,
                       TrainOptions, bench_detect, detect, dumps_models, loads_models, majority_blocks, train)
from .imgproc import Region
from .plots import scatter_svg, series_svg, write_series_csv
from .rfklt import LkConfig
from .video import (AugmentSpec, SynthScene, VideoMeta, augment_frames, iter_frames, load_video,
                    read_header, read_video, synth_scene, write_video)

log = logging.getLogger("aerowatch")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_MOTION = 2
EXIT_IMBALANCE = 3
EXIT_DIMENSIONS = 4
EXIT_LENGTH = 5
EXIT_SPEC = 6


class SpecError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ------------------------------------------------------------- spec files


def bundled_spec(name: str) -> Path:
    return Path(str(resources.files("aerowatch") / "specs" / name))


def _read_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists() and not p.is_absolute() and bundled_spec(p.name).exists():
        p = bundled_spec(p.name)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError("$", f"invalid JSON ({exc})") from None
    except OSError as exc:
        raise SpecError("$", str(exc)) from None
    if not isinstance(data, dict):
        raise SpecError("$", "expected an object")
    return data


def _check_fields(data: dict, cls, prefix: str, required=()) -> None:
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise SpecError(f"{prefix}.{key}", "unknown field")
    for key in required:
        if key not in data:
            raise SpecError(f"{prefix}.{key}", "missing required field")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_numbers(data: dict, prefix: str, keys) -> None:
    for key in keys:
        if key not in data:
            continue
        v = data[key]
        ok = _is_number(v) or (isinstance(v, list) and len(v) == 2 and all(map(_is_number, v)))
        if not ok:
            raise SpecError(f"{prefix}.{key}", "expected a number or a [lo, hi] pair")


def parse_scene(data: dict) -> SynthScene:
    _check_fields(data, SynthScene, "$", required=("meta", "object_box"))
    meta = data["meta"]
    if not isinstance(meta, dict):
        raise SpecError("$.meta", "expected an object")
    _check_fields(meta, VideoMeta, "$.meta", required=("width", "height", "fps", "frame_count"))
    for key, v in meta.items():
        if not isinstance(v, int) or isinstance(v, bool):
            raise SpecError(f"$.meta.{key}", "expected an integer")
    box = data["object_box"]
    if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
        raise SpecError("$.object_box", "expected [x, y, w, h] integers")
    for i, iv in enumerate(data.get("on_intervals", [])):
        if not (isinstance(iv, list) and len(iv) == 2 and all(isinstance(v, int) for v in iv)):
            raise SpecError(f"$.on_intervals[{i}]", "expected [start, end) integers")
    try:
        return SynthScene.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SpecError("$", str(exc)) from None


def parse_augment(data: dict) -> AugmentSpec:
    _check_fields(data, AugmentSpec, "$")
    _check_numbers(data, "$", ("row_ratio", "col_ratio", "gray_delta", "snr"))
    box = data.get("box")
    if box is not None and not (isinstance(box, list) and len(box) == 4):
        raise SpecError("$.box", "expected [x, y, w, h]")
    try:
        return AugmentSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SpecError("$", str(exc)) from None


def parse_config(data: dict) -> tuple[AgmmConfig, LkConfig]:
    for key in data:
        if key not in ("agmm", "lk"):
            raise SpecError(f"$.{key}", "unknown section")
    agmm = data.get("agmm", {})
    lk = data.get("lk", {})
    _check_fields(agmm, AgmmConfig, "$.agmm")
    _check_fields(lk, LkConfig, "$.lk")
    try:
        return AgmmConfig(**agmm), LkConfig(**lk)
    except (TypeError, ValueError) as exc:
        raise SpecError("$", str(exc)) from None


def _parse_box(text: str) -> tuple[int, int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected x,y,w,h")
    return tuple(parts)


# --------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    scene = parse_scene(_read_json(args.spec))
    if args.seed is not None:
        scene.seed = args.seed
    synth_scene(scene, args.out, args.labels)
    log.info("wrote %d frames to %s", scene.meta.frame_count, args.out)
    return EXIT_OK


def cmd_augment(args) -> int:
    data = _read_json(args.spec)
    if args.box is not None:
        data["box"] = list(args.box)
    if args.seed is not None:
        data["seed"] = args.seed
    spec = parse_augment(data)
    meta, frames = read_video(args.input)
    write_video(meta, augment_frames(frames, spec), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    agmm, lk = parse_config(_read_json(args.config)) if args.config else (AgmmConfig(), LkConfig())
    meta, frames = load_video(args.video)
    opts = TrainOptions(levels=args.levels, window=args.window, seed=args.seed,
                        reference_index=args.reference_index, agmm=agmm, lk=lk,
                        region=Region(*args.region) if args.region else None)
    try:
        model, report = train(frames, meta, opts)
    except NoMotionError as exc:
        log.error("%s", exc)
        return EXIT_NO_MOTION
    except ImbalanceError as exc:
        log.error("%s", exc)
        return EXIT_IMBALANCE
    for w in report.warnings:
        log.warning("%s", w)
    Path(args.out).write_text(dumps_models([model]))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("region %s, balance %.3f, CR %.4f", model.region.box, report.balance_ratio,
             report.class_coefficient)
    return EXIT_OK


def _open_stream(path: str):
    if path == "-":
        fh = sys.stdin.buffer
        meta = read_header(fh)
        return meta, iter_frames(fh, meta)
    return read_video(path)


def cmd_detect(args) -> int:
    models = loads_models(Path(args.model).read_text())
    meta, frames = _open_stream(args.video)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.every:
            block = max(1, int(round(args.every * meta.fps)))
            per_model: dict[int, list] = {}
            for det in detect(models, meta, frames):
                buf = per_model.setdefault(det.model, [])
                buf.append(det)
                if len(buf) == block:
                    for row in majority_blocks(buf, block):
                        out.write(json.dumps(row) + "\n")
                    buf.clear()
            for buf in per_model.values():
                for row in majority_blocks(buf, block) if buf else []:
                    out.write(json.dumps(row) + "\n")
        else:
            for det in detect(models, meta, frames):
                out.write(det.to_json() + "\n")
    except DimensionMismatchError as exc:
        log.error("%s", exc)
        return EXIT_DIMENSIONS
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _read_detections(path: str, model: int) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if row.get("model", 0) == model:
                    rows.append(row)
    return rows


def cmd_eval(args) -> int:
    rows = _read_detections(args.detections, args.model)
    truth_doc = json.loads(Path(args.labels).read_text())
    n = len(rows)
    expected = args.frames if args.frames is not None else truth_doc.get("frame_count")
    ends = [b for _, b in truth_doc["on_intervals"]]
    if (expected is not None and expected != n) or any(b > n for b in ends):
        log.error("length mismatch: %d detections vs %s labelled frames", n,
                  expected if expected is not None else max(ends))
        return EXIT_LENGTH
    truth = np.zeros(n, dtype=np.int8)
    for a, b in truth_doc["on_intervals"]:
        truth[a:b] = 1
    pred = np.array([r["state"] for r in rows], dtype=np.int8)
    report = evaluate(pred, truth)
    dist = [r["dist"] for r in rows]
    ewma = [r["ewma"] for r in rows]
    if args.csv:
        write_series_csv(args.csv, dist, ewma, pred)
    if args.scatter:
        scatter_svg(args.scatter, dist, ewma, pred)
    if args.series:
        series_svg(args.series, dist, ewma)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    models = loads_models(Path(args.model).read_text())
    meta, frames = load_video(args.video)
    pixels = [f.pixels for f in frames]
    try:
        for i, m in enumerate(models):
            StreamingDetector(m, i).check(meta)
    except DimensionMismatchError as exc:
        log.error("%s", exc)
        return EXIT_DIMENSIONS
    if not pixels:
        log.error("empty video")
        return EXIT_ERROR
    report = bench_detect(models, pixels, args.repeat)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aerowatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scene from a JSON spec")
    s.add_argument("spec", help="scene spec JSON (bundled: scene1.json)")
    s.add_argument("--out", required=True)
    s.add_argument("--labels", help="ground-truth sidecar path (default: <out>.labels.json)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", help="apply a brightness/noise augmentation spec")
    s.add_argument("spec", help="augmentation JSON (bundled: p1.json .. p4.json)")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--box", type=_parse_box, help="restrict to x,y,w,h")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="find the object region and train the state classifier")
    s.add_argument("video")
    s.add_argument("--out", required=True, help="model JSON")
    s.add_argument("--report", help="training report JSON")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--levels", type=int, default=4, help="pyramid levels (0-4)")
    s.add_argument("--window", type=int, help="EWMA window in frames (default: fps)")
    s.add_argument("--region", type=_parse_box, help="skip region search and use x,y,w,h")
    s.add_argument("--reference-index", type=int, default=0)
    s.add_argument("--config", help="JSON with 'agmm' and/or 'lk' overrides")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="classify every frame of a video or stdin stream")
    s.add_argument("model")
    s.add_argument("video", help="RGV1 file or - for stdin")
    s.add_argument("--out", help="JSON-lines output (default stdout)")
    s.add_argument("--every", type=float, help="emit one majority vote per this many seconds")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="score detections against ground truth")
    s.add_argument("detections", help="JSON lines from detect")
    s.add_argument("labels", help="ground-truth JSON with on_intervals")
    s.add_argument("--frames", type=int, help="expected frame count")
    s.add_argument("--model", type=int, default=0)
    s.add_argument("--csv", help="frame,dist,ewma,label time series")
    s.add_argument("--scatter", help="feature scatter SVG")
    s.add_argument("--series", help="time series SVG")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time the detect path on an in-memory video")
    s.add_argument("model")
    s.add_argument("video")
    s.add_argument("--repeat", type=int, default=1)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except SpecError as exc:
        log.error("malformed spec: %s", exc)
        return EXIT_SPEC
    except DimensionMismatchError as exc:
        log.error("%s", exc)
        return EXIT_DIMENSIONS


if __name__ == "__main__":
    sys.exit(main())
