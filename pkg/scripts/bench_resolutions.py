"""Detect-path throughput at 352x640, 720x1280 and 1080x1920.

    python3 scripts/bench_resolutions.py [--frames 120] [--repeat 2]
"""

import argparse
import json

from aerowatch import suite
from aerowatch.detector import TrainOptions, bench_detect, train
from aerowatch.imgproc import Region


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--repeat", type=int, default=2)
    args = p.parse_args()
    for width, height in suite.BENCH_RESOLUTIONS:
        scene = suite.bench_scene(width, height, args.frames)
        frames = [f.pixels for f in suite.render(scene)]
        model, _ = train(frames, scene.meta, TrainOptions(region=Region(*scene.object_box)))
        print(json.dumps(bench_detect([model], frames, args.repeat), sort_keys=True), flush=True)


if __name__ == "__main__":
    main()
