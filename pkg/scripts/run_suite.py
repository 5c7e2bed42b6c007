"""Train and test on every synthetic suite case; print one row per case.

    python3 scripts/run_suite.py [--aug P3] [--cases flat-near,jitter-far] [--given-region]
"""

import argparse
import json
import time

import numpy as np

from aerowatch import suite
from aerowatch.detector import TrainOptions, detect, train
from aerowatch.imgproc import Region, iou


def run_case(case, aug=None, region_search=True):
    tr, te = case.training(), case.heldout()
    aug_tr = suite.augmentation(aug, case, seed=11) if aug else None
    aug_te = suite.augmentation(aug, case, seed=12) if aug else None
    t0 = time.perf_counter()
    model, report = train(suite.render(tr, aug_tr), tr.meta,
                          TrainOptions(region=None if region_search else Region(*case.box)))
    t_train = time.perf_counter() - t0
    pred = np.array([d.state for d in detect([model], te.meta, suite.render(te, aug_te))])
    ev = suite.steady_report(pred, te, model.ewma.window)
    return {"case": case.name, "aug": aug, "iou": iou(model.region.box, case.box),
            "accuracy": ev.accuracy, "precision": ev.precision, "recall": ev.recall, "f1": ev.f1,
            "cr": report.class_coefficient, "train_s": t_train}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--aug", choices=sorted(suite.AUGMENTATIONS))
    p.add_argument("--cases", help="comma-separated case names")
    p.add_argument("--given-region", action="store_true", help="skip the region search")
    args = p.parse_args()
    wanted = set(args.cases.split(",")) if args.cases else None
    for case in suite.cases():
        if wanted and case.name not in wanted:
            continue
        print(json.dumps(run_case(case, args.aug, not args.given_region)), flush=True)


if __name__ == "__main__":
    main()
