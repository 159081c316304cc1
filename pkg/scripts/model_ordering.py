"""Linear vs ResNet vs WaveNet on a noisy gated-nonlinear teacher, one run per seed.

    python scripts/model_ordering.py --seeds 0 1 2 --out results/model_ordering.json
"""

import argparse
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

from ecog2speech.experiments import ORDERING, model_ordering_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(ORDERING.seeds))
    ap.add_argument("--variants", nargs="+", default=["linear", "resnet", "wavenet"])
    ap.add_argument("--snr", type=float, default=ORDERING.teacher.noise_snr_db)
    ap.add_argument("--gain", type=float, default=ORDERING.teacher.gain)
    ap.add_argument("--log", default=None, help="also append progress lines to this file")
    ap.add_argument("--out", default="results/model_ordering.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s",
                        filename=args.log)
    setup = replace(ORDERING, teacher=replace(ORDERING.teacher, noise_snr_db=args.snr, gain=args.gain))
    rows = []
    for seed in args.seeds:
        r = model_ordering_seed(seed, setup, args.variants)
        row = {"seed": seed, "cc": r.cc, "mse": r.mse, "seconds": r.seconds}
        if {"linear", "resnet", "wavenet"} <= set(r.cc):
            row.update(margin=r.margin, passes=r.passes())
        rows.append(row)
        print(json.dumps(row))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({"teacher": asdict(setup.teacher),
                                          "train": {k: asdict(v) for k, v in setup.train.items()},
                                          "runs": rows}, indent=2))


if __name__ == "__main__":
    main()
