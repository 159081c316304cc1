"""Linear decoder on a diagonal linear-teacher session, noiseless and at 10 dB.

    python scripts/linear_recovery.py --out results/linear_recovery.json
"""

import argparse
import json
import logging
import time
from pathlib import Path

from ecog2speech.experiments import linear_recovery


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/linear_recovery.json")
    ap.add_argument("--snr", type=float, nargs="*", default=[None, 10.0],
                    help="noise levels in dB; omit values for noiseless only")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    rows = []
    for snr in args.snr or [None]:
        t0 = time.perf_counter()
        _, rep, _ = linear_recovery(snr)
        rows.append({"snr_db": snr, "cc_mean": rep.cc_mean, "mse": rep.mse,
                     "cc_min_band": min(rep.cc_per_band), "epochs": len(rep.train_history),
                     "seconds": round(time.perf_counter() - t0, 1)})
        print(json.dumps(rows[-1]))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
