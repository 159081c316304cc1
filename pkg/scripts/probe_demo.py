"""Train a linear decoder on the diagonal teacher, then probe and sonify every electrode.

The montage should show one bright band per tile, stepping up the
spectrum across each row of electrodes.

    python scripts/probe_demo.py --out results/probe_demo
"""

import argparse
import json
import logging

from ecog2speech.experiments import band_concentration, linear_recovery
from ecog2speech.probe import probe_all, write_probe
from ecog2speech.training import dataset_max, prepare_fold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/probe_demo")
    ap.add_argument("--iterations", type=int, default=30)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    model, rep, rec = linear_recovery(None)
    fd = prepare_fold(rec, 3, 0)
    amp = dataset_max(fd.segs, fd.windows.train)
    irmap = probe_all(model, amp, fd.stats, source="diagonal teacher, linear decoder")
    manifest = write_probe(args.out, irmap, rec.spec.band_centers, iterations=args.iterations)
    share = band_concentration(model)
    print(json.dumps({"cc_mean": rep.cc_mean, "amplitude": amp, "electrodes": manifest["electrodes"],
                      "teacher_band_share_min": float(share.min()),
                      "teacher_band_share_mean": float(share.mean())}))


if __name__ == "__main__":
    main()
