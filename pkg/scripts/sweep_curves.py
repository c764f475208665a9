#!/usr/bin/env python3
"""Emit WER curve data (beam width / SNR / desynchronization) for plotting.

Usage:
    python scripts/sweep_curves.py WORKDIR --ckpt model.ckpt --corpus corpus/

Writes three delimited files under WORKDIR: wer_vs_beam_width.tsv,
wer_vs_snr.tsv and wer_vs_desync.tsv. These are plain (setting, wer) rows
for any external plotting tool.
"""

import argparse
import sys
from pathlib import Path

from avsr.cli import main as avsr


def run(argv):
    print("+ avsr " + " ".join(argv))
    code = avsr(argv)
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("workdir")
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--corpus", required=True)
    ap.add_argument("--split", default="test")
    ap.add_argument("--lm", default=None)
    ap.add_argument("--fine-tune-epochs", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    width_cfg = work / "widths.cfg"
    width_cfg.write_text("sweep_grid = 1,2,4,8,16,35,50,100\n", encoding="utf-8")
    snr_cfg = work / "snr.cfg"
    snr_cfg.write_text("sweep_grid = inf,10,5,0,-5\n", encoding="utf-8")
    desync_cfg = work / "desync.cfg"
    desync_cfg.write_text("sweep_grid = -4,-3,-2,-1,0,1,2,3,4\n", encoding="utf-8")

    common = ["--ckpt", args.ckpt, "--corpus", args.corpus, "--split", args.split]
    lm = ["--lm", args.lm] if args.lm else []
    run(["sweep", "--axis", "beam_width", "--config", str(width_cfg),
         "--out", str(work / "wer_vs_beam_width.tsv")] + common + lm)
    run(["sweep", "--axis", "snr", "--config", str(snr_cfg),
         "--out", str(work / "wer_vs_snr.tsv")] + common + lm)
    run(["sweep", "--axis", "desync", "--config", str(desync_cfg),
         "--out", str(work / "wer_vs_desync.tsv"),
         "--fine-tune-epochs", str(args.fine_tune_epochs)] + common + lm)


if __name__ == "__main__":
    main()
