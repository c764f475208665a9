#!/usr/bin/env python3
"""End-to-end toy experiment: corpus -> LM -> train -> decode -> score.

Usage:
    python scripts/run_toy_pipeline.py WORKDIR [--config configs/toy.cfg] [--arch ctc]

Writes the corpus, a character LM, a trained checkpoint, hypotheses for the
test split, and the WER/per-word report under WORKDIR. Everything is driven
through the same subcommands the CLI exposes, so the run doubles as a living
example of the command surface.
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
    ap.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "toy.cfg"))
    ap.add_argument("--arch", default=None, choices=["ctc", "seq2seq"])
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    cfg_path = Path(args.config)
    text = cfg_path.read_text(encoding="utf-8")
    if args.arch:
        text += f"\narch = {args.arch}\n"
    local_cfg = work / "run.cfg"
    local_cfg.write_text(text, encoding="utf-8")

    corpus = work / "corpus"
    ckpt = work / "model.ckpt"
    lm = work / "char_lm.json"
    hyps = work / "hyps_test.tsv"

    seed_args = ["--seed", str(args.seed)] if args.seed is not None else []
    run(["gen", "--config", str(local_cfg), "--out", str(corpus)] + seed_args)
    run(["lm-train", "--text", str(corpus / "train_text.txt"), "--out", str(lm)])
    run(["train", "--config", str(local_cfg), "--corpus", str(corpus), "--out", str(ckpt),
         "--log", str(work / "train.log")] + seed_args)
    run(["decode", "--config", str(local_cfg), "--ckpt", str(ckpt), "--corpus", str(corpus),
         "--split", "test", "--out", str(hyps), "--lm", str(lm)] + seed_args)
    run(["eval", "--refs", str(corpus / "refs_test.tsv"), "--hyps", str(hyps),
         "--out-prefix", str(work / "report")])
    print(f"\nartifacts under {work}: corpus/, model.ckpt, char_lm.json, hyps_test.tsv, report.*")


if __name__ == "__main__":
    main()
