"""Command-line surface: gen, train, decode, eval, sweep, lm-train.

Every command is reproducible from (config, seed); logs record both. The
worker count for utterance-level parallelism in decode/sweep comes from the
AVSR_WORKERS environment variable (default 1). Exit codes: 2 configuration,
3 data, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .beam import BeamConfig, tta_decode
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .corpus import generate, load_corpus, mix_babble, desync, save_corpus, word_excerpts
from .errors import AvsrError, ConfigError, DataError, NumericError
from .lm import CharNgramLM, train_lm_file
from .models import CtcModel, Seq2SeqModel
from .optim import AdamState
from .scoring import (
    EditOps,
    align,
    check_count_identities,
    per_word_prf,
    read_transcripts,
    wer,
    write_word_measures,
)
from .train import (
    SequenceTrainer,
    TrainerState,
    extract_frozen_features,
    fine_tune_on_shifts,
    pretrain_word_classifier,
)
from .video import FrontendConfig, VisualFrontend

LENGTH_BUCKET_MIN_SAMPLES = 5


def _workers() -> int:
    raw = os.environ.get("AVSR_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"AVSR_WORKERS={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigError(f"AVSR_WORKERS must be >= 1, got {n}")
    return n


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def _split_tags(cfg: RunConfig, n: int) -> list[str]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5F117]))
    order = rng.permutation(n)
    n_test = int(round(cfg.holdout_fraction * n))
    n_val = int(round(cfg.val_fraction * (n - n_test)))
    tags = ["train"] * n
    for i in order[:n_test]:
        tags[int(i)] = "test"
    for i in order[n_test : n_test + n_val]:
        tags[int(i)] = "val"
    return tags


def cmd_gen(args) -> int:
    cfg = _load_run_config(args)
    spec = cfg.corpus_spec()
    utts = generate(spec, cfg.seed)
    tags = _split_tags(cfg, len(utts))
    splits = {u.uid: tag for u, tag in zip(utts, tags)}
    out = Path(args.out)
    save_corpus(out, utts, splits)
    by_tag = defaultdict(list)
    for u in utts:
        by_tag[splits[u.uid]].append(u)
    for tag, group in by_tag.items():
        with open(out / f"refs_{tag}.tsv", "w", encoding="utf-8") as f:
            for u in sorted(group, key=lambda x: x.uid):
                f.write(f"{u.uid}\t{u.transcript}\n")
    with open(out / "train_text.txt", "w", encoding="utf-8") as f:
        for u in by_tag["train"]:
            f.write(u.transcript + "\n")
    print(f"wrote {len(utts)} utterances to {out} " + " ".join(f"{t}:{len(g)}" for t, g in sorted(by_tag.items())))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _build_model(cfg: RunConfig, seed_salt: int = 0):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA0 + seed_salt]))
    mcfg = cfg.model_config()
    mods = cfg.modality_tuple()
    if cfg.arch == "seq2seq":
        return Seq2SeqModel(mcfg, modalities=mods, rng=rng)
    return CtcModel(mcfg, modalities=mods, rng=rng)


def _build_frontend(cfg: RunConfig) -> VisualFrontend | None:
    if cfg.video_mode != "pixels":
        return None
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xFE]))
    fcfg = FrontendConfig.toy(cfg.d_vis)
    return VisualFrontend(fcfg, rng)


def _split_corpus(root):
    utts, splits = load_corpus(root)
    groups = defaultdict(list)
    for u in utts:
        groups[splits[u.uid]].append(u)
    return groups


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    groups = _split_corpus(args.corpus)
    train_utts = groups.get("train", [])
    val_utts = groups.get("val", [])
    if not train_utts:
        raise DataError(f"corpus at {args.corpus} has no train split")
    log_lines = []

    def log(msg):
        print(msg)
        log_lines.append(msg)

    log(f"seed={cfg.seed} arch={cfg.arch} modalities={cfg.modalities} stages={cfg.stages}")

    stages = cfg.stage_list()
    frontend = _build_frontend(cfg)
    model = _build_model(cfg)
    adam = AdamState(learning_rate=cfg.learning_rate)
    state = TrainerState()
    start_stage_idx = 0

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model_keys = set(model.params.arrays)
        model.params.update({k: v for k, v in ckpt.params.items() if k in model_keys})
        if frontend is not None:
            frontend.params.update({k: v for k, v in ckpt.params.items() if k.startswith("frontend.")})
        if ckpt.optimizer is not None:
            adam = ckpt.optimizer
        state = TrainerState.from_dict(ckpt.config)
        state.epoch = ckpt.epoch
        start_stage_idx = ckpt.stage
        log(f"resumed from {args.resume} at epoch {state.epoch}")

    noise_pool = [u.waveform for u in train_utts] if (cfg.noise_p > 0 or cfg.always_noise) else None

    if "pretrain" in stages and start_stage_idx == 0 and frontend is not None:
        words = []
        for u in train_utts:
            words.extend(word_excerpts(u))
        _, accs = pretrain_word_classifier(frontend, words, epochs=cfg.pretrain_epochs, seed=cfg.seed, log=log)
        log(f"front-end pretraining accuracy {accs[-1]:.3f}")

    seq_train, seq_val = train_utts, val_utts
    if frontend is not None and "frozen" in stages:
        seq_train = extract_frozen_features(frontend, train_utts)
        seq_val = extract_frozen_features(frontend, val_utts)

    trainer = SequenceTrainer(cfg, model, frontend=frontend, adam=adam, state=state, noise_pool=noise_pool)
    if "frozen" in stages:
        trainer.run(seq_train, seq_val, epochs=cfg.epochs, log=log)

    if "e2e" in stages and frontend is not None:
        e2e_trainer = SequenceTrainer(
            cfg, model, frontend=frontend, adam=adam, state=trainer.state, noise_pool=noise_pool, end_to_end=True
        )
        e2e_trainer.run(train_utts, val_utts, epochs=cfg.e2e_epochs, log=log)
        trainer = e2e_trainer

    params = dict(model.params.arrays)
    if frontend is not None:
        params.update(frontend.params.arrays)
    echo = cfg.to_dict()
    echo.update(trainer.state.to_dict())
    ckpt = Checkpoint(params=params, config=echo, epoch=trainer.state.epoch, stage=trainer.state.stage, optimizer=trainer.adam)
    save_checkpoint(args.out, ckpt)
    log(f"checkpoint written to {args.out}")
    if args.log:
        Path(args.log).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def restore_model(ckpt_path, cfg: RunConfig | None = None):
    """Rebuild (model, frontend, run config) from a checkpoint."""
    ckpt = load_checkpoint(ckpt_path)
    known = {k: v for k, v in ckpt.config.items() if not k.startswith("trainer.")}
    file_cfg = parse_config("\n".join(f"{k}={v}" for k, v in known.items()))
    cfg = cfg or file_cfg
    if cfg.arch != file_cfg.arch or cfg.modalities != file_cfg.modalities:
        raise ConfigError(
            f"checkpoint was trained as arch={file_cfg.arch}/modalities={file_cfg.modalities}, "
            f"requested {cfg.arch}/{cfg.modalities}"
        )
    model = _build_model(file_cfg)
    missing = set(model.params.arrays) - set(ckpt.params)
    if missing:
        raise DataError(f"checkpoint lacks parameters: {sorted(missing)[:4]}...")
    model.params.update({k: v for k, v in ckpt.params.items() if k in model.params.arrays})
    frontend = _build_frontend(file_cfg)
    if frontend is not None:
        frontend.params.update({k: v for k, v in ckpt.params.items() if k in frontend.params.arrays})
    return model, frontend, file_cfg


def _beam_config(cfg: RunConfig, arch: str, with_lm: bool) -> BeamConfig:
    base = BeamConfig.seq2seq(with_lm) if arch == "seq2seq" else BeamConfig.ctc(with_lm)
    width = cfg.beam_width if cfg.beam_width > 0 else base.width
    alpha = cfg.lm_weight if cfg.lm_weight >= 0 else base.lm_weight
    beta = cfg.length_penalty if cfg.length_penalty >= 0 else base.length_penalty
    if not with_lm:
        alpha = 0.0
    return BeamConfig(width=width, lm_weight=alpha, length_penalty=beta, mode=base.mode)


def _decode_one(payload):
    model, frontend, u, lm, bcfg, tta_n, seed, idx = payload
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEC, idx]))
    text, score = tta_decode(model, u, lm=lm, cfg=bcfg, frontend=frontend, n_transforms=tta_n, rng=rng)
    return u.uid, text, score


def decode_set(model, frontend, utts, lm, bcfg, tta_n: int, seed: int, workers: int | None = None):
    """Deterministic decode of a sorted utterance set; parallel when asked."""
    utts = sorted(utts, key=lambda u: u.uid)
    payloads = [(model, frontend, u, lm, bcfg, tta_n, seed, i) for i, u in enumerate(utts)]
    workers = workers if workers is not None else _workers()
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_decode_one, payloads, chunksize=4))
    return [_decode_one(p) for p in payloads]


def cmd_decode(args) -> int:
    cfg_arg = _load_run_config(args) if args.config else None
    model, frontend, file_cfg = restore_model(args.ckpt, cfg_arg)
    cfg = cfg_arg or file_cfg
    lm = None
    if args.lm or cfg.use_lm:
        lm_path = args.lm or cfg.lm_path
        if not lm_path:
            raise ConfigError("language-model decoding requested but no LM file given")
        lm = CharNgramLM.load(lm_path)
    groups = _split_corpus(args.corpus)
    utts = groups.get(args.split)
    if not utts:
        raise DataError(f"corpus has no {args.split!r} split")
    bcfg = _beam_config(cfg, cfg.arch, with_lm=lm is not None)
    tta_n = args.tta if args.tta is not None else cfg.tta
    rows = decode_set(model, frontend, utts, lm, bcfg, tta_n, cfg.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        for uid, text, score in rows:
            f.write(f"{uid}\t{text}\t{score:.6f}\n")
    print(f"decoded {len(rows)} utterances to {args.out} (beam {bcfg.width}, alpha {bcfg.lm_weight}, beta {bcfg.length_penalty})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def evaluate_pairs(refs: dict[str, str], hyps: dict[str, str]):
    """Aggregate alignment + per-word measures + per-length rows, order-free."""
    if set(refs) != set(hyps):
        only_r = sorted(set(refs) - set(hyps))[:3]
        only_h = sorted(set(hyps) - set(refs))[:3]
        raise DataError(f"id mismatch between refs and hyps (refs-only {only_r}, hyps-only {only_h})")
    total = EditOps()
    by_len: dict[int, list[float]] = defaultdict(list)
    for uid in sorted(refs):
        ops = align(refs[uid], hyps[uid])
        total.merge(ops)
        by_len[ops.n].append(wer(ops))
    measures = per_word_prf(total)
    check_count_identities(total, measures)
    return total, measures, dict(by_len)


def cmd_eval(args) -> int:
    refs = read_transcripts(args.refs)
    hyps = read_transcripts(args.hyps)
    hyps = {uid: text if "\t" not in text else text.split("\t", 1)[0] for uid, text in hyps.items()}
    total, measures, by_len = evaluate_pairs(refs, hyps)
    overall = wer(total)
    prefix = args.out_prefix
    with open(f"{prefix}.summary.tsv", "w", encoding="utf-8") as f:
        f.write("wer\tsubstitutions\tdeletions\tinsertions\treference_words\n")
        f.write(f"{overall:.4f}\t{total.s}\t{total.d}\t{total.i}\t{total.n}\n")
    write_word_measures(f"{prefix}.words.tsv", measures)
    with open(f"{prefix}.by_length.tsv", "w", encoding="utf-8") as f:
        f.write("words\tsamples\twer\n")
        for n in sorted(by_len):
            if len(by_len[n]) < LENGTH_BUCKET_MIN_SAMPLES:
                continue
            f.write(f"{n}\t{len(by_len[n])}\t{np.mean(by_len[n]):.4f}\n")
    print(f"WER {overall:.2f}% over {total.n} reference words ({total.s}S {total.d}D {total.i}I)")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _grid(cfg: RunConfig, kind: str):
    out = []
    for item in cfg.sweep_grid.split(","):
        item = item.strip()
        if not item:
            continue
        if kind == "float":
            out.append(float(item))
        else:
            out.append(int(item))
    if not out:
        raise ConfigError("sweep grid is empty")
    return out


def _sweep_wer(model, frontend, utts, refs, lm, bcfg, seed) -> float:
    rows = decode_set(model, frontend, utts, lm, bcfg, tta_n=0, seed=seed)
    total = EditOps()
    for uid, text, _ in rows:
        total.merge(align(refs[uid], text))
    return 100.0 * total.distance / total.n


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    model, frontend, file_cfg = restore_model(args.ckpt, cfg if args.config else None)
    if not args.config:
        cfg = file_cfg
    groups = _split_corpus(args.corpus)
    utts = groups.get(args.split)
    if not utts:
        raise DataError(f"corpus has no {args.split!r} split")
    refs = {u.uid: u.transcript for u in utts}
    lm = CharNgramLM.load(args.lm) if args.lm else None
    bcfg = _beam_config(cfg, cfg.arch, with_lm=lm is not None)
    rows: list[tuple[str, float]] = []

    if args.axis == "beam_width":
        for w in _grid(cfg, "int"):
            wcfg = BeamConfig(width=w, lm_weight=bcfg.lm_weight, length_penalty=bcfg.length_penalty, mode=bcfg.mode)
            rows.append((str(w), _sweep_wer(model, frontend, utts, refs, lm, wcfg, cfg.seed)))
    elif args.axis == "snr":
        train_utts = groups.get("train", utts)
        pool = [u.waveform for u in train_utts]
        for snr in _grid(cfg, "float"):
            salt = 0x7FFF if not np.isfinite(snr) else int(snr * 10) & 0xFFFF
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x57, salt]))
            noisy = [mix_babble(u, snr, pool, rng) for u in utts]
            rows.append((f"{snr:g}", _sweep_wer(model, frontend, noisy, refs, lm, bcfg, cfg.seed)))
    elif args.axis == "desync":
        if args.fine_tune_epochs or cfg.fine_tune_epochs:
            epochs = args.fine_tune_epochs or cfg.fine_tune_epochs
            trainer = SequenceTrainer(cfg, model, frontend=frontend)
            fine_tune_on_shifts(trainer, groups.get("train", utts), epochs=epochs, seed=cfg.seed)
        for k in _grid(cfg, "int"):
            shifted = [desync(u, k) if k else u for u in utts]
            rows.append((str(k), _sweep_wer(model, frontend, shifted, refs, lm, bcfg, cfg.seed)))
    else:
        raise ConfigError(f"unknown sweep axis {args.axis!r}")

    with open(args.out, "w", encoding="utf-8") as f:
        f.write(f"{args.axis}\twer\n")
        for setting, value in rows:
            f.write(f"{setting}\t{value:.4f}\n")
    print(f"swept {args.axis} over {len(rows)} settings -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# lm-train
# ---------------------------------------------------------------------------


def cmd_lm_train(args) -> int:
    lm = train_lm_file(args.text, args.out, order=args.order, delta=args.delta)
    print(f"trained order-{lm.order} model over {len(lm.alphabet)} symbols -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avsr", description="audio-visual speech transduction toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="staged training")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="beam decode a corpus split")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--lm", default=None)
    p.add_argument("--tta", type=int, default=None)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="WER curves over snr / desync / beam width")
    p.add_argument("--axis", required=True, choices=["snr", "desync", "beam_width"])
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--lm", default=None)
    p.add_argument("--fine-tune-epochs", type=int, default=0)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("lm-train", help="train the character n-gram model")
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=5)
    p.add_argument("--delta", type=float, default=1.0)
    p.set_defaults(fn=cmd_lm_train)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except AvsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
