"""Command-line surface for corpus generation, training, and evaluation.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ablation, evaluate, gradcheck, training
from .checkpoint import Checkpoint
from .config import ModelConfig, desk_config
from .corpus import Corpus, generate_corpus, read_mel, write_mel
from .errors import (ConfigurationError, DataError, DegenerateBasisError,
                     DimensionError, EvaluationError, FormatError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="model config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basistts",
        description="Zero-shot speaker modeling pipeline on a synthetic corpus")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    _common(p)
    p.add_argument("--speakers", type=int, default=10)
    p.add_argument("--utts-per-speaker", type=int, default=20)
    p.add_argument("--heldout", type=int, default=2)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--vocab", type=int, default=32)

    p = sub.add_parser("train", help="run one training stage")
    _common(p)
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path,
                   help="input checkpoint (required for stages 2 and 3)")

    p = sub.add_parser("init-basis", help="k-means initialize the basis bank")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--basis-count", type=int, help="override config basis count")
    p.add_argument("--random-init", action="store_true",
                   help="Gaussian init instead of k-means (ablation)")

    p = sub.add_parser("synth", help="zero-shot synthesis from a reference mel")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True, help="MEL1 file")
    p.add_argument("--tokens", type=str, required=True, help="comma-separated ids")
    p.add_argument("--out-file", type=Path, required=True)

    p = sub.add_parser("extract", help="print embedding and basis weights")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("check-grad", help="finite-difference gradient check")
    _common(p)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("ablate", help="run one ablation setting end to end")
    _common(p)
    p.add_argument("--setting", required=True)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("scan-basis", help="pipeline per basis count")
    _common(p)
    p.add_argument("--counts", type=str, required=True, help="e.g. 4,8,16")
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("eval", help="held-out metrics and matching accuracy")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    return parser


def _load_config(args, fallback: ModelConfig | None = None) -> ModelConfig:
    if args.config is not None:
        return ModelConfig.load(args.config)
    return fallback if fallback is not None else desk_config(args.seed)


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as e:
        raise DataError(f"bad token list {text!r}") from e


def run(args) -> int:
    cmd = args.command
    if cmd == "gen-corpus":
        manifest = generate_corpus(
            args.out, num_speakers=args.speakers,
            utts_per_speaker=args.utts_per_speaker,
            heldout_speakers=args.heldout, seed=args.seed,
            vocab_size=args.vocab, channels=args.channels)
        print(f"wrote {len(manifest['train_utterances'])} train + "
              f"{len(manifest['heldout_utterances'])} held-out utterances to {args.out}")

    elif cmd == "train":
        corpus = Corpus(args.corpus)
        if args.stage == 1:
            cfg = _load_config(args)
            store = training.init_model(cfg, args.seed)
        else:
            if args.checkpoint is None:
                raise ConfigurationError(f"stage {args.stage} needs --checkpoint")
            ckpt = Checkpoint.load(args.checkpoint)
            cfg = _load_config(args, fallback=ckpt.config)
            store = ckpt.params
        training.run_stage(args.stage, cfg, store, corpus, args.out,
                           threads=args.threads)
        print(f"stage {args.stage} done -> {args.out}/stage{args.stage}.ckpt")

    elif cmd == "init-basis":
        ckpt = Checkpoint.load(args.checkpoint)
        cfg = _load_config(args, fallback=ckpt.config)
        corpus = Corpus(args.corpus)
        n = args.basis_count or cfg.basis_count
        training.init_basis_from_store(ckpt.params, cfg, corpus, n, args.seed,
                                       use_kmeans=not args.random_init)
        cfg.basis_count = n
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        Checkpoint(stage=ckpt.stage, step=ckpt.step, config=cfg,
                   params=ckpt.params).save(out / "basis_init.ckpt")
        print(f"basis bank ({n} vectors) -> {out}/basis_init.ckpt")

    elif cmd == "synth":
        ckpt = Checkpoint.load(args.checkpoint)
        mel, durations = evaluate.zero_shot_synthesize(
            ckpt.params, ckpt.config, read_mel(args.reference),
            _parse_ids(args.tokens), stage=ckpt.stage)
        args.out_file.parent.mkdir(parents=True, exist_ok=True)
        write_mel(args.out_file, mel)
        print(f"{mel.shape[0]} frames (durations {durations.tolist()}) -> {args.out_file}")

    elif cmd == "extract":
        ckpt = Checkpoint.load(args.checkpoint)
        s, w = evaluate.reference_weights(ckpt.params, ckpt.config,
                                          read_mel(args.reference))
        print(json.dumps({"embedding": s.tolist(),
                          "weights": None if w is None else w.tolist()}))

    elif cmd == "check-grad":
        report = gradcheck.check_composite(seed=args.seed, step=args.step,
                                           tolerance=args.tolerance)
        for name in sorted(report):
            print(f"{name}: {report[name]:.3e}")
        ok = report.ok(args.tolerance)
        print(f"max relative error {report.max_error:.3e} "
              f"({'OK' if ok else 'FAIL'} at {args.tolerance:g})")
        if not ok:
            raise EvaluationError("gradient check failed")

    elif cmd == "ablate":
        corpus = Corpus(args.corpus)
        cfg = _load_config(args)
        metrics = ablation.run_ablation(args.setting, cfg, corpus, args.out,
                                        seed=args.seed, threads=args.threads)
        print(json.dumps(metrics, indent=2))

    elif cmd == "scan-basis":
        corpus = Corpus(args.corpus)
        cfg = _load_config(args)
        counts = _parse_ids(args.counts)
        rows = ablation.scan_basis_count(counts, cfg, corpus, args.out,
                                         seed=args.seed, threads=args.threads)
        print(json.dumps(rows, indent=2))

    elif cmd == "eval":
        ckpt = Checkpoint.load(args.checkpoint)
        corpus = Corpus(args.corpus)
        metrics = evaluate.run_metrics(ckpt.params, ckpt.config, corpus,
                                       stage=ckpt.stage, threads=args.threads)
        if len(corpus.heldout_speaker_ids) >= 2 and "basis.B" in ckpt.params:
            metrics["matching"] = evaluate.zero_shot_matching(
                ckpt.params, ckpt.config, corpus, seed=args.seed,
                threads=args.threads)
        print(json.dumps(metrics, indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (DataError, FormatError, DimensionError, DegenerateBasisError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except EvaluationError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
