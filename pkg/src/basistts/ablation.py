"""Ablation settings and the basis-count scan.

Each setting is a pure config mutation applied before a full pipeline run,
so every variant stays comparable: same corpus, same seeds, same metrics.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import evaluate, training
from .config import ModelConfig
from .corpus import Corpus
from .errors import ConfigurationError

ABLATION_SETTINGS = (
    "no-kmeans",       # random basis init instead of k-means centers
    "no-reg",          # lambda_reg = 0 in stage 2
    "no-basis",        # condition CLN on the raw embedding, no bank
    "no-cln-enc",      # encoder-side CLN projectors frozen at identity
    "no-cln-all",      # all CLN projectors frozen at identity
    "no-dist",         # lambda_dist = 0 in stage 3
    "cos-only",        # embedding cosine loss instead of distribution loss
    "cos-plus-dist",   # both supervision losses
)

_COS_WEIGHT = 0.5


def apply_setting(cfg: ModelConfig, setting: str) -> tuple[ModelConfig, bool]:
    """Return (mutated config, use_kmeans flag) for one setting."""
    if setting not in ABLATION_SETTINGS:
        raise ConfigurationError(
            f"unknown ablation setting {setting!r}; valid: {', '.join(ABLATION_SETTINGS)}")
    cfg = ModelConfig.from_dict(cfg.to_dict())  # deep copy
    use_kmeans = True
    if setting == "no-kmeans":
        use_kmeans = False
    elif setting == "no-reg":
        cfg.stage(2).lambda_reg = 0.0
    elif setting == "no-basis":
        cfg.use_basis = False
    elif setting == "no-cln-enc":
        for st in cfg.stages.values():
            st.frozen_parameter_patterns.append("backbone.enc*.cln_*")
    elif setting == "no-cln-all":
        for st in cfg.stages.values():
            st.frozen_parameter_patterns.append("backbone.*.cln_*")
    elif setting == "no-dist":
        cfg.stage(3).lambda_dist = 0.0
    elif setting == "cos-only":
        cfg.stage(3).lambda_dist = 0.0
        cfg.stage(3).lambda_cos = _COS_WEIGHT
    elif setting == "cos-plus-dist":
        cfg.stage(3).lambda_cos = _COS_WEIGHT
    return cfg, use_kmeans


def run_ablation(setting: str, base_cfg: ModelConfig, corpus: Corpus,
                 out_dir, seed: int = 0, threads: int = 1) -> dict:
    """Full pipeline under one setting; returns the final metrics."""
    cfg, use_kmeans = apply_setting(base_cfg, setting)
    out = Path(out_dir) / setting
    ckpt = training.run_pipeline(cfg, corpus, out, seed, threads=threads,
                                 use_kmeans=use_kmeans)
    metrics = evaluate.run_metrics(ckpt.params, cfg, corpus, stage=3,
                                   threads=threads)
    metrics["setting"] = setting
    return metrics


def scan_basis_count(counts: list[int], base_cfg: ModelConfig, corpus: Corpus,
                     out_dir, seed: int = 0, threads: int = 1) -> list[dict]:
    """Full pipeline per basis count N; rows follow the input order."""
    if not counts:
        raise ConfigurationError("scan needs at least one basis count")
    rows = []
    for n in counts:
        if n < 1:
            raise ConfigurationError(f"basis count must be >= 1, got {n}")
        cfg = ModelConfig.from_dict(base_cfg.to_dict())
        cfg.basis_count = n
        out = Path(out_dir) / f"n{n}"
        ckpt = training.run_pipeline(cfg, corpus, out, seed, threads=threads)
        m = evaluate.run_metrics(ckpt.params, cfg, corpus, stage=3, threads=threads)
        m["basis_count"] = n
        rows.append(m)
    _write_table(Path(out_dir) / "scan.csv", rows,
                 ["basis_count", "recon_mae", "l_reg", "l_dist", "basis_cos",
                  "heldout_kl", "heldout_emb_cos"])
    return rows


def _write_table(path: Path, rows: list[dict], columns: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.12g}"
    return v
