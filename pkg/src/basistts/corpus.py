"""Procedural multi-speaker corpus with analytically recoverable identity.

Each vocabulary token owns a base spectral pattern in [0, 1]; a speaker is
a per-channel multiplicative tilt in [0.5, 2] plus an additive offset in
[-1, 1]. A frame is base * tilt + offset + N(0, 0.01). Held-out speakers
are split by speaker id, never by utterance, so evaluation is zero-shot.

Mel files use the MEL1 layout: magic "MEL1", little-endian u32 T, u32 C,
then T*C little-endian float32 values, row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustic import Utterance
from .errors import ConfigurationError, FormatError

MEL_MAGIC = b"MEL1"
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
NOISE_SIGMA = 0.01


def write_mel(path, mel: np.ndarray) -> None:
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2:
        raise FormatError(f"mel must be 2-D, got shape {mel.shape}")
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<II", mel.shape[0], mel.shape[1]))
        f.write(mel.astype("<f4").tobytes())


def read_mel(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MEL_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    t, c = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * t * c
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {t}x{c} frames, "
            f"file ends at offset {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(t, c).astype(np.float64)


@dataclass
class SyntheticSpeaker:
    speaker_id: int
    tilt: np.ndarray
    offset: np.ndarray
    heldout: bool


def _speaker(seed: int, speaker_id: int, channels: int, heldout: bool) -> SyntheticSpeaker:
    rng = np.random.default_rng([seed, 1, speaker_id])
    return SyntheticSpeaker(
        speaker_id=speaker_id,
        tilt=rng.uniform(0.5, 2.0, channels),
        offset=rng.uniform(-1.0, 1.0, channels),
        heldout=heldout,
    )


def token_patterns(seed: int, vocab_size: int, channels: int) -> np.ndarray:
    return np.random.default_rng([seed, 0]).random((vocab_size, channels))


def generate_corpus(out_dir, num_speakers: int, utts_per_speaker: int,
                    heldout_speakers: int, seed: int,
                    vocab_size: int = 32, channels: int = 16,
                    token_range: tuple[int, int] = (4, 8),
                    duration_range: tuple[int, int] = (2, 4)) -> dict:
    """Write mel files and a manifest; fully determined by the seed."""
    if heldout_speakers >= num_speakers:
        raise ConfigurationError("need at least one training speaker")
    if token_range[0] > token_range[1] or token_range[0] < 1:
        raise ConfigurationError(f"bad token_range {token_range}")
    if duration_range[0] > duration_range[1] or duration_range[0] < 1:
        raise ConfigurationError(f"bad duration_range {duration_range}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patterns = token_patterns(seed, vocab_size, channels)
    speakers = [_speaker(seed, sid, channels, sid >= num_speakers - heldout_speakers)
                for sid in range(num_speakers)]

    records = []
    utt_index = 0
    for sp in speakers:
        for j in range(utts_per_speaker):
            rng = np.random.default_rng([seed, 2, utt_index])
            n_tokens = int(rng.integers(token_range[0], token_range[1] + 1))
            tokens = rng.integers(0, vocab_size, n_tokens)
            durations = rng.integers(duration_range[0], duration_range[1] + 1, n_tokens)
            frames = np.repeat(patterns[tokens], durations, axis=0)
            mel = frames * sp.tilt + sp.offset
            mel = mel + rng.normal(0.0, NOISE_SIGMA, mel.shape)
            fname = f"utt_{sp.speaker_id:03d}_{j:03d}.mel"
            write_mel(out_dir / fname, mel)
            records.append({
                "utterance_id": fname[:-4],
                "file": fname,
                "speaker_id": sp.speaker_id,
                "token_ids": [int(t) for t in tokens],
                "durations": [int(d) for d in durations],
            })
            utt_index += 1

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "vocab_size": vocab_size,
        "num_channels": channels,
        "speakers": [{"speaker_id": sp.speaker_id, "heldout": sp.heldout}
                     for sp in speakers],
        "train_utterances": [r for r in records
                             if not speakers[r["speaker_id"]].heldout],
        "heldout_utterances": [r for r in records
                               if speakers[r["speaker_id"]].heldout],
    }
    with open(out_dir / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


class Corpus:
    """Loaded corpus: manifest plus all mel matrices in memory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST_NAME
        if not path.exists():
            raise FormatError(f"no manifest at {path}")
        with open(path) as f:
            m = json.load(f)
        if m.get("version") != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {m.get('version')}")
        self.seed = m["seed"]
        self.vocab_size = m["vocab_size"]
        self.num_channels = m["num_channels"]
        self.heldout_speaker_ids = sorted(
            s["speaker_id"] for s in m["speakers"] if s["heldout"])
        self.train = [self._load(r) for r in m["train_utterances"]]
        self.heldout = [self._load(r) for r in m["heldout_utterances"]]
        if not self.train:
            raise ConfigurationError("corpus has no training utterances")

    def _load(self, rec: dict) -> Utterance:
        return Utterance(
            utterance_id=rec["utterance_id"],
            speaker_id=rec["speaker_id"],
            token_ids=rec["token_ids"],
            durations=rec["durations"],
            mel=read_mel(self.root / rec["file"]),
        )
