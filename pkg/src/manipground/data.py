"""Procedural image-text pairs with planted manipulations and exact labels.

Each sample belongs to a topic. The topic fixes the background colour and
stripe pattern, the colour and checker period of a rectangular "subject",
and a band of vocabulary ids the caption draws from. Captions also carry
attribute words that describe the subject (light/dark, large/small), so a
flipped attribute is only detectable by looking at the image.

Manipulations:

* FS  - subject texture replaced by another topic's subject texture.
* FA  - subject channels cyclically shifted.
* TS  - a contiguous token span replaced by another topic's tokens.
* TA  - attribute words flipped to their antonyms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ModelConfig
from .tensor import SerializationError, tensor_from_bytes, tensor_to_bytes

DATASET_VERSION = 1

PAD, LIGHT, DARK, LARGE, SMALL = 0, 1, 2, 3, 4
ANTONYM = {LIGHT: DARK, DARK: LIGHT, LARGE: SMALL, SMALL: LARGE}
FILLER = (5, 6, 7)
FIRST_TOPIC_ID = 8

IMAGE_CLASSES = ("real", "fs", "fa")
TEXT_CLASSES = ("real", "ts", "ta")

# Subject colours have channel 0 dominant, so a cyclic channel shift never
# reproduces another topic's subject. Their (G, B) components sit on a circle
# and each background leans the same way, which keeps the subject/background
# pairing of a topic recoverable from colour statistics alone.
MAX_TOPICS = 12


@dataclass
class GeneratorConfig:
    image_size: int = 32
    channels: int = 3
    max_tokens: int = 16
    vocab_size: int = 64
    topics: int = 8
    mixture: dict = field(default_factory=lambda: {
        "real": 0.4, "fs": 0.15, "fa": 0.15, "ts": 0.15, "ta": 0.15})
    seed: int = 0

    @classmethod
    def from_model_config(cls, cfg: ModelConfig, seed: int | None = None) -> GeneratorConfig:
        mix = {k: v for k, v in cfg.mixture().items() if v > 0}
        return cls(image_size=cfg.image_size, channels=cfg.channels, max_tokens=cfg.max_tokens,
                   vocab_size=cfg.vocab_size, topics=cfg.topics, mixture=mix,
                   seed=cfg.data_seed if seed is None else seed)

    @property
    def band_size(self) -> int:
        return (self.vocab_size - FIRST_TOPIC_ID) // self.topics

    def validate(self) -> None:
        known = {"real", "fs", "fa", "ts", "ta", "fs+ts", "fs+ta", "fa+ts", "fa+ta"}
        bad = set(self.mixture) - known
        if bad:
            raise ConfigError(f"unknown mixture classes: {sorted(bad)}")
        vals = list(self.mixture.values())
        if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ConfigError(f"mixture proportions must be non-negative and sum to 1: {self.mixture}")
        if self.channels != 3:
            raise ConfigError("the generator renders RGB images (channels = 3)")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        if self.max_tokens < 3:
            raise ConfigError("max_tokens must be at least 3")
        if self.band_size < 2:
            raise ConfigError("vocabulary too small for the topic count")
        if not 2 <= self.topics <= MAX_TOPICS:
            raise ConfigError(f"topics must be between 2 and {MAX_TOPICS}")


@dataclass
class Sample:
    """One image-text pair. Boxes are normalized corners (x1, y1, x2, y2)."""

    image: np.ndarray
    tokens: np.ndarray
    y_b: int
    y_i: int
    y_t: int
    y_mig: np.ndarray | None
    y_mtg: np.ndarray
    topic: int
    subject_box: np.ndarray
    sample_id: int = 0

    @property
    def multilabel(self) -> np.ndarray:
        """Indicator vector over (FS, FA, TS, TA)."""
        return np.array([self.y_i == 1, self.y_i == 2, self.y_t == 1, self.y_t == 2], dtype=np.int64)

    def check(self) -> None:
        """Raise AssertionError if any labelling invariant is violated."""
        assert (self.y_mig is not None) == (self.y_i != 0), "y_mig present iff image manipulated"
        assert (self.y_mtg.sum() > 0) == (self.y_t != 0), "y_mtg positive iff text manipulated"
        assert self.y_b == int(self.y_i != 0 or self.y_t != 0), "y_b derivation"
        assert self.image.min() >= 0.0 and self.image.max() <= 1.0
        if self.y_mig is not None:
            x1, y1, x2, y2 = self.y_mig
            assert 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1


def _palette(topics: int):
    bg, sub, stripe, period = [], [], [], []
    for t in range(topics):
        theta = 2 * np.pi * t / topics
        c, d = np.cos(theta), np.sin(theta)
        sub.append(np.array([0.95, 0.45 + 0.35 * c, 0.45 + 0.35 * d]))
        bg.append(np.array([0.15, 0.4 + 0.15 * c, 0.4 + 0.15 * d]))
        stripe.append(np.pi * t / topics)
        period.append(2 + t % 3)
    return bg, sub, stripe, period


class _Renderer:
    def __init__(self, cfg: GeneratorConfig):
        self.cfg = cfg
        self.bg, self.sub, self.angle, self.period = _palette(cfg.topics)
        s = cfg.image_size
        self.yy, self.xx = np.mgrid[0:s, 0:s].astype(np.float64)

    def background(self, topic: int, rng: np.random.Generator) -> np.ndarray:
        s = self.cfg.image_size
        a = self.angle[topic]
        wave = np.sin(2 * np.pi * (self.xx * np.cos(a) + self.yy * np.sin(a)) / 6.0)
        img = self.bg[topic][None, None, :] + 0.06 * wave[..., None]
        return img + rng.normal(0.0, 0.02, size=(s, s, 3))

    def subject_texture(self, topic: int, h: int, w: int, brightness: float,
                        rng: np.random.Generator) -> np.ndarray:
        p = self.period[topic]
        yy, xx = np.mgrid[0:h, 0:w]
        checker = ((yy // p + xx // p) % 2) * 2.0 - 1.0
        tex = self.sub[topic][None, None, :] * brightness + 0.08 * checker[..., None]
        return tex + rng.normal(0.0, 0.02, size=(h, w, 3))


def _draw_class(mixture: dict, rng: np.random.Generator) -> str:
    names = sorted(mixture)
    probs = np.array([mixture[k] for k in names])
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


def _make_sample(cfg: GeneratorConfig, renderer: _Renderer, index: int) -> Sample:
    rng = np.random.default_rng([cfg.seed, index])
    kind = _draw_class(cfg.mixture, rng)
    parts = set(kind.split("+"))
    s, m = cfg.image_size, cfg.max_tokens
    topic = int(rng.integers(cfg.topics))

    # image
    light = bool(rng.integers(2))
    large = bool(rng.integers(2))
    brightness = 1.0 if light else 0.5
    lo, hi = (0.5, 0.69) if large else (0.19, 0.31)
    w = int(rng.integers(max(2, round(lo * s)), max(3, round(hi * s)) + 1))
    h = int(rng.integers(max(2, round(lo * s)), max(3, round(hi * s)) + 1))
    x0 = int(rng.integers(1, s - w))
    y0 = int(rng.integers(1, s - h))
    image = renderer.background(topic, rng)
    other_topic = int((topic + 1 + rng.integers(cfg.topics - 1)) % cfg.topics)
    if "fs" in parts:
        tex = renderer.subject_texture(other_topic, h, w, brightness, rng)
    else:
        tex = renderer.subject_texture(topic, h, w, brightness, rng)
    if "fa" in parts:
        tex = np.roll(tex, 1, axis=2)
    image[y0:y0 + h, x0:x0 + w] = tex
    image = np.clip(image, 0.0, 1.0)
    box = np.array([x0 / s, y0 / s, (x0 + w) / s, (y0 + h) / s])
    y_i = 1 if "fs" in parts else 2 if "fa" in parts else 0

    # text
    band = cfg.band_size
    first = FIRST_TOPIC_ID + topic * band
    attrs = [LIGHT if light else DARK]
    if m >= 6:
        attrs.append(LARGE if large else SMALL)
    n_filler = m // 8
    n_topic = m - len(attrs) - n_filler
    words = list(attrs) + [int(rng.choice(FILLER)) for _ in range(n_filler)]
    words += [int(first + rng.integers(band)) for _ in range(n_topic)]
    order = rng.permutation(m)
    tokens = np.array(words, dtype=np.int64)[order]
    y_mtg = np.zeros(m, dtype=np.int64)
    y_t = 0
    if "ts" in parts:
        span = max(2, m // 5)
        start = int(rng.integers(0, m - span + 1))
        other_first = FIRST_TOPIC_ID + other_topic * band
        tokens[start:start + span] = other_first + rng.integers(band, size=span)
        y_mtg[start:start + span] = 1
        y_t = 1
    elif "ta" in parts:
        attr_pos = np.flatnonzero(np.isin(tokens, list(ANTONYM)))
        flip = rng.random(attr_pos.size) < 0.5
        if not flip.any():
            flip[rng.integers(attr_pos.size)] = True
        for pos in attr_pos[flip]:
            tokens[pos] = ANTONYM[int(tokens[pos])]
            y_mtg[pos] = 1
        y_t = 2

    return Sample(image=image, tokens=tokens, y_b=int(y_i != 0 or y_t != 0), y_i=y_i, y_t=y_t,
                  y_mig=box.copy() if y_i else None, y_mtg=y_mtg, topic=topic,
                  subject_box=box, sample_id=index)


def generate(cfg: GeneratorConfig, count: int, start: int = 0) -> list[Sample]:
    """Generate ``count`` samples; sample ``i`` depends only on (cfg, seed, i)."""
    cfg.validate()
    renderer = _Renderer(cfg)
    return [_make_sample(cfg, renderer, i) for i in range(start, start + count)]


def split(samples: Sequence[Sample], fractions: Sequence[float], seed: int = 0):
    """Stratified (by image/text class) seeded split into train/val/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    strata: dict[tuple[int, int], list[int]] = {}
    for i, smp in enumerate(samples):
        strata.setdefault((smp.y_i, smp.y_t), []).append(i)
    parts: list[list[int]] = [[], [], []]
    cuts = np.cumsum(fractions)
    for key in sorted(strata):
        idx = np.array(strata[key])
        rng.shuffle(idx)
        bounds = [0] + [int(round(c * len(idx))) for c in cuts[:-1]] + [len(idx)]
        for k in range(3):
            parts[k].extend(idx[bounds[k]:bounds[k + 1]].tolist())
    return tuple([samples[i] for i in sorted(p)] for p in parts)


def collate(samples: Sequence[Sample]) -> dict:
    """Stack samples into batch arrays."""
    n, m = len(samples), len(samples[0].tokens)
    boxes = np.zeros((n, 4))
    has_box = np.zeros(n, dtype=bool)
    for k, smp in enumerate(samples):
        if smp.y_mig is not None:
            boxes[k] = smp.y_mig
            has_box[k] = True
    return {
        "images": np.stack([smp.image for smp in samples]),
        "tokens": np.stack([smp.tokens for smp in samples]).astype(np.int64),
        "y_b": np.array([smp.y_b for smp in samples], dtype=np.int64),
        "y_i": np.array([smp.y_i for smp in samples], dtype=np.int64),
        "y_t": np.array([smp.y_t for smp in samples], dtype=np.int64),
        "y_mig": boxes,
        "has_box": has_box,
        "y_mtg": np.stack([smp.y_mtg for smp in samples]).astype(np.int64).reshape(n, m),
        "multilabel": np.stack([smp.multilabel for smp in samples]),
        "ids": np.array([smp.sample_id for smp in samples], dtype=np.int64),
    }


# -- on-disk format -------------------------------------------------------------
MANIFEST = "manifest.jsonl"
BLOBS = "tensors.bin"


class DatasetFormatError(ValueError):
    pass


def write_dataset(samples: Sequence[Sample], path: str | Path) -> Path:
    """Write ``manifest.jsonl`` (one sample per line) plus ``tensors.bin``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(root / BLOBS, "wb") as blob, open(root / MANIFEST, "w") as man:
        for smp in samples:
            payload = tensor_to_bytes(smp.image)
            blob.write(payload)
            record = {
                "version": DATASET_VERSION,
                "id": int(smp.sample_id),
                "tokens": smp.tokens.tolist(),
                "y_b": int(smp.y_b),
                "y_i": int(smp.y_i),
                "y_t": int(smp.y_t),
                "y_mig": None if smp.y_mig is None else [float(v) for v in smp.y_mig],
                "y_mtg": smp.y_mtg.tolist(),
                "topic": int(smp.topic),
                "subject_box": [float(v) for v in smp.subject_box],
                "image": {"offset": offset, "length": len(payload)},
            }
            man.write(json.dumps(record) + "\n")
            offset += len(payload)
    return root


def read_dataset(path: str | Path) -> list[Sample]:
    root = Path(path)
    blob = (root / BLOBS).read_bytes()
    samples = []
    with open(root / MANIFEST) as man:
        for lineno, line in enumerate(man, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("version") != DATASET_VERSION:
                raise DatasetFormatError(
                    f"{root / MANIFEST}:{lineno}: dataset version {rec.get('version')!r}, "
                    f"expected {DATASET_VERSION}")
            off, length = rec["image"]["offset"], rec["image"]["length"]
            if off + length > len(blob):
                raise DatasetFormatError(f"line {lineno}: image blob extends past end of {BLOBS}")
            try:
                image, end = tensor_from_bytes(blob[off:off + length])
            except SerializationError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
            if end != length:
                raise DatasetFormatError(f"line {lineno}: blob length {length} does not match "
                                         f"encoded tensor size {end}")
            samples.append(Sample(
                image=image,
                tokens=np.array(rec["tokens"], dtype=np.int64),
                y_b=rec["y_b"], y_i=rec["y_i"], y_t=rec["y_t"],
                y_mig=None if rec["y_mig"] is None else np.array(rec["y_mig"], dtype=np.float64),
                y_mtg=np.array(rec["y_mtg"], dtype=np.int64),
                topic=rec["topic"],
                subject_box=np.array(rec["subject_box"], dtype=np.float64),
                sample_id=rec["id"],
            ))
    return samples
