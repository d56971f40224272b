"""Training, evaluation, ablation, gradient checking and visual dumps."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ABLATION_FLAGS, ConfigError, ModelConfig, tiny_config
from .data import GeneratorConfig, Sample, collate, generate
from .grounding import cxcywh_to_xyxy
from .metrics import MetricReport, PredictionRecord, compute_report
from .model import ManipulationModel
from .optim import AdamW, LrSchedule, clip_grad_norm, lr_at
from .tensor import tensor_from_bytes, tensor_to_bytes

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    pass


def make_splits(cfg: ModelConfig) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Disjoint index ranges of one generator stream: train, val, test."""
    gen = GeneratorConfig.from_model_config(cfg)
    train = generate(gen, cfg.n_train, start=0)
    val = generate(gen, cfg.n_val, start=cfg.n_train)
    test = generate(gen, cfg.n_test, start=cfg.n_train + cfg.n_val)
    return train, val, test


class Trainer:
    def __init__(self, cfg: ModelConfig, train_samples: Sequence[Sample]):
        cfg.validate()
        self.cfg = cfg
        self.samples = list(train_samples)
        self.model = ManipulationModel(cfg)
        self.optimizer = AdamW(self.model.named_parameters(), cfg.weight_decay,
                               (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
        self.schedule = LrSchedule(cfg.total_steps, cfg.warmup_steps, cfg.peak_lr, cfg.floor_lr)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.step = 0
        self._order = np.zeros(0, dtype=np.int64)
        self._cursor = 0

    def _next_indices(self) -> np.ndarray:
        n, bs = len(self.samples), min(self.cfg.batch_size, len(self.samples))
        if n == 0:
            raise ValueError("no training samples")
        if self._cursor + bs > self._order.size:
            self._order = self.rng.permutation(n)
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + bs]
        self._cursor += bs
        return idx

    def train_step(self) -> dict:
        if self.step >= self.cfg.total_steps:
            raise RuntimeError("schedule exhausted")
        batch = collate([self.samples[i] for i in self._next_indices()])
        self.model.train()
        _, losses = self.model.loss(batch)
        value = losses.total.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {self.step + 1}")
        self.optimizer.zero_grad()
        losses.total.backward()
        grad_norm = clip_grad_norm(self.model.parameters(), self.cfg.grad_clip)
        lr = lr_at(self.schedule, self.step + 1)
        self.optimizer.step(lr)
        self.step += 1
        record = {"step": self.step, "lr": lr, "grad_norm": grad_norm}
        record.update(losses.as_record())
        return record

    def run(self, steps: int | None = None, out_dir: str | Path | None = None,
            log_fh=None) -> list[dict]:
        """Train for ``steps`` (default: to the end of the schedule)."""
        end = self.cfg.total_steps if steps is None else min(self.cfg.total_steps, self.step + steps)
        history = []
        while self.step < end:
            rec = self.train_step()
            history.append(rec)
            if log_fh is not None and rec["step"] % self.cfg.log_every == 0:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if out_dir is not None and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                save_checkpoint(self, Path(out_dir) / "checkpoint")
        return history

    # -- checkpoint state ------------------------------------------------------
    def state(self) -> dict:
        return {
            "step": self.step,
            "rng": self.rng.bit_generator.state,
            "dropout_rng": self.model.dropout_rng.bit_generator.state,
            "order": self._order.tolist(),
            "cursor": self._cursor,
        }


# -- checkpoints ---------------------------------------------------------------
def save_checkpoint(trainer: Trainer, path: str | Path) -> Path:
    """Directory with ``checkpoint.json`` and ``tensors.bin`` (params, then moments)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    named = trainer.optimizer.named_params
    opt = trainer.optimizer.state()
    blobs = [p.data for _, p in named] + opt["m"] + opt["v"]
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": trainer.cfg.to_dict(),
        "parameters": [[name, list(p.shape)] for name, p in named],
        "optimizer_step": opt["step"],
        **trainer.state(),
    }
    tmp_bin, tmp_json = root / "tensors.bin.tmp", root / "checkpoint.json.tmp"
    tmp_bin.write_bytes(b"".join(tensor_to_bytes(a) for a in blobs))
    tmp_json.write_text(json.dumps(meta))
    tmp_bin.replace(root / "tensors.bin")
    tmp_json.replace(root / "checkpoint.json")
    return root


def load_checkpoint(path: str | Path, train_samples: Sequence[Sample] | None = None) -> Trainer:
    root = Path(path)
    meta = json.loads((root / "checkpoint.json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {meta.get('version')!r} is not supported")
    cfg = ModelConfig.from_dict(meta["config"])
    if train_samples is None:
        train_samples = make_splits(cfg)[0]
    trainer = Trainer(cfg, train_samples)
    named = trainer.optimizer.named_params
    expected = [[name, list(p.shape)] for name, p in named]
    if expected != meta["parameters"]:
        raise ConfigError("checkpoint parameters do not match the model built from its config")
    buf = (root / "tensors.bin").read_bytes()
    arrays, off = [], 0
    for _ in range(3 * len(named)):
        arr, off = tensor_from_bytes(buf, off)
        arrays.append(arr)
    n = len(named)
    for (_, p), arr in zip(named, arrays[:n]):
        p.data[...] = arr
    trainer.optimizer.load_state({"step": meta["optimizer_step"], "m": arrays[n:2 * n], "v": arrays[2 * n:]})
    trainer.step = meta["step"]
    trainer.rng.bit_generator.state = meta["rng"]
    trainer.model.dropout_rng.bit_generator.state = meta["dropout_rng"]
    trainer._order = np.array(meta["order"], dtype=np.int64)
    trainer._cursor = meta["cursor"]
    return trainer


# -- evaluation ----------------------------------------------------------------
def predict_records(model: ManipulationModel, samples: Sequence[Sample],
                    batch_size: int = 128) -> list[PredictionRecord]:
    records = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = collate(chunk)
        probs = model.predict(batch)
        with T.no_grad():
            corners = cxcywh_to_xyxy(T.Tensor(probs["bbox"])).data
        for k, smp in enumerate(chunk):
            records.append(PredictionRecord(
                sample_id=int(smp.sample_id),
                binary_score=float(probs["binary"][k]),
                type_probs=[float(v) for v in probs["multilabel"][k]],
                pred_box=[float(v) for v in corners[k]],
                token_probs=[float(v) for v in probs["tokens"][k]],
                y_b=int(smp.y_b),
                type_labels=[int(v) for v in smp.multilabel],
                gt_box=None if smp.y_mig is None else [float(v) for v in smp.y_mig],
                y_mtg=[int(v) for v in smp.y_mtg],
            ))
    return records


def evaluate(model: ManipulationModel, samples: Sequence[Sample]) -> tuple[MetricReport, list[PredictionRecord]]:
    records = predict_records(model, samples)
    return compute_report(records), records


def train_and_evaluate(cfg: ModelConfig, eval_split: str = "test", out_dir=None) -> tuple[Trainer, MetricReport]:
    train, val, test = make_splits(cfg)
    trainer = Trainer(cfg, train)
    log_fh = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_fh = open(Path(out_dir) / "train_log.jsonl", "w")
    try:
        trainer.run(out_dir=out_dir, log_fh=log_fh)
    finally:
        if log_fh is not None:
            log_fh.close()
    report, _ = evaluate(trainer.model, val if eval_split == "val" else test)
    return trainer, report


# -- ablations -----------------------------------------------------------------
VARIANTS = {
    "full": {},
    "wo_m_t": {"disable_m_t": True},
    "wo_dfc": {"disable_dfc": True},
    "wo_i_imq": {"disable_i_imq": True},
    "wo_t_imq": {"disable_t_imq": True},
    "baseline": {flag: True for flag in ABLATION_FLAGS},
}


@dataclass
class AblationRow:
    variant: str
    seed: int
    auc: float
    map: float
    iou_mean: float
    f1: float

    @property
    def avg(self) -> float:
        return (self.auc + self.map + self.iou_mean + self.f1) / 4.0

    def as_dict(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "auc": self.auc, "map": self.map,
                "iou_mean": self.iou_mean, "f1": self.f1, "avg": self.avg}


def variant_config(cfg: ModelConfig, variant: str, seed: int | None = None) -> ModelConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {sorted(VARIANTS)}")
    changes = {flag: False for flag in ABLATION_FLAGS}
    changes.update(VARIANTS[variant])
    if seed is not None:
        changes["seed"] = seed
    return cfg.replace(**changes)


def ablate(cfg: ModelConfig, variants: Sequence[str], seeds: Sequence[int] = (0,),
           out_dir=None) -> list[AblationRow]:
    for v in variants:
        variant_config(cfg, v)
    train, _, test = make_splits(cfg)
    rows = []
    for seed in seeds:
        for v in variants:
            vcfg = variant_config(cfg, v, seed)
            trainer = Trainer(vcfg, train)
            trainer.run()
            report, _ = evaluate(trainer.model, test)
            row = AblationRow(v, seed, report.auc, report.map, report.iou_mean, report.f1)
            log.info("ablation %s", row.as_dict())
            rows.append(row)
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                with open(Path(out_dir) / "ablation.jsonl", "a") as fh:
                    fh.write(json.dumps(row.as_dict()) + "\n")
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Per-variant means over seeds, columns AUC / mAP / IoUmean / F1 / Avg."""
    order = list(dict.fromkeys(r.variant for r in rows))
    lines = [f"{'Method':<10} {'AUC':>7} {'mAP':>7} {'IoUmean':>8} {'F1':>7} {'Avg':>7}"]
    for v in order:
        rs = [r for r in rows if r.variant == v]
        vals = [np.mean([getattr(r, k) for r in rs]) for k in ("auc", "map", "iou_mean", "f1", "avg")]
        lines.append(f"{v:<10} " + " ".join(f"{100 * x:>{w}.2f}" for x, w in zip(vals, (7, 7, 8, 7, 7))))
    return "\n".join(lines) + "\n"


# -- gradient check ------------------------------------------------------------
def _grad_check_batch(cfg: ModelConfig) -> dict:
    gen = GeneratorConfig(image_size=cfg.image_size, channels=cfg.channels, max_tokens=cfg.max_tokens,
                          vocab_size=cfg.vocab_size, topics=cfg.topics,
                          mixture={"fs+ts": 0.5, "fa+ta": 0.5}, seed=cfg.data_seed)
    return collate(generate(gen, 2))


GRAD_CHECK_FLOOR = 1e-5


def grad_check(cfg: ModelConfig | None = None, entries_per_tensor: int = 6, eps: float = 1e-5,
               seed: int = 0) -> dict[str, float]:
    """Relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor) per tensor.

    The floor (1e-5) keeps tensors whose true gradient is exactly zero, such as
    attention key biases (softmax ignores a per-row shift), from reporting
    finite-difference round-off as a relative error of 1.

    Central differences are taken on up to ``entries_per_tensor`` random entries
    of each tensor. The batch has two samples, both image- and text-manipulated,
    so every loss term is active.
    """
    cfg = cfg or tiny_config()
    model = ManipulationModel(cfg)
    # non-trivial scale so that every path carries signal
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data += rng.normal(0.0, 0.3, size=p.shape)
    batch = _grad_check_batch(cfg)

    def loss_value() -> float:
        with T.no_grad():
            return model.loss(batch)[1].total.item()

    model.zero_grad()
    model.loss(batch)[1].total.backward()
    report = {}
    for name, p in model.named_parameters():
        analytic_full = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        analytic = analytic_full.reshape(-1)[picks]
        numeric = np.empty_like(analytic)
        for j, idx in enumerate(picks):
            old = flat[idx]
            flat[idx] = old + eps
            up = loss_value()
            flat[idx] = old - eps
            down = loss_value()
            flat[idx] = old
            numeric[j] = (up - down) / (2 * eps)
        denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), GRAD_CHECK_FLOOR)
        report[name] = float(np.linalg.norm(analytic - numeric) / denom)
    return report


# -- visualization ---------------------------------------------------------------
RED = np.array([255, 0, 0], dtype=np.uint8)
BLUE = np.array([0, 0, 255], dtype=np.uint8)


def box_to_pixels(box, width: int, height: int) -> tuple[int, int, int, int]:
    """Normalized corners -> inclusive pixel rectangle clipped to the image."""
    x1, y1, x2, y2 = box
    px1 = int(np.clip(round(x1 * width), 0, width - 1))
    py1 = int(np.clip(round(y1 * height), 0, height - 1))
    px2 = int(np.clip(round(x2 * width) - 1, 0, width - 1))
    py2 = int(np.clip(round(y2 * height) - 1, 0, height - 1))
    return px1, py1, max(px1, px2), max(py1, py2)


def draw_box(canvas: np.ndarray, rect: tuple[int, int, int, int], color: np.ndarray) -> None:
    x1, y1, x2, y2 = rect
    canvas[y1, x1:x2 + 1] = color
    canvas[y2, x1:x2 + 1] = color
    canvas[y1:y2 + 1, x1] = color
    canvas[y1:y2 + 1, x2] = color


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def visualize(model: ManipulationModel, samples: Sequence[Sample], sample_ids: Sequence[int],
              out_dir: str | Path) -> list[dict]:
    """Write ``sample_<id>.ppm`` (GT box red, prediction blue) and ``sample_<id>.txt``."""
    by_id = {s.sample_id: s for s in samples}
    missing = [i for i in sample_ids if i not in by_id]
    if missing:
        raise KeyError(f"sample ids not in dataset: {missing}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chosen = [by_id[i] for i in sample_ids]
    records = predict_records(model, chosen)
    drawn = []
    for smp, rec in zip(chosen, records):
        h, w, _ = smp.image.shape
        canvas = np.clip(np.round(smp.image * 255), 0, 255).astype(np.uint8)
        gt_rect = None
        if smp.y_mig is not None:
            gt_rect = box_to_pixels(smp.y_mig, w, h)
            draw_box(canvas, gt_rect, RED)
        pred_rect = box_to_pixels(rec.pred_box, w, h)
        draw_box(canvas, pred_rect, BLUE)
        write_ppm(out / f"sample_{smp.sample_id}.ppm", canvas)
        words = []
        for tok, gt, prob in zip(smp.tokens, smp.y_mtg, rec.token_probs):
            word = f"w{int(tok)}"
            if gt:
                word += "[*]"
            if prob >= 0.5:
                word += "{*}"
            words.append(word)
        (out / f"sample_{smp.sample_id}.txt").write_text(" ".join(words) + "\n")
        drawn.append({"sample_id": smp.sample_id, "gt_rect": gt_rect, "pred_rect": pred_rect})
    return drawn
