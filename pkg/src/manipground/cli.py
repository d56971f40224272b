"""Command line entry point: train, eval, ablate, grad-check, visualize, gen-data.

Every command logs JSON lines to stderr and writes its artifacts under the
output directory, which defaults to ``$MANIPGROUND_OUT`` (or ``./runs``).
Exit status is 0 only when the command fully succeeds.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import harness
from .config import ConfigError, InputError, ModelConfig, load_config, save_config, tiny_config
from .data import DatasetFormatError, GeneratorConfig, generate, read_dataset, write_dataset
from .metrics import write_predictions

OUT_ENV = "MANIPGROUND_OUT"
GRAD_TOLERANCE = 1e-4


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def emit(event: str, **fields) -> None:
    print(json.dumps({"event": event, "time": round(time.time(), 3), **fields}), file=sys.stderr, flush=True)


def _config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    overrides = {}
    for item in args.set or []:
        key, _, raw = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = json.loads(raw)
    if overrides:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _samples(cfg: ModelConfig, dataset: str | None, split_name: str):
    if dataset:
        samples = read_dataset(dataset)
        if samples:
            h, w, c = samples[0].image.shape
            if (h, w, c) != (cfg.image_size, cfg.image_size, cfg.channels) or len(samples[0].tokens) != cfg.max_tokens:
                raise ConfigError(f"dataset shapes ({h}x{w}x{c}, M={len(samples[0].tokens)}) do not match the "
                                  f"checkpoint config ({cfg.image_size}x{cfg.image_size}x{cfg.channels}, "
                                  f"M={cfg.max_tokens})")
        return samples
    train, val, test = harness.make_splits(cfg)
    return {"train": train, "val": val, "test": test}[split_name]


def _write_report(report, out: Path, stem: str) -> None:
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}.txt").write_text(report.table())


# -- commands --------------------------------------------------------------------
def cmd_train(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint"
    if args.resume:
        trainer = harness.load_checkpoint(ckpt)
        cfg = trainer.cfg
        train, val, _ = harness.make_splits(cfg)
        trainer.samples = train
    else:
        cfg = _config(args)
        train, val, _ = harness.make_splits(cfg)
        trainer = harness.Trainer(cfg, train)
    save_config(cfg, out / "config.json")
    emit("train_start", steps=cfg.total_steps, from_step=trainer.step, out=str(out))
    with open(out / "train_log.jsonl", "a" if args.resume else "w") as log_fh:
        try:
            while trainer.step < cfg.total_steps:
                rec = trainer.train_step()
                if rec["step"] % cfg.log_every == 0:
                    line = json.dumps(rec)
                    log_fh.write(line + "\n")
                    log_fh.flush()
                    emit("step", **rec)
                if cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                    harness.save_checkpoint(trainer, ckpt)
        except (harness.TrainingDiverged, FloatingPointError) as exc:
            emit("diverged", error=str(exc), last_checkpoint=str(ckpt) if ckpt.exists() else None)
            return 3
    harness.save_checkpoint(trainer, ckpt)
    report, records = harness.evaluate(trainer.model, val)
    _write_report(report, out, "val_report")
    emit("train_done", step=trainer.step, val=report.grouped())
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    trainer = harness.load_checkpoint(args.checkpoint, train_samples=[])
    samples = _samples(trainer.cfg, args.dataset, args.split)
    report, records = harness.evaluate(trainer.model, samples)
    write_predictions(records, out / "predictions.jsonl")
    _write_report(report, out, "report")
    emit("eval_done", samples=len(samples), report=report.grouped())
    print(report.table(), end="")
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    for v in variants:
        harness.variant_config(cfg, v)
    (out / "ablation.jsonl").unlink(missing_ok=True)
    rows = harness.ablate(cfg, variants, seeds, out_dir=out)
    for row in rows:
        emit("ablation_row", **row.as_dict())
    table = harness.ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_grad_check(args) -> int:
    cfg = load_config(args.config) if args.config else tiny_config()
    report = harness.grad_check(cfg, entries_per_tensor=args.entries, seed=args.seed)
    worst_name = max(report, key=report.get)
    for name, err in report.items():
        emit("grad_check", tensor=name, rel_err=err)
    ok = report[worst_name] < GRAD_TOLERANCE
    summary = {"tensors": len(report), "max_rel_err": report[worst_name], "worst": worst_name,
               "tolerance": GRAD_TOLERANCE, "passed": ok}
    print(json.dumps(summary))
    return 0 if ok else 1


def cmd_visualize(args) -> int:
    out = Path(args.out or default_out())
    trainer = harness.load_checkpoint(args.checkpoint, train_samples=[])
    samples = _samples(trainer.cfg, args.dataset, args.split)
    ids = [int(i) for i in args.ids.split(",")]
    drawn = harness.visualize(trainer.model, samples, ids, out)
    for d in drawn:
        emit("visualized", **d)
    return 0


def cmd_gen_data(args) -> int:
    out = Path(args.out or default_out())
    cfg = _config(args)
    gen = GeneratorConfig.from_model_config(cfg, seed=args.seed)
    samples = generate(gen, args.count, start=args.start)
    write_dataset(samples, out)
    counts: dict[str, int] = {}
    for s in samples:
        key = f"{('real', 'fs', 'fa')[s.y_i]}/{('real', 'ts', 'ta')[s.y_t]}"
        counts[key] = counts.get(key, 0) + 1
    emit("gen_data_done", count=len(samples), out=str(out), classes=counts)
    return 0


# -- parser ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manipground", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="flat JSON config file (defaults are used when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=JSON", help="override one config field")

    def out_flag(p):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")

    def data_flags(p):
        p.add_argument("--dataset", help="dataset directory written by gen-data")
        p.add_argument("--split", choices=("train", "val", "test"), default="test",
                       help="generated split to use when --dataset is not given")

    p = sub.add_parser("train", help="train a model and evaluate it on the validation split")
    config_flags(p)
    out_flag(p)
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes predictions.jsonl and report.{json,txt}")
    p.add_argument("--checkpoint", required=True)
    data_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train ablation variants and print the comparison table")
    config_flags(p)
    out_flag(p)
    p.add_argument("--variants", default="full,baseline",
                   help=f"comma-separated subset of {','.join(harness.VARIANTS)}")
    p.add_argument("--seeds", default="0", help="comma-separated model seeds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of the full loss gradient")
    p.add_argument("--config", help="config file (default: the tiny grad-check config)")
    p.add_argument("--entries", type=int, default=6, help="entries sampled per parameter tensor")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("visualize", help="draw GT (red) and predicted (blue) boxes plus token marks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ids", required=True, help="comma-separated sample ids")
    data_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    config_flags(p)
    out_flag(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--start", type=int, default=0, help="first generator index")
    p.add_argument("--seed", type=int, default=None, help="generator seed (default: config data_seed)")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DatasetFormatError, KeyError, FileNotFoundError) as exc:
        emit("error", command=args.command, error=f"{type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
