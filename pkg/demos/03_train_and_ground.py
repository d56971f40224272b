# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # Training, evaluation and grounding dumps
#
# A deliberately small run so the script finishes in well under a minute. The
# full-size setting (D=64, six interaction layers, 3000 steps) is what
# `manipground train` uses by default.

import tempfile
from pathlib import Path

from manipground import harness
from manipground.config import ModelConfig

cfg = ModelConfig(dim=32, heads=2, encoder_depth=1, interaction_depth=2, reduce_dim=16,
                  n_train=400, n_val=100, n_test=100, batch_size=16,
                  total_steps=100, warmup_steps=10, peak_lr=3e-4)

train, val, test = harness.make_splits(cfg)
trainer = harness.Trainer(cfg, train)
history = trainer.run()
for rec in history[::20]:
    terms = {k: round(rec[k], 3) for k in ("bcls", "mcls", "mig", "mtg") if rec[k] is not None}
    print(rec["step"], round(rec["total"], 3), terms)

# Twelve metrics in four groups; the table follows the usual column order (x100).

report, records = harness.evaluate(trainer.model, test)
print(report.table())

# Grounding dumps: ground truth in red, prediction in blue, plus token marks
# (`[*]` ground truth, `{*}` predicted).

out = Path(tempfile.mkdtemp())
ids = [r.sample_id for r in records if r.gt_box is not None][:3]
for d in harness.visualize(trainer.model, test, ids, out):
    print(d)
print(sorted(p.name for p in out.iterdir()))

# The gradient check covers every parameter tensor of the full objective.

errors = harness.grad_check()
print(len(errors), "tensors, max relative error", max(errors.values()))
