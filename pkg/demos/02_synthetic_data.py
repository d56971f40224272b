# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
# ---

# # The synthetic manipulation dataset
#
# Each sample pairs a 32x32 image with a 16-token caption. A topic fixes the
# background, the subject rectangle's colour and texture, and the vocabulary
# band of the caption. Four manipulations are planted with exact labels:
# FS and FA edit the subject (a box label), TS and TA edit tokens (token labels).

import collections
import tempfile

import numpy as np

from manipground.data import GeneratorConfig, generate, read_dataset, split, write_dataset

cfg = GeneratorConfig(seed=0)
samples = generate(cfg, 1000)

names = {(0, 0): "real", (1, 0): "FS", (2, 0): "FA", (0, 1): "TS", (0, 2): "TA"}
print(collections.Counter(names[(s.y_i, s.y_t)] for s in samples))

# A text-swap sample: a contiguous span comes from another topic's band.

ts = next(s for s in samples if s.y_t == 1)
print("topic", ts.topic, "tokens", ts.tokens.tolist())
print("labels      ", ts.y_mtg.tolist())

# An attribute flip: the LIGHT/DARK or LARGE/SMALL words (ids 1-4) no longer
# describe the subject, which only the image can reveal.

ta = next(s for s in samples if s.y_t == 2)
print("tokens", ta.tokens.tolist())
print("flipped", np.flatnonzero(ta.y_mtg).tolist())

# Face-swap images keep the rectangle but paint it with another topic's subject.

fs = next(s for s in samples if s.y_i == 1)
x1, y1, x2, y2 = np.round(fs.y_mig * 32).astype(int).tolist()
print("box (pixels)", (x1, y1, x2, y2))
print("inside mean", fs.image[y1:y2, x1:x2].mean(axis=(0, 1)).round(3))

# Splits are stratified by (image class, text class); the on-disk format is a
# JSON-lines manifest plus one binary tensor file.

train, val, test = split(samples, (0.8, 0.1, 0.1), seed=0)
print(len(train), len(val), len(test))

with tempfile.TemporaryDirectory() as tmp:
    write_dataset(samples[:10], tmp)
    back = read_dataset(tmp)
    print("round trip exact:", all(np.array_equal(a.image, b.image) for a, b in zip(samples, back)))
