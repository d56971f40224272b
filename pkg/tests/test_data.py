import json

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from manipground.config import ConfigError
from manipground.data import (
    ANTONYM, DATASET_VERSION, FIRST_TOPIC_ID, DatasetFormatError, GeneratorConfig, collate, generate,
    read_dataset, split, write_dataset,
)

MIX = {"real": 0.4, "fs": 0.15, "fa": 0.15, "ts": 0.15, "ta": 0.15}


@pytest.fixture(scope="module")
def thousand():
    return generate(GeneratorConfig(seed=7), 1000)


def kind(s):
    return {(0, 0): "real", (1, 0): "fs", (2, 0): "fa", (0, 1): "ts", (0, 2): "ta"}[(s.y_i, s.y_t)]


def test_determinism():
    a = generate(GeneratorConfig(seed=3), 20)
    b = generate(GeneratorConfig(seed=3), 20)
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.tokens, y.tokens)
        assert (x.y_i, x.y_t, x.topic) == (y.y_i, y.y_t, y.topic)


def test_sample_depends_only_on_index():
    cfg = GeneratorConfig(seed=3)
    tail = generate(cfg, 5, start=10)
    full = generate(cfg, 15)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(tail, full[10:]))


def test_pristine_sample(thousand):
    real = next(s for s in thousand if s.y_b == 0)
    assert real.y_mig is None and real.y_mtg.sum() == 0


def test_invariants(thousand):
    for s in thousand:
        s.check()
        assert s.image.shape == (32, 32, 3) and s.tokens.shape == (16,)


def test_class_counts_within_binomial_tolerance(thousand):
    counts = {k: 0 for k in MIX}
    for s in thousand:
        counts[kind(s)] += 1
    n = len(thousand)
    for k, p in MIX.items():
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(counts[k] - n * p) <= 4 * sigma, (k, counts[k])


def test_manipulation_semantics(thousand):
    for s in thousand:
        if s.y_t == 1:
            pos = np.flatnonzero(s.y_mtg)
            assert pos.size == 3 and np.all(np.diff(pos) == 1)
        if s.y_t == 2:
            assert all(int(t) in ANTONYM for t in s.tokens[s.y_mtg == 1])
        if s.y_i:
            assert np.array_equal(s.y_mig, s.subject_box)
        assert np.all(s.tokens[s.y_mtg == 0] >= 1)


def test_swapped_tokens_come_from_another_topic(thousand):
    band = GeneratorConfig().band_size
    for s in thousand:
        if s.y_t == 1:
            topics = (s.tokens[s.y_mtg == 1] - FIRST_TOPIC_ID) // band
            assert np.all(topics != s.topic)


def test_combined_classes():
    mix = {"fs+ts": 0.5, "fa+ta": 0.5}
    for s in generate(GeneratorConfig(mixture=mix, seed=1), 50):
        s.check()
        assert s.y_i != 0 and s.y_t != 0


@pytest.mark.parametrize("mix", [{"real": 0.5, "fs": 0.4}, {"real": 1.2, "fs": -0.2}, {"bogus": 1.0}])
def test_invalid_mixture(mix):
    with pytest.raises(ConfigError):
        generate(GeneratorConfig(mixture=mix), 1)


def test_linear_probe_separates_fs_from_real():
    cfg = GeneratorConfig(mixture={"real": 0.5, "fs": 0.5}, seed=11)
    samples = generate(cfg, 1000)
    feats, labels = [], []
    for s in samples:
        x1, y1, x2, y2 = np.round(s.subject_box * 32).astype(int)
        mask = np.zeros((32, 32), dtype=bool)
        mask[y1:y2, x1:x2] = True
        inside, outside = s.image[mask].mean(axis=0), s.image[~mask].mean(axis=0)
        feats.append(np.concatenate([inside, outside, np.outer(inside, outside).ravel()]))
        labels.append(s.y_i)
    feats, labels = np.array(feats), np.array(labels)
    probe = LogisticRegression(C=100.0, max_iter=5000).fit(feats[:500], labels[:500])
    auc = roc_auc_score(labels[500:], probe.predict_proba(feats[500:])[:, 1])
    assert auc > 0.9


class TestSplit:
    def test_everything_in_train(self, thousand):
        train, val, test = split(thousand, (1, 0, 0), seed=0)
        assert len(train) == 1000 and not val and not test

    def test_partition(self, thousand):
        parts = split(thousand, (0.7, 0.1, 0.2), seed=0)
        ids = [s.sample_id for p in parts for s in p]
        assert sorted(ids) == sorted(s.sample_id for s in thousand)

    def test_bad_fractions(self, thousand):
        with pytest.raises(ValueError):
            split(thousand, (0.5, 0.2, 0.2), seed=0)

    def test_stratification(self):
        samples = generate(GeneratorConfig(seed=5), 5000)
        keys = sorted({kind(s) for s in samples})
        overall = {k: np.mean([kind(s) == k for s in samples]) for k in keys}
        for part in split(samples, (0.8, 0.1, 0.1), seed=1):
            for k in keys:
                assert abs(np.mean([kind(s) == k for s in part]) - overall[k]) <= 0.02


class TestDiskFormat:
    def test_round_trip(self, tmp_path):
        samples = generate(GeneratorConfig(seed=2, mixture={"real": 0.5, "fs": 0.25, "ta": 0.25}), 10)
        write_dataset(samples, tmp_path)
        back = read_dataset(tmp_path)
        assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 10
        for a, b in zip(samples, back):
            assert np.array_equal(a.image, b.image) and a.image.dtype == b.image.dtype
            assert np.array_equal(a.tokens, b.tokens) and np.array_equal(a.y_mtg, b.y_mtg)
            assert (a.y_b, a.y_i, a.y_t, a.topic, a.sample_id) == (b.y_b, b.y_i, b.y_t, b.topic, b.sample_id)
            assert (a.y_mig is None and b.y_mig is None) or np.array_equal(a.y_mig, b.y_mig)

    def test_corrupted_blob_length(self, tmp_path):
        write_dataset(generate(GeneratorConfig(seed=2), 3), tmp_path)
        lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
        rec = json.loads(lines[1])
        rec["image"]["length"] -= 8
        lines[1] = json.dumps(rec)
        (tmp_path / "manifest.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_dataset(tmp_path)

    def test_truncated_blob_file(self, tmp_path):
        write_dataset(generate(GeneratorConfig(seed=2), 3), tmp_path)
        raw = (tmp_path / "tensors.bin").read_bytes()
        (tmp_path / "tensors.bin").write_bytes(raw[:-100])
        with pytest.raises(DatasetFormatError):
            read_dataset(tmp_path)

    def test_version_mismatch(self, tmp_path):
        write_dataset(generate(GeneratorConfig(seed=2), 2), tmp_path)
        text = (tmp_path / "manifest.jsonl").read_text()
        (tmp_path / "manifest.jsonl").write_text(
            text.replace(f'"version": {DATASET_VERSION}', f'"version": {DATASET_VERSION + 1}', 1))
        with pytest.raises(DatasetFormatError, match="version"):
            read_dataset(tmp_path)


def test_collate(thousand):
    batch = collate(thousand[:8])
    assert batch["images"].shape == (8, 32, 32, 3) and batch["tokens"].shape == (8, 16)
    assert batch["multilabel"].shape == (8, 4)
    assert np.array_equal(batch["has_box"], [s.y_mig is not None for s in thousand[:8]])
