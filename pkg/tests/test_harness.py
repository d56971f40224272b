import json

import numpy as np
import pytest

from manipground import harness
from manipground import tensor as T
from manipground.config import ConfigError, ModelConfig, load_config, save_config, tiny_config
from manipground.metrics import compute_report, read_predictions, write_predictions
from manipground.model import ManipulationModel


@pytest.fixture
def small():
    return tiny_config(n_train=32, total_steps=10, warmup_steps=2, batch_size=4, checkpoint_every=5)


@pytest.fixture
def splits(small):
    return harness.make_splits(small)


class TestTraining:
    def test_smoke_ten_steps(self, small, splits, tmp_path):
        trainer = harness.Trainer(small, splits[0])
        with open(tmp_path / "log.jsonl", "w") as fh:
            history = trainer.run(out_dir=tmp_path, log_fh=fh)
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert len(history) == 10 and len(lines) == 10
        for line in lines:
            rec = json.loads(line)
            assert np.isfinite(rec["total"]) and {"bcls", "mcls", "mig", "mtg", "lr"} <= set(rec)
        assert (tmp_path / "checkpoint" / "checkpoint.json").exists()

    def test_resume_is_bit_identical(self, small, splits, tmp_path):
        straight = harness.Trainer(small, splits[0])
        straight.run(5)
        harness.save_checkpoint(straight, tmp_path / "ck")
        expected = straight.train_step()

        resumed = harness.load_checkpoint(tmp_path / "ck", splits[0])
        got = resumed.train_step()
        assert got == expected
        for (_, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_resume_with_dropout(self, small, splits, tmp_path):
        cfg = small.replace(dropout=0.2)
        a = harness.Trainer(cfg, splits[0])
        a.run(3)
        harness.save_checkpoint(a, tmp_path / "ck")
        b = harness.load_checkpoint(tmp_path / "ck", splits[0])
        assert a.train_step() == b.train_step()

    def test_same_seed_same_trajectory(self, small, splits):
        a = harness.Trainer(small, splits[0]).run(4)
        b = harness.Trainer(small, splits[0]).run(4)
        assert a == b

    def test_nan_loss_aborts(self, small, splits, tmp_path):
        trainer = harness.Trainer(small, splits[0])
        trainer.run(5, out_dir=tmp_path)
        before = (tmp_path / "checkpoint" / "tensors.bin").read_bytes()
        trainer.model.box_head.mlp.layers[0].weight.data[...] = np.nan
        with pytest.raises(harness.TrainingDiverged):
            trainer.run(out_dir=tmp_path)
        assert (tmp_path / "checkpoint" / "tensors.bin").read_bytes() == before

    def test_checkpoint_config_mismatch(self, small, splits, tmp_path):
        trainer = harness.Trainer(small, splits[0])
        harness.save_checkpoint(trainer, tmp_path / "ck")
        meta = json.loads((tmp_path / "ck" / "checkpoint.json").read_text())
        meta["config"]["disable_dfc"] = True
        (tmp_path / "ck" / "checkpoint.json").write_text(json.dumps(meta))
        with pytest.raises(ConfigError):
            harness.load_checkpoint(tmp_path / "ck", splits[0])

    def test_splits_are_disjoint(self, small, splits):
        ids = [[s.sample_id for s in part] for part in splits]
        assert len(set(ids[0]) | set(ids[1]) | set(ids[2])) == sum(map(len, ids))


class TestEvaluation:
    def test_deterministic_and_recomputable(self, small, splits, tmp_path):
        model = ManipulationModel(small)
        samples = harness.make_splits(small.replace(n_test=40))[2]
        r1, recs = harness.evaluate(model, samples)
        r2, _ = harness.evaluate(model, samples)
        assert r1.to_json() == r2.to_json()
        write_predictions(recs, tmp_path / "p.jsonl")
        again = compute_report(read_predictions(tmp_path / "p.jsonl"))
        assert again.to_json() == r1.to_json()
        assert len(recs) == 40 and {r.sample_id for r in recs} == {s.sample_id for s in samples}


class TestAblation:
    def test_unknown_variant(self, small):
        with pytest.raises(ConfigError):
            harness.variant_config(small, "wo_everything")

    def test_variant_configs(self, small):
        assert not any(harness.variant_config(small, "full").ablations().values())
        assert all(harness.variant_config(small, "baseline").ablations().values())
        wo_dfc = ManipulationModel(harness.variant_config(small, "wo_dfc"))
        names = [n for n, _ in wo_dfc.named_parameters()]
        assert any(n.startswith("coupled_head.") for n in names)
        assert not any(n.startswith("fine_heads.") for n in names)

    def test_rows_and_avg(self, small, tmp_path):
        rows = harness.ablate(small.replace(total_steps=3, n_test=16), ["full", "wo_dfc"], seeds=[0],
                              out_dir=tmp_path)
        assert [r.variant for r in rows] == ["full", "wo_dfc"]
        for r in rows:
            assert r.avg == pytest.approx((r.auc + r.map + r.iou_mean + r.f1) / 4)
        table = harness.ablation_table(rows)
        assert table.splitlines()[0].split() == ["Method", "AUC", "mAP", "IoUmean", "F1", "Avg"]
        assert len((tmp_path / "ablation.jsonl").read_text().splitlines()) == 2


class TestGradCheck:
    def test_passes_and_covers_every_tensor(self):
        cfg = tiny_config()
        report = harness.grad_check(cfg)
        names = [n for n, _ in ManipulationModel(cfg).named_parameters()]
        assert list(report) == names
        assert max(report.values()) < 1e-4

    def test_corrupted_adjoint_is_caught(self, monkeypatch):
        original = T.gelu_grad
        monkeypatch.setattr(T, "gelu_grad", lambda x, cdf=None: 1.1 * original(x, cdf))
        report = harness.grad_check(tiny_config())
        assert max(report.values()) >= 1e-4


class TestVisualize:
    def test_outputs(self, small, splits, tmp_path):
        model = ManipulationModel(small)
        samples = splits[0]
        real = next(s for s in samples if s.y_mig is None)
        fake = next(s for s in samples if s.y_mig is not None)
        drawn = harness.visualize(model, samples, [real.sample_id, fake.sample_id], tmp_path)
        records = harness.predict_records(model, [real, fake])
        for smp, rec, d in zip((real, fake), records, drawn):
            img = harness.read_ppm(tmp_path / f"sample_{smp.sample_id}.ppm")
            assert img.shape == smp.image.shape
            w = h = small.image_size
            x1, y1, x2, y2 = rec.pred_box
            expected = tuple(int(v) for v in np.clip(
                [round(x1 * w), round(y1 * h), round(x2 * w) - 1, round(y2 * h) - 1], 0, w - 1))
            assert d["pred_rect"][:2] == expected[:2]
            assert d["pred_rect"] == (expected[0], expected[1], max(expected[0], expected[2]),
                                      max(expected[1], expected[3]))
            text = (tmp_path / f"sample_{smp.sample_id}.txt").read_text().split()
            assert len(text) == small.max_tokens
            assert sum("[*]" in t for t in text) == int(smp.y_mtg.sum())
        red = np.array([255, 0, 0], dtype=np.uint8)
        real_img = harness.read_ppm(tmp_path / f"sample_{real.sample_id}.ppm")
        assert drawn[0]["gt_rect"] is None
        assert not np.any(np.all(real_img == red, axis=-1))
        fake_img = harness.read_ppm(tmp_path / f"sample_{fake.sample_id}.ppm")
        gx1, gy1, _, _ = drawn[1]["gt_rect"]
        px = fake_img[gy1, gx1]
        assert tuple(px) in {(255, 0, 0), (0, 0, 255)}

    def test_missing_id(self, small, splits, tmp_path):
        with pytest.raises(KeyError):
            harness.visualize(ManipulationModel(small), splits[0], [10 ** 6], tmp_path)

    def test_box_to_pixels(self):
        assert harness.box_to_pixels([0.25, 0.5, 0.75, 1.0], 8, 8) == (2, 4, 5, 7)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(seed=3, disable_dfc=True)
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    @pytest.mark.parametrize("data", [{"bogus": 1}, {"dim": "64"}, {"disable_dfc": 1}, {"config_version": 2},
                                      {"patch_size": 5}, {"mix_real": 0.9}])
    def test_rejects(self, tmp_path, data):
        (tmp_path / "c.json").write_text(json.dumps(data))
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")

    def test_rejects_nested(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"dim": {"value": 64}}))
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")

    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.dim, cfg.interaction_depth, cfg.max_tokens) == (64, 6, 16)
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (1.0, 0.1, 1.0)
