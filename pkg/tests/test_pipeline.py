import dataclasses

import numpy as np
import pytest
import torch

from difflane import diffusion, geometry, pipeline, synthdata
from difflane.config import RunConfig
from difflane.model import DecoderOutput, LaneDiffusionModel

CFG = RunConfig()
GRID = CFG.grid()
SCHED = diffusion.cosine_schedule(CFG.t_max)

# a small model keeps the training-step tests fast; the geometry-facing
# parts (grid, n_train handling) stay at the full defaults
SMALL = RunConfig(fpn_channels=16, d_model=32, n_heads=2, dyn_hidden=4,
                  aux_anchors=8, n_train=24, batch_size=2)


def small_model(seed=0):
    torch.manual_seed(seed)
    return LaneDiffusionModel(SMALL.model_config())


def small_scenes(n=2):
    return [synthdata.generate_scene(SMALL.scene_config(), i) for i in range(n)]


class TestTensorBridges:
    def test_triples_to_anchor_tensor(self):
        triples = np.array([[0.2, 0.8, 0.5], [-0.3, 1.4, 0.1]])
        t = pipeline.triples_to_anchor_tensor(triples, GRID)
        assert t.shape == (2, 4 + GRID.n_points)
        assert torch.allclose(t[0, :3], torch.tensor([0.2, 0.8, 0.5]))
        assert t[1, 0].item() == 0.0 and t[1, 1].item() == 1.0  # clamped
        assert (t[:, 3] == GRID.n_points).all()
        assert (t[:, 4:] == 0).all()

    def test_anchors_to_tensor_roundtrip(self):
        anchors = [geometry.LaneAnchor(0.3, 1.0, 0.45, 20.0,
                                       np.arange(36, dtype=np.float64))]
        t = pipeline.anchors_to_tensor(anchors, GRID)
        assert t.shape == (1, 40)
        assert t[0, 0].item() == pytest.approx(0.3)
        assert t[0, 3].item() == 20.0
        assert torch.equal(t[0, 4:], torch.arange(36, dtype=torch.float32))

    def test_empty_anchor_list(self):
        t = pipeline.anchors_to_tensor([], GRID)
        assert t.shape == (0, 40)


class TestResampleAnchors:
    def _output(self, fg_probs):
        fg = torch.as_tensor(fg_probs, dtype=torch.float32)
        logits = torch.stack([torch.zeros_like(fg), torch.logit(fg)], dim=-1)
        n = fg.shape[0]
        return DecoderOutput(logits, torch.rand(n, 3), torch.rand(n),
                             torch.randn(n, 36))

    def test_counts_always_n_train(self):
        rng = np.random.default_rng(0)
        x_t = rng.standard_normal((6, 3))
        for probs in ([0.9] * 6, [0.1] * 6, [0.9, 0.1, 0.5, 0.39, 0.41, 0.2]):
            out = self._output(probs)
            new, keep = pipeline.resample_anchors(out, x_t, 0.4, 6, rng)
            assert new.shape == (6, 3)
            assert np.array_equal(keep, np.flatnonzero(np.array(probs) >= 0.4))

    def test_kept_triples_pass_through_bit_exact(self):
        rng = np.random.default_rng(1)
        x_t = rng.standard_normal((5, 3))
        out = self._output([0.8, 0.2, 0.6, 0.1, 0.5])
        new, keep = pipeline.resample_anchors(out, x_t, 0.4, 5, rng)
        assert np.array_equal(new[:3], x_t[[0, 2, 4]])

    def test_topup_is_fresh_noise(self):
        x_t = np.zeros((4, 3))
        out = self._output([0.9, 0.0, 0.0, 0.0])
        new, keep = pipeline.resample_anchors(out, x_t, 0.4, 4,
                                              np.random.default_rng(2))
        assert keep.tolist() == [0]
        assert np.array_equal(new[0], x_t[0])
        assert not np.allclose(new[1:], 0.0)


class TestTrainStep:
    def test_deterministic_given_seeds(self):
        reports = []
        params = []
        for _ in range(2):
            model = small_model(seed=3)
            opt = torch.optim.AdamW(model.parameters(), lr=1e-3)
            rng = np.random.default_rng(7)
            scenes = small_scenes()
            rep = pipeline.train_step(scenes, model, SMALL.train_config(), opt,
                                      rng, SCHED, GRID)
            reports.append(rep)
            params.append(model.blocks[0].head.cls.weight.detach().clone())
        assert reports[0].total.item() == reports[1].total.item()
        assert torch.equal(params[0], params[1])

    def test_returns_finite_weighted_report(self):
        model = small_model()
        opt = torch.optim.AdamW(model.parameters(), lr=1e-3)
        rep = pipeline.train_step(small_scenes(), model, SMALL.train_config(),
                                  opt, np.random.default_rng(0), SCHED, GRID)
        parts = rep.cls + rep.liou + rep.smooth_l1 + rep.angle + rep.seg + rep.aux
        assert rep.total.item() == pytest.approx(parts, rel=1e-5)
        assert all(np.isfinite(v) for v in
                   (rep.cls, rep.liou, rep.smooth_l1, rep.angle, rep.seg, rep.aux))

    def test_loss_decreases_when_overfitting(self):
        model = small_model(seed=1)
        opt = torch.optim.AdamW(model.parameters(), lr=1e-3)
        rng = np.random.default_rng(0)
        scenes = small_scenes(1)
        tcfg = SMALL.train_config()
        totals = []
        for _ in range(150):
            rep = pipeline.train_step(scenes, model, tcfg, opt, rng, SCHED, GRID)
            totals.append(float(rep.total))
        start = np.mean(totals[:10])
        end = np.mean(totals[-10:])
        assert end < 0.7 * start, f"loss {start:.3f} -> {end:.3f}"


class TestInfer:
    def test_output_contract_and_cardinality(self):
        model = small_model()
        scene = small_scenes(1)[0]
        trace = []
        dets = pipeline.infer(scene.image, model, SMALL.infer_config(), SCHED,
                              GRID, SMALL.n_train, SMALL.noise_scale,
                              np.random.default_rng(0), trace=trace)
        assert isinstance(dets, list)
        for d in dets:
            assert isinstance(d, geometry.ScoredLane)
            assert 0.0 <= d.fg_prob <= 1.0
        # initial noise + one entry per sampling step
        assert len(trace) == 1 + SMALL.sampling_steps
        for entry in trace:
            assert entry["anchors"].shape[0] == SMALL.n_train

    def test_deterministic_given_seed(self):
        model = small_model()
        scene = small_scenes(1)[0]
        icfg = SMALL.infer_config()
        a = pipeline.infer(scene.image, model, icfg, SCHED, GRID, SMALL.n_train,
                           SMALL.noise_scale, np.random.default_rng(5))
        b = pipeline.infer(scene.image, model, icfg, SCHED, GRID, SMALL.n_train,
                           SMALL.noise_scale, np.random.default_rng(5))
        assert len(a) == len(b)
        for la, lb in zip(a, b):
            assert la.fg_prob == lb.fg_prob
            assert np.array_equal(la.anchor.offsets, lb.anchor.offsets)

    def test_single_step_sampling(self):
        model = small_model()
        scene = small_scenes(1)[0]
        icfg = dataclasses.replace(SMALL.infer_config(), sampling_steps=1)
        dets = pipeline.infer(scene.image, model, icfg, SCHED, GRID,
                              SMALL.n_train, SMALL.noise_scale,
                              np.random.default_rng(0))
        assert isinstance(dets, list)

    def test_resample_last_flag_runs(self):
        model = small_model()
        scene = small_scenes(1)[0]
        dets = pipeline.infer(scene.image, model, SMALL.infer_config(), SCHED,
                              GRID, SMALL.n_train, SMALL.noise_scale,
                              np.random.default_rng(0), resample_last=True)
        assert isinstance(dets, list)

    def test_model_left_in_eval_mode(self):
        model = small_model().train()
        scene = small_scenes(1)[0]
        pipeline.infer(scene.image, model, SMALL.infer_config(), SCHED, GRID,
                       SMALL.n_train, SMALL.noise_scale, np.random.default_rng(0))
        assert not model.training


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = small_model(seed=9)
        path = str(tmp_path / "ckpt.pt")
        pipeline.save_checkpoint(model, SMALL, path, step=123)
        restored, cfg, step = pipeline.load_checkpoint(path)
        assert step == 123 and cfg == SMALL
        for (ka, va), (kb, vb) in zip(model.state_dict().items(),
                                      restored.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)

    def test_config_hash_mismatch(self, tmp_path):
        model = small_model()
        path = str(tmp_path / "ckpt.pt")
        pipeline.save_checkpoint(model, SMALL, path)
        other = dataclasses.replace(SMALL, d_model=64)
        with pytest.raises(pipeline.CheckpointMismatch):
            pipeline.load_checkpoint(path, other)

    def test_hash_ignores_non_graph_keys(self, tmp_path):
        model = small_model()
        path = str(tmp_path / "ckpt.pt")
        pipeline.save_checkpoint(model, SMALL, path)
        other = dataclasses.replace(SMALL, epochs=99, fg_threshold=0.7)
        restored, _, _ = pipeline.load_checkpoint(path, other)
        assert isinstance(restored, LaneDiffusionModel)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            pipeline.load_checkpoint(str(tmp_path / "nope.pt"))
