import numpy as np
import pytest

from difflane import geometry as G
from difflane import synthdata as S
from difflane.diffusion import ScaleConfig, normalize

CFG = S.SceneConfig(seed=42)
GRID = G.LaneGrid(256, 256, 76.8, 256.0, 36)


class TestGenerateScene:
    def test_deterministic(self):
        a = S.generate_scene(CFG, 3)
        b = S.generate_scene(CFG, 3)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.seg_mask, b.seg_mask)
        for la, lb in zip(a.lanes, b.lanes):
            assert np.array_equal(la.points, lb.points)

    def test_distinct_indices_differ(self):
        a = S.generate_scene(CFG, 0)
        b = S.generate_scene(CFG, 1)
        assert not np.array_equal(a.image, b.image)

    def test_straight_when_curvature_zero(self):
        cfg = S.SceneConfig(curvature_max=0.0, seed=1)
        for i in range(5):
            scene = S.generate_scene(cfg, i)
            for lane in scene.lanes:
                anchor = G.gt_to_anchor(lane, GRID)
                assert np.abs(anchor.offsets).max() < 1e-6

    def test_lane_brighter_than_background(self):
        diffs = []
        for i in range(100):
            scene = S.generate_scene(CFG, i)
            on = scene.seg_mask > 0
            diffs.append(scene.image[on].mean() - scene.image[~on].mean())
        assert np.mean(diffs) >= 0.3

    def test_lane_count_in_range(self):
        for i in range(20):
            scene = S.generate_scene(CFG, i)
            assert CFG.lanes_min <= len(scene.lanes) <= CFG.lanes_max
            assert scene.seg_mask.max() <= len(scene.lanes)

    def test_every_lane_survives_gt_to_anchor(self):
        for i in range(30):
            scene = S.generate_scene(CFG, i)
            for lane in scene.lanes:
                G.gt_to_anchor(lane, GRID)  # must not raise

    def test_mask_pixels_near_polyline(self):
        scene = S.generate_scene(CFG, 7)
        for k, lane in enumerate(scene.lanes, start=1):
            ys_px, xs_px = np.nonzero(scene.seg_mask == k)
            pts = lane.points[::-1]
            xc = np.interp(ys_px, pts[:, 1], pts[:, 0])
            assert np.abs(xs_px - xc).max() <= S.LANE_HALF_WIDTH + 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            S.SceneConfig(lanes_min=0)
        with pytest.raises(ValueError):
            S.SceneConfig(img_w=32)


class TestPadding:
    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.gts = [G.anchor_from_params((0.2 + 0.1 * i, 1.0, 0.5), GRID)
                    for i in range(4)]

    def test_counts_and_flags(self):
        padded, is_real = S.pad_ground_truth(self.gts, 800, self.rng, GRID)
        assert len(padded) == 800
        assert is_real[:4].all() and not is_real[4:].any()

    def test_real_anchors_bit_exact_in_order(self):
        padded, _ = S.pad_ground_truth(self.gts, 160, self.rng, GRID)
        for orig, out in zip(self.gts, padded):
            assert out is orig

    def test_no_gts_all_random(self):
        padded, is_real = S.pad_ground_truth([], 50, self.rng, GRID)
        assert len(padded) == 50 and not is_real.any()

    def test_too_many_gts_rejected(self):
        with pytest.raises(ValueError):
            S.pad_ground_truth(self.gts, 3, self.rng, GRID)

    def test_gaussian_padding_statistics(self):
        # padded triples mapped back to signal space must be ~ N(0, 1)
        scale = ScaleConfig(2.0)
        padded, _ = S.pad_ground_truth([], 40_000, self.rng, GRID, scale)
        sig = normalize(np.array([G.params_of(a) for a in padded]), scale)
        sig = sig[np.abs(sig) < scale.noise_scale - 1e-9]  # drop clamped tails
        n = sig.size
        # mean sigma = 1/sqrt(n); std sigma ~ 1/sqrt(2n); wide pre-truncation
        assert abs(sig.mean()) < 3 / np.sqrt(n)
        # std of N(0,1) truncated to +-2: sqrt(1 - 4*phi(2)/(2*Phi(2)-1))
        assert abs(sig.std() - 0.8796) < 0.01

    def test_uniform_and_repeat_modes(self):
        padded, _ = S.pad_ground_truth(self.gts, 10, self.rng, GRID, mode="repeat")
        assert np.allclose(G.params_of(padded[4]), G.params_of(self.gts[0]))
        padded, _ = S.pad_ground_truth(self.gts, 10, self.rng, GRID, mode="uniform")
        assert len(padded) == 10
        with pytest.raises(ValueError):
            S.pad_ground_truth(self.gts, 10, self.rng, GRID, mode="bogus")


class TestCULaneIO:
    def test_roundtrip(self, tmp_path):
        scenes = [S.generate_scene(CFG, i) for i in range(3)]
        rels = S.write_culane(scenes, str(tmp_path))
        back_rels, back_lanes = S.read_culane(str(tmp_path))
        assert back_rels == rels
        for scene, lanes in zip(scenes, back_lanes):
            assert len(lanes) == len(scene.lanes)
            for orig, lane in zip(scene.lanes, lanes):
                assert np.abs(orig.points - lane.points).max() < 1e-5

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.lines.txt"
        p.write_text("")
        assert S.read_lanes_file(str(p)) == []

    def test_blank_lines_and_whitespace_tolerated(self, tmp_path):
        p = tmp_path / "ws.lines.txt"
        p.write_text("10 200 20 100   \n\n  \n30 250 40 150\n")
        lanes = S.read_lanes_file(str(p))
        assert len(lanes) == 2

    def test_hand_written_fixture(self, tmp_path):
        p = tmp_path / "fx.lines.txt"
        p.write_text("100.5 255.0 110.25 200.0 120.0 150.0\n50 240 60 120\n")
        lanes = S.read_lanes_file(str(p))
        assert np.allclose(lanes[0].points,
                           [[100.5, 255.0], [110.25, 200.0], [120.0, 150.0]])
        assert np.allclose(lanes[1].points, [[50, 240], [60, 120]])

    def test_parse_error_names_file_and_line(self, tmp_path):
        p = tmp_path / "bad.lines.txt"
        p.write_text("10 200 20 100\n10 200 oops 100\n")
        with pytest.raises(S.CULaneParseError, match=r"bad\.lines\.txt:2"):
            S.read_lanes_file(str(p))

    def test_odd_coordinate_count_rejected(self, tmp_path):
        p = tmp_path / "odd.lines.txt"
        p.write_text("10 200 20\n")
        with pytest.raises(S.CULaneParseError):
            S.read_lanes_file(str(p))
