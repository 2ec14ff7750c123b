import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefuse import nn_core as nn
from wavefuse.detector import (
    DRONE,
    NO_OBJECT,
    Backbone,
    DeformableAttention,
    Detector,
    DetectorConfig,
    MatchResult,
    cxcywh_to_xyxy,
    detection_loss,
    giou,
    giou_rows,
    hungarian,
    match_cost,
    pairwise_giou,
    set_loss,
    token_reference_points,
    xyxy_to_cxcywh,
)
from wavefuse.evalkit import iou
from wavefuse.fusion import FusionConfig
from wavefuse.oracles import brute_force_assignment
from wavefuse.train import warm_start

F64 = np.float64
TINY = DetectorConfig(d=16, encoder_layers=1, decoder_layers=2, queries=5, heads=2, points=2, ffn=32,
                      backbone_widths=(4, 8, 8, 8, 8, 8))

corner_box = st.tuples(st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 10), st.floats(0.1, 10)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


class TestGIoU:
    def test_identical(self):
        assert giou([1, 2, 4, 6], [1, 2, 4, 6]) == 1.0

    def test_worked_example(self):
        assert giou([0, 0, 2, 2], [1, 1, 3, 3]) == pytest.approx(-5 / 63, abs=1e-15)

    def test_far_apart_tends_to_minus_one(self):
        v = giou([0, 0, 1e-3, 1e-3], [1e3, 1e3, 1e3 + 1e-3, 1e3 + 1e-3])
        assert -1 < v < -1 + 1e-9

    def test_degenerate_box(self):
        assert giou([0, 0, 0, 2], [1, 0, 2, 2]) == pytest.approx(-0.5)

    @given(corner_box, corner_box)
    def test_symmetric_and_below_iou(self, a, b):
        g = giou(a, b)
        assert g == pytest.approx(giou(b, a), abs=1e-12)
        xywh = lambda c: (c[0], c[1], c[2] - c[0], c[3] - c[1])  # noqa: E731
        assert g <= iou(xywh(a), xywh(b)) + 1e-12
        assert -1 < g <= 1 + 1e-12

    def test_rows_agree_with_pairwise(self):
        rng = np.random.default_rng(0)
        a = np.column_stack([rng.uniform(0.2, 0.8, (6, 2)), rng.uniform(0.05, 0.4, (6, 2))])
        b = np.column_stack([rng.uniform(0.2, 0.8, (6, 2)), rng.uniform(0.05, 0.4, (6, 2))])
        got = giou_rows(nn.Tensor(a, dtype=F64), b).data
        ref = np.diag(pairwise_giou(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)))
        assert np.allclose(got, ref, atol=1e-10)

    def test_box_round_trip(self):
        b = np.array([[0.5, 0.4, 0.2, 0.1]])
        assert np.allclose(xyxy_to_cxcywh(cxcywh_to_xyxy(b)), b)


class TestHungarian:
    def test_trivial(self):
        m = hungarian([[3.0]])
        assert m.pairs == [(0, 0)] and m.unmatched == []

    def test_two_by_two(self):
        cost = np.array([[1.0, 2.0], [2.0, 1.0]])
        m = hungarian(cost)
        assert set(m.pairs) == {(0, 0), (1, 1)} and m.total(cost) == 2.0

    def test_against_brute_force(self):
        rng = np.random.default_rng(1)
        t0 = time.perf_counter()
        for _ in range(200):
            m_gt = int(rng.integers(1, 6))
            n = int(rng.integers(m_gt, 8))
            cost = rng.normal(size=(n, m_gt))
            total, rows = brute_force_assignment(cost)
            res = hungarian(cost)
            assert res.total(cost) == total
            assert tuple(i for i, _ in sorted(res.pairs, key=lambda p: p[1])) == rows
        assert time.perf_counter() - t0 < 5

    def test_tied_integer_costs_pick_first_minimum(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n, m = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            m = min(m, n)
            cost = rng.integers(0, 3, size=(n, m)).astype(float)
            _, rows = brute_force_assignment(cost)
            got = tuple(i for i, _ in sorted(hungarian(cost).pairs, key=lambda p: p[1]))
            assert got == rows

    def test_contract(self):
        m = hungarian(np.random.default_rng(3).normal(size=(9, 4)))
        preds = [i for i, _ in m.pairs]
        assert sorted(j for _, j in m.pairs) == [0, 1, 2, 3]
        assert len(set(preds)) == 4 and preds == sorted(preds)
        assert sorted(preds + m.unmatched) == list(range(9))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-100, 100))
    def test_shift_invariance(self, seed, shift):
        cost = np.random.default_rng(seed).integers(-5, 5, size=(6, 3)).astype(float)
        assert hungarian(cost).pairs == hungarian(cost + shift).pairs

    def test_errors(self):
        with pytest.raises(nn.NumericError):
            hungarian([[0.0, np.nan]] * 3)
        with pytest.raises(nn.ShapeError):
            hungarian(np.zeros((2, 3)))

    def test_no_ground_truth(self):
        m = hungarian(np.zeros((4, 0)))
        assert m.pairs == [] and m.unmatched == [0, 1, 2, 3]


class TestMatchCost:
    box = np.array([[0.5, 0.5, 0.2, 0.3]])

    def test_examples(self):
        assert match_cost(np.array([[1.0, 0.0]]), self.box, self.box)[0, 0] == pytest.approx(-4.0, abs=1e-12)
        assert match_cost(np.array([[0.0, 1.0]]), self.box, self.box)[0, 0] == pytest.approx(-2.0, abs=1e-12)

    def test_monotone_in_probability(self):
        gts = np.array([[0.3, 0.3, 0.1, 0.1], [0.7, 0.6, 0.3, 0.2]])
        p = np.linspace(0, 1, 11)
        c = match_cost(np.column_stack([p, 1 - p]), np.repeat(self.box, 11, 0), gts)
        assert np.all(np.diff(c, axis=0) <= 0)


def head_outputs(rng, nq, requires_grad=True):
    logits = nn.Tensor(rng.normal(size=(nq, 2)), requires_grad=requires_grad, dtype=F64)
    raw = rng.normal(size=(nq, 4)) * 0.5
    boxes = nn.Tensor(1 / (1 + np.exp(-raw)), requires_grad=requires_grad, dtype=F64)
    return logits, boxes


class TestSetLoss:
    def test_perfect_prediction(self):
        gt = np.array([[0.3, 0.4, 0.2, 0.2], [0.7, 0.6, 0.1, 0.3]])
        logits = np.array([[-50.0, 50.0], [50.0, -50.0], [-50.0, 50.0], [50.0, -50.0]])
        boxes = np.array([[0.5, 0.5, 0.1, 0.1], gt[1], [0.2, 0.2, 0.1, 0.1], gt[0]])
        loss = set_loss(nn.Tensor(logits, dtype=F64), nn.Tensor(boxes, dtype=F64), gt, MatchResult([(1, 1), (3, 0)], [0, 2]))
        assert abs(float(loss.data)) <= 1e-9

    def test_empty_ground_truth(self):
        rng = np.random.default_rng(4)
        logits, boxes = head_outputs(rng, 6, requires_grad=False)
        loss = set_loss(logits, boxes, np.zeros((0, 4)), hungarian(np.zeros((6, 0))))
        lp = logits.data - np.log(np.exp(logits.data).sum(1, keepdims=True))
        assert float(loss.data) == pytest.approx(-0.1 * lp[:, NO_OBJECT].mean(), abs=1e-12)

    def test_labels(self):
        assert (DRONE, NO_OBJECT) == (0, 1)

    def test_gradcheck_fixed_matching(self):
        rng = np.random.default_rng(5)
        gt = np.array([[0.3, 0.4, 0.2, 0.2], [0.6, 0.6, 0.3, 0.2]])
        for _ in range(3):
            logits, boxes = head_outputs(rng, 5)
            probs = np.exp(logits.data) / np.exp(logits.data).sum(1, keepdims=True)
            m = hungarian(match_cost(probs, boxes.data, gt))
            assert nn.grad_check(lambda: set_loss(logits, boxes, gt, m), [logits, boxes]) <= 1e-4


class TestBackbone:
    def test_level_shapes(self):
        bb = Backbone(64, rng=np.random.default_rng(0))
        pyr = bb(np.zeros((3, 256, 256), np.float32))
        assert [lv.shape for lv in pyr.levels] == [(64, 32, 32), (64, 16, 16), (64, 8, 8), (64, 4, 4)]
        assert pyr.strides == (8, 16, 32, 64)

    def test_zero_image_zero_bias(self):
        bb = Backbone(8, (4, 4, 4, 4, 4, 4), np.random.default_rng(0))
        for p in bb.parameters():
            if p.data.ndim == 1:
                p.data[:] = 0
        assert all(not lv.data.any() for lv in bb(np.zeros((3, 64, 128))).levels)

    def test_deterministic(self):
        bb = Backbone(8, (4, 4, 4, 4, 4, 4), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, 64, 64)).astype(np.float32)
        assert all(np.array_equal(a.data, b.data) for a, b in zip(bb(x).levels, bb(x).levels))

    def test_indivisible(self):
        with pytest.raises(nn.ShapeError):
            Backbone(8, (4, 4, 4, 4, 4, 4))(np.zeros((3, 64, 100)))


def bilinear_reference(grid, x, y):
    """Zero-padded bilinear lookup on ``grid [H, W, c]`` at normalized (x, y)."""
    H, W, _ = grid.shape
    px, py = x * W - 0.5, y * H - 0.5
    j0, i0 = int(np.floor(px)), int(np.floor(py))
    out = np.zeros(grid.shape[2])
    for i, wy in ((i0, 1 - (py - i0)), (i0 + 1, py - i0)):
        for j, wx in ((j0, 1 - (px - j0)), (j0 + 1, px - j0)):
            if 0 <= i < H and 0 <= j < W:
                out += wy * wx * grid[i, j]
    return out


class TestDeformableAttention:
    shapes = [(4, 4), (2, 2), (1, 1), (1, 1)]

    def layer(self, d=8, heads=2, points=2, seed=0):
        return DeformableAttention(d, 4, heads, points, np.random.default_rng(seed), dtype=F64)

    def test_zero_offsets_sample_reference(self):
        rng = np.random.default_rng(6)
        att = self.layer(points=1)
        att.offsets.bias.data[:] = 0
        S = sum(h * w for h, w in self.shapes)
        q, ref, vals = rng.normal(size=(3, 8)), rng.uniform(0, 1, (3, 2)), rng.normal(size=(S, 8))
        out = att(nn.Tensor(q, dtype=F64), ref, nn.Tensor(vals, dtype=F64), self.shapes).data
        # with zero attention logits every level gets weight 1/L
        v = vals @ att.value.weight.data.T + att.value.bias.data
        starts = np.cumsum([0] + [h * w for h, w in self.shapes])
        expect = np.zeros((3, 8))
        for n in range(3):
            for (h, w), s in zip(self.shapes, starts):
                expect[n] += bilinear_reference(v[s:s + h * w].reshape(h, w, 8), *ref[n]) / 4
        expect = expect @ att.out.weight.data.T + att.out.bias.data
        assert np.allclose(out, expect, atol=1e-12)

    def test_weights_normalized(self):
        rng = np.random.default_rng(7)
        att = self.layer()
        att.weights.weight.data[:] = rng.normal(size=att.weights.weight.shape)
        S = 22
        att(nn.Tensor(rng.normal(size=(5, 8))), rng.uniform(0, 1, (5, 2)), nn.Tensor(rng.normal(size=(S, 8))), self.shapes)
        assert att.last_weights.shape == (5, 2, 8)
        assert np.allclose(att.last_weights.sum(-1), 1.0, atol=1e-9)

    def test_heads_must_divide(self):
        with pytest.raises(nn.ConfigError):
            DeformableAttention(10, heads=4)

    def test_gradcheck(self):
        rng = np.random.default_rng(8)
        att = self.layer()
        for p in (att.offsets.weight, att.weights.weight):
            p.data[:] = rng.normal(0, 0.3, p.shape)
        q = nn.Tensor(rng.normal(size=(3, 8)), requires_grad=True, dtype=F64)
        vals = nn.Tensor(rng.normal(size=(22, 8)), requires_grad=True, dtype=F64)
        ref = token_reference_points([(1, 3)])
        probe = rng.normal(size=(3, 8))
        f = lambda: (att(q, ref, vals, self.shapes) * probe).sum()  # noqa: E731
        assert nn.grad_check(f, [q, vals, *att.parameters()]) <= 1e-4


class TestDetector:
    def image(self, seed=0, size=64):
        return np.random.default_rng(seed).normal(size=(3, size, size)).astype(np.float32)

    def test_output_contract(self):
        det = Detector(TINY, seed=1)
        out = det(self.image())
        assert out.probs.shape == (TINY.queries, 2) and out.boxes.shape == (TINY.queries, 4)
        assert np.all((out.boxes.data > 0) & (out.boxes.data < 1))
        assert np.allclose(out.probs.data.astype(F64).sum(1), 1.0, atol=1e-6)
        assert len(out.aux) == TINY.decoder_layers - 1

    def test_probabilities_sum_to_one_in_float64(self):
        out = Detector(TINY, seed=1, dtype=F64)(self.image().astype(F64))
        assert np.allclose(out.probs.data.sum(1), 1.0, atol=1e-9)

    def test_config_errors(self):
        with pytest.raises(nn.ConfigError):
            DetectorConfig(d=10, heads=4)
        with pytest.raises(nn.ConfigError):
            DetectorConfig(levels=3)

    def test_fused_detector_needs_audio(self):
        det = Detector(TINY, FusionConfig("gated"), audio_dim=8)
        with pytest.raises(nn.ConfigError):
            det(self.image())

    def test_saturated_gate_matches_rgb_detector(self):
        base = Detector(TINY, seed=2)
        fused = Detector(TINY, FusionConfig("gated", gate_bias_init=100.0), audio_dim=8, seed=3)
        warm_start(fused, base.rgb_state())
        img = self.image(4, 128)
        audio = np.random.default_rng(5).normal(size=(7, 8)).astype(np.float32)
        a, b = base(img), fused(img, audio)
        assert np.max(np.abs(a.probs.data - b.probs.data)) <= 1e-5
        assert np.max(np.abs(a.boxes.data - b.boxes.data)) <= 1e-5

    def test_deterministic_in_eval(self):
        det = Detector(TINY, FusionConfig("gated", dropout_rate=0.2), audio_dim=8).eval()
        img, audio = self.image(), np.ones((3, 8), np.float32)
        assert np.array_equal(det(img, audio).boxes.data, det(img, audio).boxes.data)

    def test_overfit_single_image(self):
        det = Detector(TINY, seed=6)
        img = self.image(7)
        gt = np.array([[0.3, 0.4, 0.2, 0.25], [0.7, 0.7, 0.15, 0.1]])
        opt = nn.Adam(det.parameters(), lr=2e-3)
        losses = []
        for _ in range(20):
            opt.zero_grad()
            loss, matches = detection_loss(det(img), gt, det.cfg)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        assert len(matches) == TINY.decoder_layers
        assert losses[-1] < 0.7 * losses[0]
        assert np.mean(losses[-5:]) < np.mean(losses[:5])
