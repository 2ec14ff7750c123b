"""Self-verification: gradient checks, combinatorial oracles and fusion identities.

Each check returns ``(passed, detail)``. ``run_checks`` drives them for the
``verify`` command; the gradient cases are also reused by the test suite.
"""

from __future__ import annotations

import contextlib
import time
from collections.abc import Callable

import numpy as np

from . import fusion
from . import nn_core as nn
from .datakit.sync import counter_video, pair_video, read_counter
from .detector import DeformableAttention, giou_rows, hungarian, match_cost, set_loss
from .evalkit import IOU_THRESHOLDS, BUCKETS, Detection, GroundTruth, map_report
from .nn_core import Tensor
from .oracles import brute_force_assignment, brute_force_map

F64 = np.float64
GRAD_TOL = 1e-4


def _t(rng, *shape, scale=1.0, shift=0.0):
    return Tensor(rng.normal(size=shape) * scale + shift, requires_grad=True, dtype=F64)


def _probe(rng, f):
    """Turn a tensor-valued closure into a scalar one through a fixed random projection."""
    w = {}

    def g():
        out = f()
        if "w" not in w:
            w["w"] = rng.normal(size=out.shape)
        return (out * w["w"]).sum()

    return g


# -- gradient cases: each builds one random point and returns (scalar closure, parameters) -------------


def _arith(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, shift=3.0)
    return _probe(rng, lambda: (a * b + a / b - b) ** 2 - (-a)), [a, b]


def _unary(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (5,)), requires_grad=True, dtype=F64)
    return _probe(rng, lambda: nn.exp(x) + nn.log(x) + nn.sqrt(x) + nn.tabs(x - 1.25)), [x]


def _minmax(rng):
    a, b = _t(rng, 6), _t(rng, 6)
    return _probe(rng, lambda: nn.maximum(a, b) * 2 + nn.minimum(a, b) + nn.clamp(a, -0.3, 0.4)), [a, b]


def _matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    return _probe(rng, lambda: a @ b), [a, b]


def _reduce(rng):
    a = _t(rng, 3, 4, 2)
    return _probe(rng, lambda: a.sum(axis=0) + a.mean(axis=(0,), keepdims=True).reshape(4, 2)), [a]


def _shape_ops(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    idx = np.array([2, 0, 2])
    return _probe(rng, lambda: nn.concat([a[idx], nn.stack([a, b], axis=0).transpose(1, 0, 2).reshape(6, 4)])), [a, b]


def _linear(rng):
    x, W, b = _t(rng, 4, 5), _t(rng, 3, 5), _t(rng, 3)
    return _probe(rng, lambda: nn.linear(x, W, b)), [x, W, b]


def _conv1d(rng):
    x, w, b = _t(rng, 2, 17), _t(rng, 3, 2, 4), _t(rng, 3)
    return _probe(rng, lambda: nn.conv1d(x, w, b, 2, 1)), [x, w, b]


def _conv2d(rng):
    x, w, b = _t(rng, 2, 7, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    return _probe(rng, lambda: nn.conv2d(x, w, b, 2, 1)), [x, w, b]


def _layer_norm(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    return _probe(rng, lambda: nn.layer_norm(x, g, b)), [x, g, b]


def _activations(rng):
    x = _t(rng, 3, 5)
    return _probe(rng, lambda: nn.softmax(x) + nn.log_softmax(x) + nn.sigmoid(x) + nn.relu(x)), [x]


def _inverse_sigmoid(rng):
    x = Tensor(rng.uniform(0.1, 0.9, (6,)), requires_grad=True, dtype=F64)
    return _probe(rng, lambda: nn.inverse_sigmoid(x)), [x]


def _dropout(rng):
    x = _t(rng, 4, 5)
    seed = int(rng.integers(1 << 31))
    return _probe(rng, lambda: nn.dropout(x, 0.3, True, np.random.default_rng(seed))), [x]


def _interp(rng):
    s = _t(rng, 5, 3)
    return _probe(rng, lambda: nn.interp_linear_1d(s, 9)), [s]


def _bilinear(rng):
    fmap = _t(rng, 2, 5, 4)
    pts = Tensor(rng.uniform(0.02, 0.98, (6, 2)), requires_grad=True, dtype=F64)
    return _probe(rng, lambda: nn.bilinear_sample(fmap, pts)), [fmap, pts]


def _multiscale(rng):
    shapes = [(4, 3), (2, 2)]
    vals = _t(rng, 2, 16, 3)
    pts = Tensor(rng.uniform(0.02, 0.98, (2, 2, 5, 2)), requires_grad=True, dtype=F64)
    return _probe(rng, lambda: nn.multiscale_sample(vals, shapes, pts)), [vals, pts]


def _giou(rng):
    centres = rng.uniform(0.3, 0.7, (4, 2))
    pred = Tensor(np.column_stack([centres, rng.uniform(0.1, 0.4, (4, 2))]), requires_grad=True, dtype=F64)
    target = np.column_stack([centres + rng.normal(0, 0.05, (4, 2)), rng.uniform(0.1, 0.4, (4, 2))])
    return _probe(rng, lambda: giou_rows(pred, target)), [pred]


def _set_loss(rng):
    logits = _t(rng, 6, 2)
    boxes = Tensor(np.column_stack([rng.uniform(0.2, 0.8, (6, 2)), rng.uniform(0.1, 0.3, (6, 2))]),
                   requires_grad=True, dtype=F64)
    gt = np.column_stack([rng.uniform(0.2, 0.8, (2, 2)), rng.uniform(0.1, 0.3, (2, 2))])
    probs = np.exp(logits.data) / np.exp(logits.data).sum(1, keepdims=True)
    match = hungarian(match_cost(probs, boxes.data, gt))
    return (lambda: set_loss(logits, boxes, gt, match)), [logits, boxes]


def _deformable(rng):
    shapes = [(3, 3), (2, 2), (1, 2), (1, 1)]
    att = DeformableAttention(8, 4, 2, 2, rng, dtype=F64)
    for p in (att.offsets.weight, att.weights.weight):
        p.data[:] = rng.normal(0, 0.3, p.shape)
    q, vals = _t(rng, 3, 8), _t(rng, 16, 8)
    ref = rng.uniform(0.1, 0.9, (3, 2))
    return _probe(rng, lambda: att(q, ref, vals, shapes)), [q, vals, *att.parameters()]


def _fusion_concat(kind):
    def case(rng):
        d, n = 4, 6
        rgb, aud, W, b = _t(rng, n, d), _t(rng, n, d), _t(rng, d, 2 * d), _t(rng, d)
        fn = getattr(fusion, f"fuse_{kind}")  # looked up late so a patched layer is the one checked
        return _probe(rng, lambda: fn(rgb, aud, W, b)), [rgb, aud, W, b]

    return case


def _fusion_xattn(rng):
    rgb, frames = _t(rng, 5, 4), _t(rng, 7, 6)
    ws = [_t(rng, 4, 4), _t(rng, 4, 6), _t(rng, 4, 6), _t(rng, 4), _t(rng, 4), _t(rng, 4)]
    return _probe(rng, lambda: fusion.fuse_xattn(rgb, frames, *ws, heads=2)), [rgb, frames, *ws]


GRADIENT_CASES: dict[str, Callable] = {
    "arithmetic": _arith,
    "exp-log-sqrt-abs": _unary,
    "maximum-minimum-clamp": _minmax,
    "matmul": _matmul,
    "sum-mean": _reduce,
    "index-concat-stack-reshape": _shape_ops,
    "linear": _linear,
    "conv1d": _conv1d,
    "conv2d": _conv2d,
    "layer_norm": _layer_norm,
    "softmax-log_softmax-sigmoid-relu": _activations,
    "inverse_sigmoid": _inverse_sigmoid,
    "dropout": _dropout,
    "interp_linear_1d": _interp,
    "bilinear_sample": _bilinear,
    "multiscale_sample": _multiscale,
    "giou": _giou,
    "set_loss": _set_loss,
    "deformable_attention": _deformable,
    "fuse_linear": _fusion_concat("linear"),
    "fuse_mlp": _fusion_concat("mlp"),
    "fuse_gated": _fusion_concat("gated"),
    "fuse_xattn": _fusion_xattn,
}


def gradient_errors(points: int = 10, seed: int = 0, cases=None) -> dict[str, float]:
    """Worst relative finite-difference error per case over ``points`` random points."""
    out = {}
    for name, case in (cases or GRADIENT_CASES).items():
        rng = np.random.default_rng(nn.derive_seed(seed, name))
        worst = 0.0
        for _ in range(points):
            f, params = case(rng)
            worst = max(worst, nn.grad_check(f, params))
        out[name] = worst
    return out


# -- oracles and identities --------------------------------------------------------------------------


def hungarian_oracle(trials: int = 200, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(trials):
        m = int(rng.integers(1, 6))
        n = int(rng.integers(m, 8))
        cost = rng.normal(size=(n, m))
        if hungarian(cost).total(cost) != brute_force_assignment(cost)[0]:
            bad += 1
    dt = time.perf_counter() - t0
    return bad == 0 and dt < 5, f"{bad} mismatches in {trials} trials, {dt:.2f}s"


def micro_scene(rng, max_gt: int = 5, max_det: int = 8, extent: float = 200.0):
    """One image with up to ``max_gt`` boxes of mixed sizes and up to ``max_det`` scored guesses."""
    gts = []
    for _ in range(rng.integers(0, max_gt + 1)):
        side = float(np.exp(rng.uniform(np.log(4), np.log(130))))
        gts.append(GroundTruth(0, (rng.uniform(0, extent), rng.uniform(0, extent), side * rng.uniform(0.8, 1.25), side)))
    dets = []
    for _ in range(rng.integers(0, max_det + 1)):
        if gts and rng.random() < 0.6:
            g = gts[rng.integers(len(gts))]
            j = rng.normal(0, 0.1 * g.box[3], size=4)
            box = (g.box[0] + j[0], g.box[1] + j[1], abs(g.box[2] + j[2]) + 1, abs(g.box[3] + j[3]) + 1)
        else:
            box = (rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(3, 100), rng.uniform(3, 100))
        dets.append(Detection(0, box, float(rng.random())))
    return dets, gts


def map_oracle(scenes: int = 50, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(scenes):
        dets, gts = micro_scene(rng)
        rep, ref = map_report(dets, gts), brute_force_map(dets, gts)
        for t in IOU_THRESHOLDS:
            for b in BUCKETS:
                a, o = rep.ap[t][b], ref["ap"][t][b]
                if (a is None) != (o is None):
                    return False, f"bucket presence differs at iou={t}, bucket={b}"
                if a is not None:
                    worst = max(worst, abs(a - o))
    return worst <= 1e-9, f"max |AP - oracle| = {worst:.2e} over {scenes} scenes"


def fusion_identities(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    d, n = 8, 10
    rgb, aud = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    eye, zero = np.eye(d), np.zeros((d, d))
    ok_sel = (np.array_equal(fusion.fuse_linear(rgb, aud, np.hstack([eye, zero])).data, rgb)
              and np.array_equal(fusion.fuse_linear(rgb, aud, np.hstack([zero, eye])).data, aud))
    levels = [Tensor(rng.normal(size=(d, h, w)), dtype=F64) for h, w in ((4, 4), (2, 2), (1, 1), (1, 1))]
    pyr = fusion.FeaturePyramid(levels)
    gated = fusion.PyramidFusion(fusion.FusionConfig("gated", gate_bias_init=100.0), d, 12, rng=rng, dtype=F64)
    out = gated(pyr, rng.normal(size=(5, 12)))
    gate_err = max(float(np.max(np.abs(a.data - b.data))) for a, b in zip(out.levels, pyr.levels))
    Wq, Wk, Wv = rng.normal(size=(d, d)), rng.normal(size=(d, 6)), rng.normal(size=(d, 6))
    frames = rng.normal(size=(9, 6))
    perm_err = float(np.max(np.abs(fusion.fuse_xattn(rgb, frames, Wq, Wk, Wv).data
                                   - fusion.fuse_xattn(rgb, frames[rng.permutation(9)], Wq, Wk, Wv).data)))
    ok = ok_sel and gate_err <= 1e-6 and perm_err <= 1e-9
    return ok, f"selectors exact={ok_sel}, gate +100 err={gate_err:.1e}, xattn permutation err={perm_err:.1e}"


def sync_midpoints(seconds: int = 10) -> tuple[bool, str]:
    frames, audio = counter_video(seconds, fps=60)
    pairs = pair_video(frames, audio, 60)
    got = [read_counter(p.image) for p in pairs]
    want = [30 + 60 * k for k in range(seconds)]
    return got == want, f"{len(pairs)} segments, counters {'match' if got == want else got}"


# -- mutation fixture -----------------------------------------------------------------------------------


def _flip_grad(t: Tensor) -> Tensor:
    return Tensor._make(t.data, (t,), lambda g: (-g,))


def _fuse_gated_flipped(rgb, audio, W, b=None, rate=0.0, training=False, rng=None):
    rgb, audio = nn.as_tensor(rgb), nn.as_tensor(audio)
    logits = nn.dropout(nn.linear(nn.concat([rgb, audio], axis=-1), W, b), rate, training, rng)
    g = _flip_grad(nn.sigmoid(logits))
    return g * rgb + (1.0 - g) * audio


MUTATIONS = {"gate-grad-sign": ("fuse_gated", _fuse_gated_flipped)}


@contextlib.contextmanager
def mutation(name: str | None):
    """Temporarily swap in a deliberately broken layer so the suite can prove it notices."""
    if name is None:
        yield
        return
    attr, broken = MUTATIONS[name]
    original = getattr(fusion, attr)
    setattr(fusion, attr, broken)
    try:
        yield
    finally:
        setattr(fusion, attr, original)


def run_checks(points: int = 10, log=print, mutate: str | None = None) -> list[tuple[str, bool, str]]:
    results = []
    with mutation(mutate):
        t0 = time.perf_counter()
        for name, err in gradient_errors(points).items():
            results.append((f"gradcheck:{name}", err <= GRAD_TOL, f"max rel err {err:.2e}"))
        results.append(("gradcheck:runtime", time.perf_counter() - t0 < 60, f"{time.perf_counter() - t0:.1f}s"))
        for name, fn in (("hungarian-oracle", hungarian_oracle), ("map-oracle", map_oracle),
                         ("fusion-identities", fusion_identities), ("sync-midpoints", sync_midpoints)):
            ok, detail = fn()
            results.append((name, ok, detail))
    if log:
        for name, ok, detail in results:
            log(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return results
