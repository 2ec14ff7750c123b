import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavefuse import nn_core as nn
from wavefuse.nn_core import checkpoint
from wavefuse.nn_core.tensor import ConfigError, NumericError, ShapeError, Tensor


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- linear -------------------------------------------------------------------------


def test_linear_hand_example():
    y = nn.linear(T([1.0, 2.0]), T([[1.0, 0.0], [1.0, 1.0]]), T([0.0, 1.0]))
    np.testing.assert_array_equal(y.data, [1.0, 4.0])


def test_linear_identity(rng):
    x = rng.normal(size=(3, 5))
    y = nn.linear(T(x), T(np.eye(5)), T(np.zeros(5)))
    np.testing.assert_array_equal(y.data, x)


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        nn.linear(T(np.zeros((2, 3))), T(np.zeros((4, 2))))


def test_linear_gradcheck(rng):
    x, W, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=(2, 3))), T(rng.normal(size=2))
    err = nn.grad_check(lambda: (nn.linear(x, W, b) ** 2).sum(), [x, W, b])
    assert err <= 1e-6


# -- activations ---------------------------------------------------------------------


def test_activation_examples():
    assert nn.activation(T([0.0]), "sigmoid").data[0] == 0.5
    np.testing.assert_array_equal(nn.activation(T([-3.0, 3.0]), "relu").data, [0.0, 3.0])
    assert nn.activation(T([[7.5]]), "softmax_lastdim").data[0, 0] == 1.0
    with pytest.raises(ConfigError):
        nn.activation(T([1.0]), "gelu")


def test_sigmoid_no_overflow():
    y = nn.sigmoid(T([-1000.0, 1000.0]))
    assert np.all(np.isfinite(y.data))
    np.testing.assert_allclose(y.data, [0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
def test_softmax_sums_to_one(vals):
    s = nn.softmax(T(vals)).data
    assert abs(s.sum() - 1.0) <= 1e-12


# -- dropout ---------------------------------------------------------------------------


def test_dropout_identities(rng):
    x = T(rng.normal(size=(5, 4)))
    assert nn.dropout(x, 0.0, True, rng) is x
    assert nn.dropout(x, 0.7, False, rng) is x
    with pytest.raises(ConfigError):
        nn.dropout(x, 1.0, True, rng)


def test_dropout_is_unbiased_monte_carlo():
    x = np.linspace(0.5, 2.0, 8)
    rs = nn.RngState(99)
    n = 10_000
    acc = np.zeros_like(x)
    for _ in range(n):
        acc += nn.dropout(T(x), 0.5, True, rs).data
    mean = acc / n
    # each draw is 0 or 2x with equal odds: std per entry is x
    assert np.all(np.abs(mean - x) <= 3 * x / np.sqrt(n))


def test_dropout_deterministic_given_seed():
    x = T(np.ones((6, 6)))
    a = nn.dropout(x, 0.3, True, nn.RngState(5)).data
    b = nn.dropout(x, 0.3, True, nn.RngState(5)).data
    np.testing.assert_array_equal(a, b)


# -- convolutions ------------------------------------------------------------------------


def naive_conv2d(x, w, b, s, p):
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    co, ci, k, _ = w.shape
    Ho = (x.shape[1] + 2 * p - k) // s + 1
    Wo = (x.shape[2] + 2 * p - k) // s + 1
    out = np.zeros((co, Ho, Wo))
    for o in range(co):
        for i in range(Ho):
            for j in range(Wo):
                out[o, i, j] = np.sum(xp[:, i * s : i * s + k, j * s : j * s + k] * w[o]) + b[o]
    return out


@pytest.mark.parametrize("s,p,k", [(1, 0, 3), (2, 1, 3), (2, 0, 2), (3, 2, 5)])
def test_conv2d_matches_naive_loops(rng, s, p, k):
    x = rng.normal(size=(2, 9, 8))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=3)
    y = nn.conv2d(T(x), T(w), T(b), s, p)
    np.testing.assert_allclose(y.data, naive_conv2d(x, w, b, s, p), rtol=1e-12, atol=1e-12)


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(nn.conv2d(T(x), T(w)).data, x)
    x1 = rng.normal(size=(3, 11))
    np.testing.assert_array_equal(nn.conv1d(T(x1), T(np.eye(3).reshape(3, 3, 1))).data, x1)


def test_conv1d_length_arithmetic():
    y = nn.conv1d(T(np.zeros((1, 32000))), T(np.zeros((2, 1, 10))), stride=5)
    assert y.shape == (2, 6399)


def test_conv_rejects_empty_output():
    with pytest.raises(ShapeError):
        nn.conv1d(T(np.zeros((1, 4))), T(np.zeros((1, 1, 5))))
    with pytest.raises(ShapeError):
        nn.conv2d(T(np.zeros((1, 3, 3))), T(np.zeros((1, 1, 4, 4))))


def test_conv2d_gradcheck(rng):
    x = T(rng.normal(size=(3, 8, 8)))
    w = T(rng.normal(size=(2, 3, 3, 3)) * 0.3)
    b = T(rng.normal(size=2))
    err = nn.grad_check(lambda: (nn.conv2d(x, w, b, 2, 1) ** 2).sum(), [x, w, b])
    assert err <= 1e-5


def test_conv1d_gradcheck(rng):
    x = T(rng.normal(size=(2, 23)))
    w = T(rng.normal(size=(3, 2, 4)) * 0.3)
    b = T(rng.normal(size=3))
    err = nn.grad_check(lambda: (nn.conv1d(x, w, b, 3) ** 2).sum(), [x, w, b])
    assert err <= 1e-5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2))
def test_conv1d_shape_formula(n, k, s, p):
    expected = (n + 2 * p - k) // s + 1
    x, w = T(np.ones((1, n))), T(np.ones((1, 1, k)))
    if expected <= 0:
        with pytest.raises(ShapeError):
            nn.conv1d(x, w, stride=s, padding=p)
    else:
        assert nn.conv1d(x, w, stride=s, padding=p).shape == (1, expected)


# -- interpolation & sampling --------------------------------------------------------------


def test_interp_examples(rng):
    seq = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(nn.interp_linear_1d(T(seq), 6).data, seq)
    y = nn.interp_linear_1d(T([[0.0], [1.0]]), 3)
    np.testing.assert_allclose(y.data, [[0.0], [0.5], [1.0]])
    const = np.full((4, 2), 3.25)
    for n in (1, 2, 7, 13):
        np.testing.assert_allclose(nn.interp_linear_1d(T(const), n).data, 3.25, rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20))
def test_interp_shape_and_endpoints(t, n):
    seq = np.arange(t * 2, dtype=float).reshape(t, 2)
    y = nn.interp_linear_1d(T(seq), n).data
    assert y.shape == (n, 2)
    np.testing.assert_allclose(y[0], seq[0])
    if n > 1:
        np.testing.assert_allclose(y[-1], seq[-1], atol=1e-12)


def test_interp_gradcheck(rng):
    seq = T(rng.normal(size=(5, 3)))
    err = nn.grad_check(lambda: (nn.interp_linear_1d(seq, 9) ** 2).sum(), [seq])
    assert err <= 1e-6


def test_bilinear_on_cell_centre(rng):
    fmap = rng.normal(size=(2, 4, 5))
    # cell (row 1, col 3) centre
    pt = T([(3 + 0.5) / 5, (1 + 0.5) / 4])
    np.testing.assert_allclose(nn.bilinear_sample(T(fmap), pt).data, fmap[:, 1, 3], atol=1e-12)


def test_bilinear_equidistant_is_mean(rng):
    fmap = rng.normal(size=(3, 4, 4))
    # corner shared by cells (1,1),(1,2),(2,1),(2,2)
    out = nn.bilinear_sample(T(fmap), T([0.5, 0.5])).data
    np.testing.assert_allclose(out, fmap[:, 1:3, 1:3].mean(axis=(1, 2)), atol=1e-12)


def test_bilinear_out_of_range_is_zero_padded():
    fmap = np.ones((1, 3, 3))
    assert nn.bilinear_sample(T(fmap), T([2.0, 2.0])).data[0] == 0.0
    # half a cell outside the left edge: only the in-range column contributes
    edge = nn.bilinear_sample(T(fmap), T([0.0, 0.5])).data[0]
    assert edge == pytest.approx(0.5)


def test_bilinear_gradcheck_points_and_map(rng):
    fmap = T(rng.normal(size=(2, 5, 5)))
    pts = T(rng.uniform(0.05, 0.95, size=(6, 2)))
    err = nn.grad_check(lambda: (nn.bilinear_sample(fmap, pts) ** 2).sum(), [fmap, pts])
    assert err <= 1e-5


def test_multiscale_sample_matches_per_level(rng):
    shapes = [(4, 4), (2, 3)]
    G, c, P = 2, 3, 5
    levels = [rng.normal(size=(G, c, h, w)) for h, w in shapes]
    flat = np.concatenate([lv.reshape(G, c, -1).transpose(0, 2, 1) for lv in levels], axis=1)
    pts = rng.uniform(-0.1, 1.1, size=(G, len(shapes), P, 2))
    out = nn.multiscale_sample(T(flat), shapes, T(pts)).data
    for g in range(G):
        for l in range(len(shapes)):
            ref = nn.bilinear_sample(T(levels[l][g]), T(pts[g, l])).data
            np.testing.assert_allclose(out[g, l], ref, atol=1e-12)


# -- layer norm, log-softmax --------------------------------------------------------------


def test_layer_norm_and_log_softmax_gradcheck(rng):
    x = T(rng.normal(size=(3, 6)))
    g = T(rng.normal(size=6))
    b = T(rng.normal(size=6))
    w = rng.normal(size=(3, 6))
    assert nn.grad_check(lambda: (nn.layer_norm(x, g, b) * w).sum(), [x, g, b]) <= 1e-6
    assert nn.grad_check(lambda: (nn.log_softmax(x) * w).sum(), [x]) <= 1e-6


# -- grad_check itself ------------------------------------------------------------------------


def test_grad_check_examples(rng):
    x = T([3.0])
    assert nn.grad_check(lambda: (x * x).sum(), [x]) <= 1e-9
    np.testing.assert_allclose(x.grad, [6.0])
    W, b, z = T(rng.normal(size=(4, 3))), T(rng.normal(size=4)), T(rng.normal(size=(2, 3)))
    assert nn.grad_check(lambda: nn.sigmoid(nn.linear(z, W, b)).sum(), [z, W, b]) <= 1e-6
    c = T([1.0, 2.0])
    assert nn.grad_check(lambda: Tensor(np.array(4.0)) + 0.0 * c.sum(), [c]) == 0.0


def test_grad_check_rejects_non_finite():
    x = T([0.0])
    with pytest.raises(NumericError), np.errstate(divide="ignore", invalid="ignore"):
        nn.grad_check(lambda: nn.log(x).sum(), [x])


def test_broadcast_gradients(rng):
    a = T(rng.normal(size=(3, 1, 4)))
    b = T(rng.normal(size=(2, 4)))
    assert nn.grad_check(lambda: ((a * b + a / (b * b + 1.0) - b) ** 2).sum(), [a, b]) <= 1e-6


def test_index_concat_stack_grads(rng):
    a = T(rng.normal(size=(4, 3)))
    b = T(rng.normal(size=(2, 3)))
    idx = np.array([0, 2, 2, 3])

    def f():
        c = nn.concat([a, b], axis=0)
        s = nn.stack([c[idx], c[1:5]], axis=1)
        return (s * s).sum() + nn.maximum(a, 0.1).sum() + nn.minimum(b, 0.2).sum()

    assert nn.grad_check(f, [a, b]) <= 1e-6


# -- optimizer ----------------------------------------------------------------------------------


def _param(vals, group="head"):
    return nn.Parameter(np.asarray(vals, dtype=np.float64), group=group)


def test_adam_zero_gradient_keeps_params():
    p = _param([1.0, -2.0])
    opt = nn.Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    p = _param(np.zeros(3))
    lr, eps = 0.01, 1e-8
    opt = nn.Adam([p], lr=lr, eps=eps)
    p.grad = g.copy()
    opt.step()
    expected = -lr * np.sign(g) / (1 + eps / np.abs(g))
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adam_frozen_backbone_group(rng):
    bb, hd = _param(rng.normal(size=4), "backbone"), _param(rng.normal(size=4), "head")
    before = bb.data.copy()
    opt = nn.Adam([bb, hd], lr=1e-3, group_lr={"backbone": 0.0})
    for _ in range(25):
        bb.grad = rng.normal(size=4)
        hd.grad = rng.normal(size=4)
        opt.step()
    assert bb.data.tobytes() == before.tobytes()


def test_adam_negative_lr_rejected():
    with pytest.raises(ConfigError):
        nn.Adam([_param([0.0])], lr=-1.0)
    with pytest.raises(ConfigError):
        nn.adam_step([np.zeros(1)], [np.ones(1)], nn.AdamState([np.zeros(1)], [np.zeros(1)]), -0.1)


def test_schedules():
    plateau = nn.PlateauSchedule(patience=2, factor=0.5)
    scales = [plateau.step(m) for m in [1.0, 0.9, 0.95, 0.95, 0.95, 0.95]]
    assert scales[-1] == 0.5 and scales[3] == 1.0
    cos = nn.CosineSchedule(period=4)
    vals = [cos.step(epoch=e) for e in range(4)]
    assert vals[-1] == pytest.approx(0.0) and vals[0] < 1.0
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_parameter_group_validated():
    with pytest.raises(ConfigError):
        nn.Parameter(np.zeros(1), group="decoder")


# -- determinism & checkpoints --------------------------------------------------------------------


def test_rng_state_reproducible():
    a = nn.RngState(42).generator.random(5)
    b = nn.RngState(42).generator.random(5)
    np.testing.assert_array_equal(a, b)
    assert nn.derive_seed(1, "x") == nn.derive_seed(1, "x") != nn.derive_seed(1, "y")


def test_checkpoint_round_trip(tmp_path, rng):
    state = {"b.w": rng.normal(size=(3, 2)).astype(np.float32), "a": np.arange(4, dtype=np.float32)}
    h1 = checkpoint.save(tmp_path / "m.ckpt", state, {"step": 3})
    h2 = checkpoint.save(tmp_path / "n.ckpt", state, {"step": 3})
    assert h1 == h2
    blob = (tmp_path / "m.ckpt").read_bytes()
    assert blob.startswith(b"WAVEFUSE-CKPT-1\n")
    back, meta = checkpoint.load(tmp_path / "m.ckpt")
    assert meta == {"step": 3}
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"nope" + blob)


def test_module_state_dict_round_trip(rng):
    mlp = nn.MLP([3, 4, 2], rng)
    other = nn.MLP([3, 4, 2], np.random.default_rng(0))
    other.load_state_dict(mlp.state_dict())
    x = Tensor(rng.normal(size=(2, 3)).astype(np.float32))
    np.testing.assert_array_equal(mlp(x).data, other(x).data)
    names = [n for n, _ in mlp.named_parameters()]
    assert len(names) == len(set(names)) == 4
