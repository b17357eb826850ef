import numpy as np
import pytest

from khcv import FlowField, FlowParams, compose_flows, estimate_flow, flow_to_color, mean_epe, sample_bilinear

from conftest import central_fraction_mask, shifted_pair, smooth_texture


def constant_flow(h, w, dx, dy):
    return FlowField(np.full((h, w), dx, np.float32), np.full((h, w), dy, np.float32))


def test_params_validation():
    with pytest.raises(ValueError):
        FlowParams(pyramid_levels=0)
    with pytest.raises(ValueError):
        FlowParams(alpha=0.0)
    with pytest.raises(ValueError):
        FlowParams(iters_per_level=0)


def test_sample_bilinear_identity_at_integer_coords():
    rng = np.random.default_rng(0)
    img = rng.random((9, 7))
    yy, xx = np.mgrid[0:9, 0:7].astype(np.float64)
    out = sample_bilinear(img, xx, yy)
    assert np.array_equal(out, img)


def test_sample_bilinear_interpolates_midpoints():
    img = np.array([[0.0, 1.0]])
    out = sample_bilinear(img, np.array([[0.5]]), np.array([[0.0]]))
    assert abs(out[0, 0] - 0.5) < 1e-12


def test_sample_bilinear_replicates_border():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = sample_bilinear(img, np.array([[-5.0, 10.0]]), np.array([[-5.0, 10.0]]))
    assert out[0, 0] == 1.0
    assert out[0, 1] == 4.0


def test_identical_frames_give_zero_flow():
    img = smooth_texture(64, 64, seed=4)
    from khcv import Frame

    f = estimate_flow(Frame(img), Frame(img))
    assert np.max(np.abs(f.u)) < 1e-2
    assert np.max(np.abs(f.v)) < 1e-2


def test_recovers_integer_translation():
    target, source = shifted_pair(96, 96, dx=3, dy=0, seed=9)
    f = estimate_flow(target, source)
    truth = constant_flow(96, 96, 3.0, 0.0)
    assert mean_epe(f, truth, central_fraction_mask(96, 96)) < 0.4


def test_recovers_mixed_translation():
    target, source = shifted_pair(96, 96, dx=-2, dy=1, seed=33)
    f = estimate_flow(target, source)
    truth = constant_flow(96, 96, -2.0, 1.0)
    assert mean_epe(f, truth, central_fraction_mask(96, 96)) < 0.4


def test_recovers_moving_blob():
    # smooth bump translating by (2, -1); check error where the bump has support
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def bump(cx, cy):
        return (0.1 + 0.8 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 12.0**2))).astype(
            np.float32
        )

    from khcv import Frame

    target = Frame(bump(30.0, 34.0))
    source = Frame(bump(32.0, 33.0))
    f = estimate_flow(target, source)
    truth = constant_flow(h, w, 2.0, -1.0)
    support = target.samples > 0.15
    assert mean_epe(f, truth, support) < 0.3


def test_rejects_too_small_images():
    from khcv import Frame

    tiny = Frame(np.zeros((16, 16), np.float32))
    with pytest.raises(ValueError):
        estimate_flow(tiny, tiny, FlowParams(pyramid_levels=3))


def test_compose_constant_steps():
    a = constant_flow(12, 12, 1.0, 0.0)
    b = constant_flow(12, 12, 2.0, 0.0)
    total = compose_flows([a, b])
    assert np.allclose(total.u, 3.0, atol=1e-6)
    assert np.allclose(total.v, 0.0, atol=1e-6)


def test_compose_zero_is_left_identity():
    rng = np.random.default_rng(5)
    z = constant_flow(10, 10, 0.0, 0.0)
    g = FlowField(
        rng.uniform(-1, 1, (10, 10)).astype(np.float32),
        rng.uniform(-1, 1, (10, 10)).astype(np.float32),
    )
    total = compose_flows([z, g])
    assert np.allclose(total.u, g.u, atol=1e-6)
    assert np.allclose(total.v, g.v, atol=1e-6)


def test_compose_constant_fields_associative():
    a = constant_flow(8, 8, 0.5, -0.25)
    b = constant_flow(8, 8, 1.25, 0.75)
    c = constant_flow(8, 8, -0.5, 0.5)
    left = compose_flows([compose_flows([a, b]), c])
    right = compose_flows([a, compose_flows([b, c])])
    assert np.allclose(left.u, right.u, atol=1e-6)
    assert np.allclose(left.v, right.v, atol=1e-6)


def test_compose_empty_rejected():
    with pytest.raises(ValueError):
        compose_flows([])


def test_chained_stepwise_flows_match_long_baseline():
    # four unit steps accumulate to (4, -2); estimate each hop then compose
    steps = [(1, 0), (1, -1), (1, 0), (1, -1)]
    h = w = 96
    pad = 12
    big = smooth_texture(h + 2 * pad, w + 2 * pad, seed=14)
    offsets = [(0, 0)]
    for dx, dy in steps:
        ox, oy = offsets[-1]
        offsets.append((ox + dx, oy + dy))
    from khcv import Frame

    frames = [Frame(big[pad - oy : pad - oy + h, pad - ox : pad - ox + w]) for ox, oy in offsets]
    hops = [estimate_flow(frames[i], frames[i + 1]) for i in range(len(steps))]
    total = compose_flows(hops)
    direct = constant_flow(h, w, 4.0, -2.0)
    assert mean_epe(total, direct, central_fraction_mask(h, w)) < 0.5


def test_flow_color_conventions():
    h = w = 16
    zero = constant_flow(h, w, 0.0, 0.0)
    rgb = flow_to_color(zero, max_magnitude=1.0)
    assert rgb.shape == (h, w, 3)
    assert np.allclose(rgb, 1.0)

    right = flow_to_color(constant_flow(h, w, 2.0, 0.0), max_magnitude=2.0)
    # pure +x at full saturation maps to pure red
    assert np.allclose(right[..., 0], 1.0, atol=1e-6)
    assert np.allclose(right[..., 1], 0.0, atol=1e-6)
    assert np.allclose(right[..., 2], 0.0, atol=1e-6)

    fwd = flow_to_color(constant_flow(h, w, 1.0, 1.0), max_magnitude=2.0)
    bwd = flow_to_color(constant_flow(h, w, -1.0, -1.0), max_magnitude=2.0)
    assert not np.allclose(fwd, bwd)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    assert fwd.min() >= 0.0 and fwd.max() <= 1.0


def test_flow_color_default_scale_guard():
    rgb = flow_to_color(constant_flow(8, 8, 0.0, 0.0))
    assert np.isfinite(rgb).all()
