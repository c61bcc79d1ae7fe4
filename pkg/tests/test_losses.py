import math

import numpy as np
import pytest

from oracles import edge_magnitude, first_argmax, gradient_check
from tumorseg.errors import ConfigError, ShapeError
from tumorseg.labels import RegionProbs, RegionSet
from tumorseg.losses import (
    DICE_SMOOTH,
    EPS,
    PRESETS,
    CompoundLossSpec,
    ce_loss,
    channel_average,
    compound_loss,
    dice_loss,
    edge_loss,
    edge_map,
    focal_loss,
    mse_loss,
)
from tumorseg.volume import BinaryMask, ScalarVolume

SHAPE = (8, 8, 8)


def random_pair(rng, shape=SHAPE):
    pred = rng.uniform(0.02, 0.98, size=shape)
    target = rng.random(shape) < 0.4
    return pred, target


def coords(rng, shape, n=100):
    return [tuple(int(rng.integers(s)) for s in shape) for _ in range(n)]


def clamp_skip(x, idx, h):
    v = x[idx]
    return v - h < EPS or v + h > 1 - EPS


def edge_tie_skip(x, idx, h):
    """Skip when the perturbation moves the location of the global max."""
    k = first_argmax(edge_magnitude(x))
    for sign in (1, -1):
        y = x.copy()
        y[idx] += sign * h
        if first_argmax(edge_magnitude(y)) != k:
            return True
    return False


# ------------------------------------------------------------------ values


def test_mse_values(rng):
    t = rng.random(SHAPE) < 0.5
    assert mse_loss(t.astype(float), t).value == 0.0
    assert mse_loss(np.ones(SHAPE), np.zeros(SHAPE, bool)).value == 1.0
    p, t = random_pair(rng)
    direct = 0.0
    for a, b in zip(p.ravel().tolist(), t.ravel().tolist()):
        direct += (a - b) ** 2
    assert mse_loss(p, t).value == pytest.approx(direct / p.size, abs=1e-7)


def test_ce_values(rng):
    t = rng.random(SHAPE) < 0.5
    assert ce_loss(t.astype(float), t).value <= 1e-6
    assert ce_loss(np.full(SHAPE, 0.5), t).value == pytest.approx(math.log(2), abs=1e-12)
    assert math.log(2) == pytest.approx(0.693147, abs=1e-6)


def test_focal_values(rng):
    p, t = random_pair(rng)
    assert focal_loss(p, t, gamma=0).value == pytest.approx(ce_loss(p, t).value, abs=1e-9)
    assert focal_loss(p, t, gamma=0).value == ce_loss(p, t).value
    assert np.array_equal(focal_loss(p, t, gamma=0).gradient, ce_loss(p, t).gradient)
    assert focal_loss(np.full(SHAPE, 0.5), t).value == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert 0.25 * math.log(2) == pytest.approx(0.173287, abs=1e-6)
    with pytest.raises(ConfigError):
        focal_loss(p, t, gamma=-1)


def test_dice_values():
    t = np.zeros((4, 4, 4), bool)
    t[:2] = True
    assert dice_loss(t.astype(float), t).value <= 1e-5
    disjoint = ~t
    assert dice_loss(disjoint.astype(float), t).value >= 1 - 1e-4
    p = np.full((4, 4, 4), 0.5)
    inter = sum(pi * ti for pi, ti in zip(p.ravel(), t.ravel()))
    direct = 1 - (2 * inter + DICE_SMOOTH) / (p.sum() + t.sum() + DICE_SMOOTH)
    assert dice_loss(p, t).value == pytest.approx(direct, abs=1e-7)
    assert dice_loss(p, t).value == pytest.approx(1 - (32 + 1e-5) / (64 + 1e-5), abs=1e-12)


def test_edge_map():
    assert not edge_map(np.full((5, 5, 5), 3.0)).any()
    ramp = np.broadcast_to(np.arange(6.0)[:, None, None], (6, 5, 5)).copy()
    edges = edge_map(ScalarVolume(ramp))
    assert isinstance(edges, ScalarVolume)
    # interior central difference is 1, border (replicated) is 1/2
    assert np.all(edges.data[1:-1] == 1.0)
    assert np.all(edges.data[[0, -1]] == 0.5)


def test_edge_map_max_is_one(rng):
    for _ in range(10):
        e = edge_map(rng.normal(size=(5, 6, 7)))
        assert e.max() == 1.0


def test_edge_loss_values(rng):
    t = rng.random(SHAPE) < 0.5
    assert edge_loss(t.astype(float), t).value == 0.0
    lvl = edge_loss(np.full(SHAPE, 0.3), np.zeros(SHAPE, bool))
    assert lvl.value == 0.0 and not lvl.gradient.any()


@pytest.mark.parametrize("fn", [mse_loss, ce_loss, dice_loss, focal_loss, edge_loss])
def test_shape_mismatch(fn):
    with pytest.raises(ShapeError):
        fn(np.zeros((2, 2, 2)), np.zeros((2, 2, 3), bool))


@pytest.mark.parametrize("fn", [mse_loss, ce_loss, dice_loss, focal_loss, edge_loss])
def test_nonnegative(fn, rng):
    for _ in range(5):
        p, t = random_pair(rng)
        assert fn(p, t).value >= 0


def test_accepts_volume_types(rng):
    p, t = random_pair(rng)
    a = dice_loss(ScalarVolume(p), BinaryMask(t))
    b = dice_loss(p, t)
    assert a.value == b.value


def test_clamped_gradient_is_zero():
    p = np.array([0.0, 1.0, 0.5]).reshape(3, 1, 1)
    t = np.array([True, False, True]).reshape(3, 1, 1)
    g = ce_loss(p, t).gradient
    assert g[0, 0, 0] == 0.0 and g[1, 0, 0] == 0.0 and g[2, 0, 0] != 0.0
    assert np.isfinite(ce_loss(p, t).value)


# --------------------------------------------------------------- gradients


@pytest.mark.parametrize(
    "fn,tol,skip",
    [
        (mse_loss, 1e-4, None),
        (ce_loss, 1e-4, clamp_skip),
        (dice_loss, 1e-4, None),
        (focal_loss, 1e-4, clamp_skip),
        (edge_loss, 1e-3, edge_tie_skip),
    ],
)
def test_gradient_matches_central_differences(fn, tol, skip, rng):
    p, t = random_pair(rng)
    grad = fn(p, t).gradient
    picks = coords(rng, SHAPE)
    worst, skipped = gradient_check(lambda x: fn(x, t).value, grad, p, picks, skip=skip)
    assert skipped < 0.05 * len(picks)
    assert worst <= tol


def test_edge_gradient_on_6cube(rng):
    p = rng.random((6, 6, 6))
    t = rng.random((6, 6, 6)) < 0.5
    grad = edge_loss(p, t).gradient
    every = [tuple(int(v) for v in i) for i in np.ndindex(6, 6, 6)]
    worst, skipped = gradient_check(lambda x: edge_loss(x, t).value, grad, p, every, skip=edge_tie_skip)
    assert skipped < 0.05 * len(every)
    assert worst <= 1e-3


def test_edge_gradient_includes_max_location(rng):
    p = rng.random((6, 6, 6))
    t = rng.random((6, 6, 6)) < 0.5
    grad = edge_loss(p, t).gradient
    k = np.unravel_index(first_argmax(edge_magnitude(p)), p.shape, order="F")
    worst, _ = gradient_check(lambda x: edge_loss(x, t).value, grad, p, [tuple(int(v) for v in k)])
    assert worst <= 1e-3


# ---------------------------------------------------------------- channels


def region_inputs(rng, shape=SHAPE):
    chans = rng.uniform(0.02, 0.98, size=(3,) + shape)
    wt = rng.random(shape) < 0.5
    tc = wt & (rng.random(shape) < 0.6)
    et = tc & (rng.random(shape) < 0.5)
    return RegionProbs.from_arrays(*chans), RegionSet.from_arrays(et, tc, wt)


@pytest.mark.parametrize("fn", [mse_loss, ce_loss, dice_loss, focal_loss, edge_loss])
def test_channel_average_is_exact_mean(fn, rng):
    probs, gt = region_inputs(rng)
    parts = [fn(p, t) for p, t in zip(probs, gt)]
    avg = channel_average(fn, probs, gt)
    assert avg.value == (parts[0].value + parts[1].value + parts[2].value) / 3.0
    for c in range(3):
        assert np.array_equal(avg.gradient[..., c], parts[c].gradient / 3.0)


def test_compound_single_term_equals_component(rng):
    probs, gt = region_inputs(rng)
    one = compound_loss(CompoundLossSpec([("dice", 1.0)]), probs, gt)
    ref = channel_average(dice_loss, probs, gt)
    assert one.value == ref.value
    assert np.array_equal(one.gradient, ref.gradient)


def test_compound_linear_in_weights(rng):
    probs, gt = region_inputs(rng)
    base = compound_loss(PRESETS["COMBO1"], probs, gt)
    double = compound_loss(PRESETS["COMBO1"].scaled(2.0), probs, gt)
    assert double.value == pytest.approx(2 * base.value, rel=1e-12)
    np.testing.assert_allclose(double.gradient, 2 * base.gradient, rtol=1e-12)


def test_combo2_vanishes_at_perfect_prediction(rng):
    _, gt = region_inputs(rng)
    probs = RegionProbs.from_regions(gt)
    assert compound_loss(PRESETS["COMBO2"], probs, gt).value <= 2e-5


def test_presets_carry_reported_weights():
    as_dict = {k: dict((kind.value, w) for kind, w in spec.terms) for k, spec in PRESETS.items()}
    assert as_dict["COMBO1"] == {"mse": 0.25, "ce": 0.0044, "edge": 0.00015}
    assert as_dict["COMBO2"] == {"dice": 1.0, "focal": 1.0, "edge": 0.05}
    assert as_dict["COMBO3"] == {"dice": 1.0, "focal": 1.0, "edge": 0.005}


def test_spec_validation():
    with pytest.raises(ConfigError):
        CompoundLossSpec([])
    with pytest.raises(ConfigError):
        CompoundLossSpec([("dice", 0.0)])
    with pytest.raises(ConfigError):
        CompoundLossSpec([("hinge", 1.0)])
    with pytest.raises(ConfigError):
        CompoundLossSpec([("dice", -1.0)])
    assert CompoundLossSpec.parse("combo3") is PRESETS["COMBO3"]
    parsed = CompoundLossSpec.parse("dice=1, edge=0.5")
    assert [(k.value, w) for k, w in parsed.terms] == [("dice", 1.0), ("edge", 0.5)]
    with pytest.raises(ConfigError):
        compound_loss(None, None, None)
