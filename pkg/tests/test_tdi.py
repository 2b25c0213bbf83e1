import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1chain.calibration import CalibrationSet
from l1chain.errors import DomainError
from l1chain.evaluation import power_spectrum_ratio
from l1chain.geom import OrbitElements
from l1chain.sim import (EffectsConfig, PointTarget, generate_scene, lab_coefficients, plan_extent,
                         simulate_acquisition, truth_on_grid)
from l1chain.tdi import (SENTINEL, NeighborSample, TDIConfig, bin_exponential, bin_nearest,
                         bin_nearest_binned, gather_samples, grid_jacobian_pinv, kernel_weights,
                         l1b_grid, run_tdi)

from conftest import NARROW, small_run

sample_st = st.builds(NeighborSample, st.integers(0, 30), st.integers(0, 23), st.integers(0, 255),
                      st.floats(0.0, 4.0), st.floats(-1e4, 1e4))


def test_worked_example():
    # w = exp(-d / sigma^2): (10 + 20 e^-1) / (1 + e^-1)
    value, wsum = bin_exponential([NeighborSample(0, 0, 0, 0.0, 10.0),
                                   NeighborSample(1, 0, 0, 0.25, 20.0)], sigma=0.5)
    assert value == pytest.approx(12.689, abs=1e-3)
    assert wsum == pytest.approx(1 + math.exp(-1))


@settings(max_examples=200, deadline=None)
@given(st.lists(sample_st, min_size=1, max_size=25))
def test_large_sigma_tends_to_mean(samples):
    value, _ = bin_exponential(samples, sigma=1e6)
    assert value == pytest.approx(np.mean([s.value for s in samples]), abs=1e-6 * max(
        1.0, max(abs(s.value) for s in samples)))


@settings(max_examples=200, deadline=None)
@given(st.lists(sample_st, min_size=1, max_size=25), st.floats(0.05, 5.0))
def test_exponential_is_convex_combination(samples, sigma):
    value, _ = bin_exponential(samples, sigma)
    vals = [s.value for s in samples]
    assert min(vals) - 1e-9 * max(1, abs(min(vals))) <= value <= max(vals) + 1e-9 * max(1, abs(max(vals)))
    w = kernel_weights([s.distance for s in samples], sigma)
    assert w.sum() == pytest.approx(1.0)


def test_unnormalized_sum():
    samples = [NeighborSample(0, 0, 0, 0.0, 2.0), NeighborSample(0, 0, 1, 1.0, 3.0)]
    value, wsum = bin_exponential(samples, sigma=1.0, normalize=False)
    assert value == pytest.approx(2 + 3 * math.exp(-1))


def test_empty_samples():
    assert math.isnan(bin_exponential([])[0])
    assert math.isnan(bin_nearest([]))
    assert math.isnan(bin_nearest_binned([]))


def test_nearest_tie_rule():
    samples = [NeighborSample(3, 0, 0, 0.1, 30.0), NeighborSample(1, 2, 5, 0.1, 12.0),
               NeighborSample(1, 2, 4, 0.1, 11.0), NeighborSample(0, 0, 0, 0.5, 0.0)]
    assert bin_nearest(samples) == 11.0


def test_nearest_binned_averages_per_frame_minimum():
    samples = [NeighborSample(0, 0, 0, 0.3, 1.0), NeighborSample(0, 0, 1, 0.1, 2.0),
               NeighborSample(1, 0, 0, 0.2, 4.0), NeighborSample(1, 1, 0, 0.9, 100.0)]
    assert bin_nearest_binned(samples) == 3.0


def test_config_validation():
    assert TDIConfig(kernel="nn").kernel == "nearest"
    assert TDIConfig(kernel="exp", level="l1c").level == "L1C"
    for bad in (dict(sigma=0), dict(kernel="cubic"), dict(level="L2"), dict(w_x=-1),
                dict(distance="manhattan")):
        with pytest.raises(DomainError):
            TDIConfig(**bad)


def test_jacobian_pinv_inverts_regular_grid():
    li, pj = np.meshgrid(np.arange(5.0), np.arange(7.0), indexing="ij")
    xyz = np.stack([3 * li + pj, 2 * pj, li], -1)
    pinv = grid_jacobian_pinv(xyz)
    delta = np.array([3.0 * 0.4 + 0.3, 0.6, 0.4])  # (0.4 line, 0.3 pixel)
    np.testing.assert_allclose(pinv[2, 3] @ delta, [0.4, 0.3], atol=1e-12)


# -- full resampling -------------------------------------------------------------


def test_identity_on_smooth_scene(ideal_run, ideal_product):
    scene, stack, truth, cal = ideal_run
    p = ideal_product
    assert p.level == "L1B" and p.shape == (47 + 2 * 29, 256)
    for b in (7, 10):
        ok = p.valid(b)
        ok[:, :8] = ok[:, -8:] = False
        ref = truth_on_grid(scene, b, p.lat, p.lon)
        rel = (p.band(b)[ok] - ref[ok]) / ref[ok]
        assert np.sqrt(np.mean(rel**2)) < 0.01


def test_unfilled_pixels_carry_sentinel(ideal_product):
    p = ideal_product
    bad = p.quality != 0
    assert bad.any()
    assert np.all(p.radiance[bad] == SENTINEL)
    # the last lines have no frame behind them
    assert np.all(p.quality[:, -1] != 0)


def test_counts_envelope_lac(ideal_product):
    p = ideal_product
    n = p.shape[0]
    # lines seen by the whole detector height (start and end ramps excluded)
    inner = p.counts[0, 45:n - 45, 13:-13]
    assert inner.size
    assert inner.min() >= 18 and inner.max() <= 23


def test_product_matches_per_pixel_oracle(ideal_run, ideal_product):
    scene, stack, truth, cal = ideal_run
    cfg = TDIConfig()
    cam = cal.camera(stack, 7)
    model, xyz = l1b_grid(stack, cal.camera(stack, None))
    cube = cal.radiance(stack.frames[7])
    for i, j in ((30, 100), (55, 17), (70, 200)):
        samples = gather_samples(i, j, cube, stack.times, cam, stack.layout, xyz, cfg)
        value, _ = bin_exponential(samples, cfg.sigma)
        assert ideal_product.band(7)[i, j] == pytest.approx(value, rel=1e-9)
        assert ideal_product.counts[0, i, j] == len({s.frame for s in samples})


def test_kernels_agree_on_constant_scene():
    _, stack, _, cal = small_run(bands=(7,), n_frames=8, contrast=0.0)
    outs = [run_tdi(stack, cal, TDIConfig(kernel=k)) for k in ("exp", "nn", "nnbin")]
    ok = outs[0].valid(7)
    for p in outs[1:]:
        np.testing.assert_array_equal(p.valid(7), ok)
        np.testing.assert_allclose(p.band(7)[ok], outs[0].band(7)[ok], rtol=1e-12)
    np.testing.assert_array_equal(outs[1].n_eff[0][ok], 1.0)


def test_point_targets_sharper_than_binned_nearest():
    orbit, frames = OrbitElements(), 40
    extent = plan_extent(orbit, NARROW, "LAC", frames)
    lat0, lat1, lon0, lon1 = extent
    rng = np.random.default_rng(0)
    targets = [PointTarget(float(a), float(o), 2.0, 150.0)
               for a, o in zip(rng.uniform(lat0 + 0.15, lat1 - 0.15, 60),
                               rng.uniform(lon0 + 0.15, lon1 - 0.15, 60))]
    scene = generate_scene(1, extent, (10,), contrast=0.0, point_targets=targets)
    stack, _ = simulate_acquisition(scene, orbit, NARROW, "LAC",
                                    EffectsConfig(noise="snr", snr=200, quantize=False),
                                    n_frames=frames, bands=(10,))
    cal = CalibrationSet(sensor=NARROW, coeffs=lab_coefficients((10,), "LAC"))
    ratios = {}
    for kernel in ("exp", "nn", "nnbin"):
        p = run_tdi(stack, cal, TDIConfig(kernel=kernel))
        core = slice(47, p.shape[0] - 47)
        ratios[kernel] = power_spectrum_ratio(
            p.band(10)[core], truth_on_grid(scene, 10, p.lat, p.lon)[core]).ratios
    for band in ("mid", "high"):
        assert ratios["exp"][band] > ratios["nnbin"][band]
        # a single unaveraged sample keeps more point-target energy than any weighted mean
        assert ratios["nn"][band] > ratios["exp"][band]


def test_workers_do_not_change_result(ideal_run):
    _, stack, _, cal = ideal_run
    sub = stack.subset(bands=[10], frames=slice(0, 10))
    a = run_tdi(sub, cal, TDIConfig(workers=1, chunk_lines=8))
    b = run_tdi(sub, cal, TDIConfig(workers=4, chunk_lines=8))
    for name in ("radiance", "counts", "quality", "n_eff", "lat", "lon"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_l1c_product_on_lcc_grid(ideal_run):
    scene, stack, _, cal = ideal_run
    p = run_tdi(stack.subset(bands=[7]), cal, TDIConfig(level="L1C"))
    assert p.level == "L1C"
    grid = p.map_grid()
    assert grid.pixel_size == 366.0
    ok = p.valid(7)
    ok[:3] = ok[-3:] = False
    ok[:, :3] = ok[:, -3:] = False
    ref = truth_on_grid(scene, 7, p.lat, p.lon)
    rel = (p.band(7)[ok] - ref[ok]) / ref[ok]
    assert np.sqrt(np.mean(rel**2)) < 0.01


def test_gac_counts():
    _, stack, _, cal = small_run(bands=(7,), n_frames=16, mode="GAC")
    p = run_tdi(stack, cal)
    assert p.shape == (13 + 2 * 15, 128)
    inner = p.counts[0, 12:-12, 7:-7]
    assert inner.min() >= 5 and inner.max() <= 7


def test_no_frames_rejected(ideal_run):
    _, stack, _, cal = ideal_run
    with pytest.raises(DomainError):
        run_tdi(stack.subset(frames=slice(0, 0)), cal)
