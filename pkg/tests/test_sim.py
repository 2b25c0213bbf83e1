import math

import numpy as np
import pytest

from l1chain.errors import DomainError
from l1chain.geom import InteriorLayer, OrbitElements, ecef_to_geodetic
from l1chain.sim import (EffectsConfig, PointTarget, TruthBundle, UniformPatch, generate_scene,
                         inject_band_misalignment, inject_geolocation_bias, inject_tilt_drift,
                         lab_coefficients, misalignment_from_pixels, plan_extent,
                         power_law_field, simulate_acquisition, simulate_night_session,
                         truth_camera)

from conftest import NARROW, small_run

EXTENT = (0.0, 0.2, 10.0, 10.2)


def test_power_law_slope():
    rng = np.random.default_rng(0)
    field = power_law_field(rng, (256, 256), -3.0)
    assert field.std() == pytest.approx(1.0)
    p = np.abs(np.fft.fft2(field)) ** 2
    f = np.hypot(*np.meshgrid(np.fft.fftfreq(256), np.fft.fftfreq(256), indexing="ij"))
    sel = (f > 0.02) & (f < 0.3)
    slope = np.polyfit(np.log(f[sel]), np.log(p[sel]), 1)[0]
    assert slope == pytest.approx(-3.0, abs=0.15)


def test_scene_is_seeded_and_band_correlated():
    # white texture keeps the sample correlation close to the population value
    a = generate_scene(3, EXTENT, (7, 10), band_correlation=0.9, slope=0.0)
    b = generate_scene(3, EXTENT, (7, 10), band_correlation=0.9, slope=0.0)
    np.testing.assert_array_equal(a.radiance[7], b.radiance[7])
    corr = np.corrcoef(a.radiance[7].ravel(), a.radiance[10].ravel())[0, 1]
    assert corr == pytest.approx(0.9, abs=0.02)
    same = generate_scene(3, EXTENT, (7, 10), band_correlation=1.0)
    assert np.corrcoef(same.radiance[7].ravel(), same.radiance[10].ravel())[0, 1] > 0.99999


def test_scene_contrast_patches_and_targets():
    patch = UniformPatch(0.05, 0.1, 10.05, 10.1)
    s = generate_scene(1, EXTENT, (7,), contrast=0.05, uniform_patches=[patch],
                       point_targets=[PointTarget(0.15, 10.15, amplitude=2.0)])
    img = s.radiance[7].astype(float)
    mean = img.mean()
    assert img.std() / mean == pytest.approx(0.05, rel=0.2)
    inside = s.sample(7, np.array([0.07]), np.array([10.07]))
    assert inside[0] == pytest.approx(s.sample(7, np.array([0.08]), np.array([10.08]))[0])
    assert s.sample(7, np.array([0.15]), np.array([10.15]))[0] > 2 * mean
    with pytest.raises(DomainError):
        generate_scene(1, (0.0, 0.0, 1.0, 2.0), (7,))


def test_plan_extent_covers_footprint():
    lat0, lat1, lon0, lon1 = plan_extent(OrbitElements(), NARROW, "LAC", 10)
    assert lat1 - lat0 > 0.1 and lon1 - lon0 > 0.1
    assert lat0 < 0 < lat1 and lon0 < 0 < lon1


def test_lab_coefficients_put_mean_mid_range():
    c = lab_coefficients((7,), "LAC")
    assert c.for_band(7).inverse(c.for_band(7).forward(2047.5)) == pytest.approx(2047.5)


def test_ideal_acquisition_shapes_and_truth(ideal_run):
    scene, stack, truth, cal = ideal_run
    assert stack.bands == [7, 10]
    assert len(stack) == 30
    f = stack.frames[7][0]
    assert f.counts.shape == (24, 256) and f.counts.dtype == np.uint16
    assert [fr.dark_row is not None for fr in stack.frames[7][:5]] == [True, False, False, False, True]
    assert len(truth.frames) == 30
    back = TruthBundle.from_json(truth.to_json())
    assert back.effects_config() == EffectsConfig()


def test_counts_follow_lab_coefficients(ideal_run):
    scene, stack, truth, cal = ideal_run
    frame = stack.frames[7][10]
    cam = truth_camera(stack, EffectsConfig(), 7)
    layout = stack.layout
    prow, pcol = layout.to_physical(np.arange(24)[:, None], np.arange(256)[None, :])
    # the bin-centre sample approximates the bin mean on a smooth scene
    xyz = cam.pixel_to_ground_ecef(frame.start_time, prow, pcol)
    lat, lon, _ = ecef_to_geodetic(xyz)
    expected = cal.coeffs.for_band(7).inverse(scene.sample(7, lat, lon))
    rel = np.abs(frame.counts - expected) / expected
    assert np.median(rel) < 0.005


def test_noise_model_snr():
    fx = EffectsConfig(noise="snr", snr=100.0, quantize=False)
    scene, stack, _, _ = small_run(fx, bands=(7,), n_frames=3, contrast=0.0)
    clean = small_run(EffectsConfig(quantize=False), bands=(7,), n_frames=3, contrast=0.0)[1]
    diff = stack.frames[7][1].counts - clean.frames[7][1].counts
    assert clean.frames[7][1].counts.mean() / diff.std() == pytest.approx(100.0, rel=0.1)


def test_effects_injection_and_bounds():
    fx = inject_geolocation_bias(EffectsConfig(), 1e-3, -2e-3)
    assert (fx.roll_bias, fx.pitch_bias) == (1e-3, -2e-3)
    with pytest.raises(DomainError):
        inject_geolocation_bias(EffectsConfig(), math.radians(3), 0)
    fx = inject_tilt_drift(fx, 1e-5)
    assert fx.tilt_drift_slope == 1e-5
    layer = misalignment_from_pixels(NARROW, (2.0,), (0.0, 1.0))
    assert layer.along[0] == pytest.approx(2 * NARROW.ifov_rad)
    fx = inject_band_misalignment(fx, 10, layer)
    assert fx.misalignment[10] is layer
    with pytest.raises(DomainError):
        inject_band_misalignment(fx, 10, InteriorLayer(along=(0.1,)))
    with pytest.raises(DomainError):
        EffectsConfig(noise="pink")


def test_frames_outside_scene_are_dropped(caplog):
    scene = generate_scene(0, plan_extent(OrbitElements(), NARROW, "LAC", 5, margin_km=1), (7,))
    stack, truth = simulate_acquisition(scene, OrbitElements(), NARROW, "LAC", n_frames=40)
    assert truth.dropped_frames and len(stack) == 40 - len(truth.dropped_frames)
    assert "dropped" in caplog.text


def test_night_session_reference_tracks_dark_level():
    fx = EffectsConfig(dark=True, dark_level=80.0, noise="snr", port_biases=(5.0, 0, 0, 0))
    ref = simulate_night_session(NARROW, "LAC", fx, (7,), n_frames=8)[7]
    truth = small_run(fx, bands=(7,), n_frames=2)[2]
    # night frames share the instrument's dark profile but carry no port biases
    day = np.asarray(truth.dark_image[7])
    day[:64] -= 5.0
    assert np.max(np.abs(ref.profile - day)) <= 0.5 + 1e-9
    assert ref.profile.mean() == pytest.approx(80.0, abs=1.0)


def test_worker_count_does_not_change_frames():
    a = small_run(EffectsConfig(noise="snr"), bands=(7,), n_frames=6)[1]
    scene = small_run(bands=(7,), n_frames=6)[0]
    b, _ = simulate_acquisition(scene, OrbitElements(), NARROW, "LAC", EffectsConfig(noise="snr"), n_frames=6,
                                bands=(7,), seed=1, workers=3)
    for fa, fb in zip(a.frames[7], b.frames[7]):
        np.testing.assert_array_equal(fa.counts, fb.counts)
