import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from l1chain.calibration import SmearParams
from l1chain.cli import main
from l1chain.config import RunConfig, parse_config
from l1chain.errors import (ChecksumError, ConfigError, ContainerError, TruncatedError,
                            VersionError)
from l1chain.geocal import AttitudeCorrection, BBRProfile, TiltDriftModel
from l1chain.geom import InteriorLayer
from l1chain.products import (Container, FORMAT_VERSION, MAGIC, decode_container,
                              encode_container, export_flat, product_from_container,
                              product_to_container, read_calibration, read_frames, read_product,
                              read_scene, write_calibration, write_frames, write_product,
                              write_scene)
from l1chain.radiometry import PRNUTable, build_dark_reference
from l1chain.sim import truth_on_grid

dtypes = st.sampled_from([np.uint8, np.uint16, np.int64, np.float32, np.float64, np.bool_])


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_container_round_trip_is_bit_exact(data):
    dt = data.draw(dtypes)
    arr = data.draw(hnp.arrays(dt, hnp.array_shapes(min_dims=0, max_dims=3, max_side=6)))
    c = Container("test", {"x": 1.5, "name": "a"}, {"a": arr, "b/c": np.arange(3)})
    blob = encode_container(c)
    back = decode_container(blob)
    assert back.kind == "test" and back.meta == {"x": 1.5, "name": "a"}
    assert back.arrays["a"].dtype == np.dtype(dt).newbyteorder("<")
    assert back.arrays["a"].tobytes() == np.asarray(arr).astype(np.dtype(dt).newbyteorder("<")).tobytes()
    assert encode_container(back) == blob


def test_header_layout():
    blob = encode_container(Container("k"))
    assert blob[:8] == MAGIC
    assert int.from_bytes(blob[8:10], "little") == FORMAT_VERSION
    assert int.from_bytes(blob[12:16], "little") == 1
    assert int.from_bytes(blob[16:24], "little") == len(blob) - 56


def test_container_errors():
    blob = encode_container(Container("k", {}, {"a": np.arange(10)}))
    with pytest.raises(TruncatedError):
        decode_container(blob[:30])
    with pytest.raises(TruncatedError):
        decode_container(blob[:-3])
    bad = bytearray(blob)
    bad[-1] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_container(bytes(bad))
    with pytest.raises(ContainerError):
        decode_container(b"NOTACHN\x00" + blob[8:])
    with pytest.raises(VersionError, match="version 2"):
        decode_container(encode_container(Container("k"), version=2))


def test_product_round_trip(tmp_path, ideal_product):
    path = write_product(tmp_path / "p.l1x", ideal_product)
    back = read_product(path)
    for name in ("radiance", "counts", "quality", "n_eff", "lat", "lon"):
        a, b = getattr(ideal_product, name), getattr(back, name)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    assert back.grid == ideal_product.grid and back.bands == ideal_product.bands
    # writing again gives identical bytes
    assert write_product(tmp_path / "q.l1x", back).read_bytes() == path.read_bytes()


def test_product_geo_decimation(ideal_product):
    back = product_from_container(product_to_container(ideal_product, geo_decimation=4))
    assert back.lat.shape == ideal_product.lat.shape
    np.testing.assert_allclose(back.lat[::4, ::4], ideal_product.lat[::4, ::4])
    assert np.nanmax(np.abs(back.lat - ideal_product.lat)) < 1e-5


def test_export_flat(tmp_path, ideal_product):
    files = export_flat(tmp_path / "out" / "prod", ideal_product)
    side = json.loads(files[-1].read_text())
    info = side["layers"]["radiance"]
    raw = np.fromfile(tmp_path / "out" / info["file"], dtype=info["dtype"]).reshape(info["shape"])
    np.testing.assert_array_equal(raw, ideal_product.radiance)


def test_frames_and_scene_round_trip(tmp_path, ideal_run):
    scene, stack, _, _ = ideal_run
    back = read_frames(write_frames(tmp_path / "f.l1x", stack))
    assert back.bands == stack.bands and back.sensor == stack.sensor
    for b in stack.bands:
        for f0, f1 in zip(stack.frames[b], back.frames[b]):
            assert f0.counts.tobytes() == f1.counts.tobytes() and f0.start_time == f1.start_time
            assert (f0.dark_row is None) == (f1.dark_row is None)
    s2 = read_scene(write_scene(tmp_path / "s.l1x", scene))
    assert s2.radiance[7].tobytes() == scene.radiance[7].tobytes() and s2.dlat == scene.dlat


def test_calibration_round_trip(tmp_path, ideal_run):
    _, stack, _, cal = ideal_run
    ref = build_dark_reference([np.full((2, 256), 100.0)], [np.full(240, 99.0)], 7)
    full = cal.with_(
        version="v3", dark={7: ref}, prnu={7: PRNUTable(7, np.linspace(0.98, 1.02, 256))},
        smear=SmearParams(), bbr={10: BBRProfile(10, (0.1, 0.2), (0.0,), (1e-5,), (2e-6, 1e-7)),
                                  8: InteriorLayer((1e-6,), (0.0,))},
        attitude=AttitudeCorrection(1e-3, -2e-3, InteriorLayer((0.0, 1e-5), (2e-6,))),
        tilt_drift=TiltDriftModel(1e-5, 2e-6, 1e-7, 5), provenance={"who": "test"})
    back = read_calibration(write_calibration(tmp_path / "c.l1x", full))
    assert back.version == "v3" and back.sensor == full.sensor
    assert back.bbr[10] == full.bbr[10] and back.bbr[8] == full.bbr[8]
    assert back.attitude == full.attitude and back.tilt_drift == full.tilt_drift
    np.testing.assert_array_equal(back.prnu[7].gains, full.prnu[7].gains)
    assert back.dark[7].ports == full.dark[7].ports
    for b in (7, 10):
        assert back.interior(b) == full.interior(b)
    assert calibration_bytes(tmp_path, back) == calibration_bytes(tmp_path, full)


def calibration_bytes(tmp_path, cs):
    return write_calibration(tmp_path / "tmp.l1x", cs).read_bytes()


def test_wrong_kind_rejected(tmp_path, ideal_run):
    _, stack, _, _ = ideal_run
    path = write_frames(tmp_path / "f.l1x", stack.subset(frames=slice(0, 2)))
    with pytest.raises(ContainerError):
        read_product(path)


# -- configuration ---------------------------------------------------------------


def test_config_parsing():
    cfg = parse_config("""
[run]
seed = 4
mode = gac
[sensor]
active_cols = 512
[effects]
noise = snr
dark = yes
[misalignment]
b10_along = 1.0, 0.5
[tdi]
kernel = nn
""")
    assert cfg.seed == 4 and cfg.mode == "GAC" and cfg.sensor.active_cols == 512
    assert cfg.effects.dark and cfg.effects.noise == "snr" and cfg.tdi.kernel == "nearest"
    assert cfg.effects.misalignment[10].along[1] == pytest.approx(0.5 * cfg.sensor.ifov_rad)
    assert parse_config("") == RunConfig()


@pytest.mark.parametrize("text", [
    "[sensor]\nactive_colz = 3\n", "[bogus]\nx = 1\n", "[run]\nversion = 9\n",
    "[run]\nmode = xac\n", "[effects]\nsnr = high\n", "[misalignment]\nband10 = 1\n",
    "[tdi]\nworkers = 4\n", "not an ini", "[scene]\ntilt_deg = 40\n",
    "[scene]\nframes = 0\n", "[sensor]\ntilt_deg = 40\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- command line ----------------------------------------------------------------


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    cfg = out / "run.ini"
    cfg.write_text("[run]\nseed = 3\n[sensor]\nactive_cols = 256\n[scene]\nframes = 30\n"
                   "smoothing_m = 240\nband_correlation = 1.0\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["process", "--frames", str(out / "frames.l1x"), "--calibration",
                 str(out / "calibration.l1x"), "--out", str(out / "p.l1x")]) == 0
    return out


def test_cli_simulate_process_identity(sim_dir):
    out = sim_dir
    p = read_product(out / "p.l1x")
    scene = read_scene(out / "scene.l1x")
    ok = p.valid(7)
    ok[:, :8] = ok[:, -8:] = False
    ref = truth_on_grid(scene, 7, p.lat, p.lon)
    rel = (p.band(7)[ok] - ref[ok]) / ref[ok]
    assert np.sqrt(np.mean(rel**2)) < 0.01


def test_cli_require_calibration_exit_code(sim_dir, capsys):
    code = main(["process", "--frames", str(sim_dir / "frames.l1x"), "--require-calibration",
                 "--out", str(sim_dir / "x.l1x")])
    assert code == 10
    assert "calibration" in capsys.readouterr().err


def test_cli_evaluate_snr_and_spectrum(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "flat.ini"
    cfg.write_text("[run]\nseed = 5\n[sensor]\nactive_cols = 256\n[scene]\nframes = 30\n"
                   "contrast = 0\n[effects]\nnoise = snr\nsnr = 200\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert main(["process", "--frames", str(tmp_path / "frames.l1x"), "--calibration",
                 str(tmp_path / "calibration.l1x"), "--out", str(tmp_path / "p.l1x")]) == 0
    capsys.readouterr()
    code = main(["evaluate", "--product", str(tmp_path / "p.l1x"), "--snr", "45,60,20,230",
                 "--spectrum", "--scene", str(tmp_path / "scene.l1x"), "--band", "7",
                 "--out", str(tmp_path / "report.json")])
    assert code == 0
    text = capsys.readouterr().out
    assert "snr" in text
    report = json.loads((tmp_path / "report.json").read_text())
    snr = report["snr"][0]
    assert snr["band"] == 7 and 200 * np.sqrt(10) < snr["snr"] < 200 * np.sqrt(40)
    assert set(report["spectrum"]["7"]) >= {"low", "mid", "high"}


def test_cli_evaluate_textured_region_exit_code(sim_dir):
    code = main(["evaluate", "--product", str(sim_dir / "p.l1x"), "--snr", "45,60,20,230"])
    assert code == 12


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sensor]\nunknown = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 17


def test_cli_calibration_commands(tmp_path, capsys):
    cfg = tmp_path / "mis.ini"
    cfg.write_text("[run]\nseed = 2\n[sensor]\nactive_cols = 256\n[scene]\nframes = 30\n"
                   "smoothing_m = 240\nband_correlation = 1.0\n[misalignment]\nb10_along = 1.0\n")
    out = tmp_path
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["process", "--frames", str(out / "frames.l1x"), "--calibration",
                 str(out / "calibration.l1x"), "--out", str(out / "p.l1x")]) == 0
    assert main(["calibrate-bbr", "--frames", str(out / "frames.l1x"), "--calibration",
                 str(out / "calibration.l1x"), "--product", str(out / "p.l1x"), "--passes", "2",
                 "--out", str(out / "bbr.l1x")]) == 0
    cal = read_calibration(out / "bbr.l1x")
    along = np.polynomial.polynomial.polyval(0.0, cal.interior(10).along) / cal.sensor.ifov_rad
    assert along == pytest.approx(1.0, abs=0.1)
    assert cal.provenance["bbr_passes"] == 2 and cal.version.endswith("+bbr")
    assert "pass" in capsys.readouterr().out

    (out / "tilt.csv").write_text("-20,-2e-4\n0,0\n20,2e-4\n")
    assert main(["calibrate-tilt", "--calibration", str(out / "bbr.l1x"), "--samples",
                 str(out / "tilt.csv"), "--out", str(out / "tilt.l1x")]) == 0
    tilt = read_calibration(out / "tilt.l1x")
    assert tilt.tilt_drift.slope == pytest.approx(1e-5) and tilt.bbr.keys() == cal.bbr.keys()
