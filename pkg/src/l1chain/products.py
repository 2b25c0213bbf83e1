"""Binary container for frame stacks, L1B/L1C products and calibration sets.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"L1CHAIN\\x00"
    8       2     uint16 format version
    10      2     uint16 reserved (0)
    12      4     uint32 number of sections
    16      8     uint64 body length in bytes
    24      32    SHA-256 of the body
    56      ...   body: sections back to back

    section:
        uint16 name length, name (UTF-8)
        uint8  dtype length, dtype string (numpy, e.g. "<f8"; "json" for metadata)
        uint8  ndim, then ndim x uint64 dimensions
        uint64 payload length, payload bytes (C order)

The first section is always ``meta`` (a UTF-8 JSON document holding the kind
of content and its scalar metadata).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .calibration import CalibrationSet, SmearParams
from .errors import ChecksumError, ContainerError, TruncatedError, VersionError
from .frames import FrameStack, RawFrame
from .geocal import AttitudeCorrection, BBRProfile, TiltDriftModel
from .geom.model import TiltSchedule
from .geom.orbit import AttitudeState, OrbitElements
from .geom.sensor import InteriorLayer, Mode, SensorGeometry
from .radiometry import BandCoeffs, CalibCoeffs, DarkReference, PRNUTable
from .sim import Scene
from .tdi import ProductGrid

log = logging.getLogger(__name__)

MAGIC = b"L1CHAIN\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHIQ32s")


@dataclass
class Container:
    kind: str
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (np.ndarray, tuple)):
        return np.asarray(o).tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serialisable")


def _section(name: str, dtype: str, shape, payload: bytes) -> bytes:
    nb = name.encode()
    db = dtype.encode()
    out = [struct.pack("<H", len(nb)), nb, struct.pack("<B", len(db)), db,
           struct.pack("<B", len(shape))]
    out += [struct.pack("<Q", int(n)) for n in shape]
    out += [struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


def encode_container(c: Container, version: int = FORMAT_VERSION) -> bytes:
    meta = dict(c.meta)
    meta["kind"] = c.kind
    text = json.dumps(meta, sort_keys=True, default=_json_default)
    parts = [_section("meta", "json", (), text.encode())]
    for name, arr in c.arrays.items():
        a = np.asarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        parts.append(_section(name, a.dtype.str, a.shape, np.ascontiguousarray(a).tobytes()))
    body = b"".join(parts)
    header = _HEADER.pack(MAGIC, version, 0, len(parts), len(body), hashlib.sha256(body).digest())
    return header + body


def decode_container(data: bytes) -> Container:
    if len(data) < _HEADER.size:
        raise TruncatedError(f"container header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, _, nsec, blen, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("not an l1chain container (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionError(f"container version {version} is not supported (reader is version {FORMAT_VERSION})")
    body = data[_HEADER.size:]
    if len(body) < blen:
        raise TruncatedError(f"container body truncated: {len(body)} of {blen} bytes")
    body = body[:blen]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("container checksum mismatch")
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise TruncatedError("section runs past the end of the container")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    meta, arrays = None, {}
    for _ in range(nsec):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode()
        (ld,) = struct.unpack("<B", take(1))
        dtype = take(ld).decode()
        (nd,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(nd))
        (lp,) = struct.unpack("<Q", take(8))
        payload = take(lp)
        if dtype == "json":
            meta = json.loads(payload.decode())
            continue
        dt = np.dtype(dtype)
        if lp != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise ContainerError(f"section {name!r}: payload size does not match its dimensions")
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    if meta is None:
        raise ContainerError("container has no metadata section")
    return Container(meta.pop("kind"), meta, arrays, version)


def write_container(path, c: Container) -> Path:
    path = Path(path)
    path.write_bytes(encode_container(c))
    return path


def read_container(path) -> Container:
    return decode_container(Path(path).read_bytes())


# -- shared metadata helpers -----------------------------------------------------


def _sensor_dict(s: SensorGeometry) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(s).items()}


def _sensor_from(d: dict) -> SensorGeometry:
    return SensorGeometry(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _layer_dict(layer: InteriorLayer | None):
    return None if layer is None else {"along": list(layer.along), "across": list(layer.across)}


def _layer_from(d) -> InteriorLayer | None:
    return None if d is None else InteriorLayer(tuple(d["along"]), tuple(d["across"]))


# -- products --------------------------------------------------------------------


def product_to_container(p: ProductGrid, geo_decimation: int = 1) -> Container:
    d = max(1, int(geo_decimation))
    meta = {"level": p.level, "mode": Mode.parse(p.mode).value, "bands": list(p.bands),
            "grid": p.grid, "metadata": p.metadata, "geo_decimation": d,
            "shape": list(p.shape)}
    arrays = {"radiance": p.radiance, "counts": p.counts, "quality": p.quality, "n_eff": p.n_eff,
              "lat": _decimate(p.lat, d), "lon": _decimate(p.lon, d)}
    return Container("product", meta, arrays)


def _knots(n: int, d: int) -> np.ndarray:
    # every d-th sample plus the last one, so expansion never extrapolates
    k = np.arange(0, n, d)
    return k if k[-1] == n - 1 else np.append(k, n - 1)


def _decimate(layer: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return layer
    return layer[np.ix_(_knots(layer.shape[0], d), _knots(layer.shape[1], d))]


def _expand(layer: np.ndarray, d: int, shape) -> np.ndarray:
    if d == 1:
        return layer
    r = np.interp(np.arange(shape[0]), _knots(shape[0], d), np.arange(layer.shape[0]))
    c = np.interp(np.arange(shape[1]), _knots(shape[1], d), np.arange(layer.shape[1]))
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return ndimage.map_coordinates(layer, [rr, cc], order=1, mode="nearest")


def product_from_container(c: Container) -> ProductGrid:
    if c.kind != "product":
        raise ContainerError(f"container holds a {c.kind}, not a product")
    m, a = c.meta, c.arrays
    d = int(m.get("geo_decimation", 1))
    shape = tuple(m["shape"])
    return ProductGrid(m["level"], Mode.parse(m["mode"]), list(m["bands"]), a["radiance"], a["counts"],
                       a["quality"], a["n_eff"], _expand(a["lat"], d, shape),
                       _expand(a["lon"], d, shape), m["grid"], m["metadata"])


def write_product(path, p: ProductGrid, geo_decimation: int = 1) -> Path:
    return write_container(path, product_to_container(p, geo_decimation))


def read_product(path) -> ProductGrid:
    return product_from_container(read_container(path))


def export_flat(path, p: ProductGrid) -> list[Path]:
    """Plain little-endian rasters (one ``.raw`` per layer) plus a JSON sidecar."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    written, layers = [], {}
    for name, arr in (("radiance", p.radiance), ("quality", p.quality), ("counts", p.counts),
                      ("lat", p.lat), ("lon", p.lon)):
        a = np.ascontiguousarray(arr, dtype=np.asarray(arr).dtype.newbyteorder("<"))
        f = base.with_name(f"{base.name}_{name}.raw")
        f.write_bytes(a.tobytes())
        layers[name] = {"file": f.name, "dtype": a.dtype.str, "shape": list(a.shape)}
        written.append(f)
    side = base.with_name(f"{base.name}.json")
    side.write_text(json.dumps({"level": p.level, "mode": Mode.parse(p.mode).value,
                                "bands": p.bands, "grid": p.grid, "metadata": p.metadata,
                                "layers": layers}, indent=1, sort_keys=True,
                               default=_json_default))
    written.append(side)
    return written


# -- frame stacks ----------------------------------------------------------------


def stack_to_container(s: FrameStack) -> Container:
    meta = {"mode": s.mode.value, "sensor": _sensor_dict(s.sensor), "orbit": asdict(s.orbit),
            "frame_period": s.frame_period, "attitude": [asdict(a) for a in s.attitude],
            "tilt": {"times": list(s.tilt.times), "angles_deg": list(s.tilt.angles_deg)},
            "metadata": s.metadata, "bands": s.bands}
    arrays = {"times": s.times}
    for b in s.bands:
        fs = s.frames[b]
        arrays[f"counts/{b}"] = np.stack([f.counts for f in fs])
        arrays[f"tilt/{b}"] = np.array([f.tilt_deg for f in fs], dtype=float)
        arrays[f"index/{b}"] = np.array([f.index for f in fs], dtype=np.int64)
        has = np.array([f.dark_row is not None for f in fs])
        arrays[f"has_dark/{b}"] = has
        if has.any():
            width = next(f.dark_row for f in fs if f.dark_row is not None).shape[0]
            dtype = next(f.dark_row for f in fs if f.dark_row is not None).dtype
            dark = np.zeros((len(fs), width), dtype=dtype)
            for k, f in enumerate(fs):
                if f.dark_row is not None:
                    dark[k] = f.dark_row
            arrays[f"dark/{b}"] = dark
    return Container("frames", meta, arrays)


def stack_from_container(c: Container) -> FrameStack:
    if c.kind != "frames":
        raise ContainerError(f"container holds a {c.kind}, not a frame stack")
    m, a = c.meta, c.arrays
    mode = Mode.parse(m["mode"])
    times = a["times"]
    frames = {}
    for b in m["bands"]:
        counts = a[f"counts/{b}"]
        has = a[f"has_dark/{b}"]
        dark = a.get(f"dark/{b}")
        frames[int(b)] = [RawFrame(int(b), mode, float(times[k]), counts[k],
                                   dark[k] if has[k] else None, float(a[f"tilt/{b}"][k]),
                                   int(a[f"index/{b}"][k]))
                          for k in range(counts.shape[0])]
    tilt = TiltSchedule(tuple(m["tilt"]["times"]), tuple(m["tilt"]["angles_deg"]))
    return FrameStack(mode, _sensor_from(m["sensor"]), OrbitElements(**m["orbit"]), m["frame_period"],
                      frames, [AttitudeState(**s) for s in m["attitude"]], tilt, m["metadata"])


def write_frames(path, s: FrameStack) -> Path:
    return write_container(path, stack_to_container(s))


def read_frames(path) -> FrameStack:
    return stack_from_container(read_container(path))


# -- calibration sets ------------------------------------------------------------


def calibration_to_container(cs: CalibrationSet) -> Container:
    arrays = {}
    coeffs = {}
    for b, bc in (sorted(cs.coeffs.bands.items()) if cs.coeffs else ()):
        for name in ("c", "d", "lut_x", "lut_y"):
            arrays[f"coeffs/{b}/{name}"] = np.asarray(getattr(bc, name), float)
        coeffs[str(b)] = True
    dark = {}
    for b, ref in sorted(cs.dark.items()):
        arrays[f"dark/{b}/profile"] = ref.profile
        arrays[f"dark/{b}/row_profile"] = ref.row_profile
        dark[str(b)] = {"ports": [list(p) for p in ref.ports], "row_offset": ref.row_offset}
    for b, t in sorted(cs.prnu.items()):
        arrays[f"prnu/{b}/gains"] = t.gains
        arrays[f"prnu/{b}/mask"] = t.mask
    bbr = {}
    for b, prof in sorted(cs.bbr.items()):
        if isinstance(prof, BBRProfile):
            bbr[str(b)] = {"type": "profile", **{k: list(v) if isinstance(v, tuple) else v
                                                 for k, v in asdict(prof).items()}}
        else:
            bbr[str(b)] = {"type": "layer", **_layer_dict(prof)}
    att = None
    if cs.attitude is not None:
        att = {"roll": cs.attitude.roll, "pitch": cs.attitude.pitch,
               "interior": _layer_dict(cs.attitude.interior)}
    meta = {"version": cs.version, "sensor": _sensor_dict(cs.sensor), "coeffs": coeffs,
            "dark": dark, "prnu": sorted(str(b) for b in cs.prnu),
            "smear": asdict(cs.smear) if cs.smear else None, "bbr": bbr, "attitude": att,
            "tilt_drift": asdict(cs.tilt_drift) if cs.tilt_drift else None,
            "provenance": cs.provenance}
    return Container("calibration", meta, arrays)


def calibration_from_container(c: Container) -> CalibrationSet:
    if c.kind != "calibration":
        raise ContainerError(f"container holds a {c.kind}, not a calibration set")
    m, a = c.meta, c.arrays
    coeffs = None
    if m["coeffs"]:
        coeffs = CalibCoeffs({int(b): BandCoeffs(*(a[f"coeffs/{b}/{n}"] for n in ("c", "d", "lut_x", "lut_y")))
                              for b in m["coeffs"]})
    dark = {int(b): DarkReference(int(b), a[f"dark/{b}/profile"], a[f"dark/{b}/row_profile"],
                                  [tuple(p) for p in v["ports"]], v["row_offset"])
            for b, v in m["dark"].items()}
    prnu = {int(b): PRNUTable(int(b), a[f"prnu/{b}/gains"], a[f"prnu/{b}/mask"]) for b in m["prnu"]}
    bbr = {}
    for b, v in m["bbr"].items():
        v = dict(v)
        kind = v.pop("type")
        if kind == "profile":
            bbr[int(b)] = BBRProfile(**{k: tuple(x) if isinstance(x, list) else x for k, x in v.items()})
        else:
            bbr[int(b)] = _layer_from(v)
    att = None
    if m["attitude"] is not None:
        att = AttitudeCorrection(m["attitude"]["roll"], m["attitude"]["pitch"],
                                 _layer_from(m["attitude"]["interior"]))
    return CalibrationSet(
        version=m["version"], sensor=_sensor_from(m["sensor"]), coeffs=coeffs, dark=dark, prnu=prnu,
        smear=SmearParams(**m["smear"]) if m["smear"] else None, bbr=bbr, attitude=att,
        tilt_drift=TiltDriftModel(**m["tilt_drift"]) if m["tilt_drift"] else None,
        provenance=m["provenance"])


def write_calibration(path, cs: CalibrationSet) -> Path:
    return write_container(path, calibration_to_container(cs))


def read_calibration(path) -> CalibrationSet:
    return calibration_from_container(read_container(path))


# -- scenes ----------------------------------------------------------------------


def scene_to_container(scene) -> Container:
    meta = {"lat_min": scene.lat_min, "lon_min": scene.lon_min, "dlat": scene.dlat,
            "dlon": scene.dlon, "seed": scene.seed, "slope": scene.slope, "cell_m": scene.cell_m,
            "bands": scene.bands}
    return Container("scene", meta, {f"radiance/{b}": scene.radiance[b] for b in scene.bands})


def scene_from_container(c: Container) -> Scene:
    if c.kind != "scene":
        raise ContainerError(f"container holds a {c.kind}, not a scene")
    m = c.meta
    return Scene(m["lat_min"], m["lon_min"], m["dlat"], m["dlon"],
                 {int(b): c.arrays[f"radiance/{b}"] for b in m["bands"]}, m["seed"], m["slope"],
                 m["cell_m"])


def write_scene(path, scene) -> Path:
    return write_container(path, scene_to_container(scene))


def read_scene(path):
    return scene_from_container(read_container(path))
