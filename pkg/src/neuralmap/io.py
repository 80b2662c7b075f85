"""Binary and text file formats.

All binary formats start with a 4-byte magic and a little-endian u32
version; numeric payloads are little-endian float32.

EMHF  heightfield: u32 length, u32 width, f32 resolution, length*width
      elevations (row-major, NaN = void), then optional tagged blocks:
      ``OVLY`` box bottom + top layers (NaN = no box), ``FLOR`` floor-mask
      bitset, ``META`` u32 length + JSON generator parameters.
EMLG  local grid: u32 rows, u32 cols, f32 resolution, f32 cx, f32 cy,
      f32 sentinel, elevations, validity bitset.
EMDS  dataset: u32 count, the EMLG header fields once, u32 + JSON metadata,
      then per sample the input and label payloads (elevations + bitset).
EMWT  weights: u32 + JSON architecture descriptor, then float32 parameters
      in the descriptor's order.
EMGM  global map: u32 extent, f32 resolution, f64 origin x, y, f32 standing
      height, f32 ground height, f32 initial variance, u64 frame counter,
      then the elevation and variance layers.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .fusion import GlobalMap
from .predictor.net import GatedNet
from .predictor.train import Dataset
from .sensing import LocalGrid, PointCloud
from .terrain import Heightfield

VERSION = 1


class FormatError(ValueError):
    """The file is truncated, has the wrong magic, or an unknown version."""


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        self.data, self.pos = data, 0
        if self.take(4) != magic:
            raise FormatError(f"bad magic, expected {magic.decode()}")
        version = self.unpack("<I")[0]
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(float).reshape(shape)

    def bits(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = np.frombuffer(self.take((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, count=n, bitorder="little").astype(bool).reshape(shape)

    def json(self) -> dict:
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def _f32(a) -> bytes:
    return np.asarray(a, dtype="<f4").tobytes()


def _bits(mask) -> bytes:
    return np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little").tobytes()


def _json(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", VERSION)


# heightfield

def heightfield_bytes(field: Heightfield) -> bytes:
    elev = np.where(field.void_mask, np.nan, field.elevations)
    out = [_header(b"EMHF"), struct.pack("<IIf", *field.elevations.shape, field.resolution), _f32(elev)]
    if field.has_overlay:
        out += [b"OVLY", _f32(field.box_bottom), _f32(field.box_top)]
    if field.floor_mask.any():
        out += [b"FLOR", _bits(field.floor_mask)]
    if field.params:
        out += [b"META", _json(field.params)]
    return b"".join(out)


def heightfield_from_bytes(data: bytes) -> Heightfield:
    r = _Reader(data, b"EMHF")
    length, width, res = r.unpack("<IIf")
    elev = r.floats((length, width))
    void = np.isnan(elev)
    bottom = top = floor = None
    params = {}
    while not r.done:
        tag = r.take(4)
        if tag == b"OVLY":
            bottom, top = r.floats((length, width)), r.floats((length, width))
        elif tag == b"FLOR":
            floor = r.bits((length, width))
        elif tag == b"META":
            params = r.json()
        else:
            raise FormatError(f"unknown block {tag!r}")
    return Heightfield(np.where(void, 0.0, elev), float(res), void, floor, bottom, top, params)


# local grid

def _grid_header(rows, cols, res, center, sentinel) -> bytes:
    return struct.pack("<IIffff", rows, cols, res, center[0], center[1], sentinel)


def local_grid_bytes(grid: LocalGrid) -> bytes:
    return b"".join([_header(b"EMLG"), _grid_header(*grid.shape, grid.resolution, grid.center_offset,
                                                     grid.sentinel), _f32(grid.elevations), _bits(grid.valid)])


def local_grid_from_bytes(data: bytes) -> LocalGrid:
    r = _Reader(data, b"EMLG")
    rows, cols, res, cx, cy, sentinel = r.unpack("<IIffff")
    elev = r.floats((rows, cols))
    valid = r.bits((rows, cols))
    return LocalGrid(elev, valid, float(res), (float(cx), float(cy)), float(sentinel))


# dataset

def dataset_bytes(ds: Dataset) -> bytes:
    grid = ds.meta.get("grid", {})
    center = grid.get("center_offset", (0.0, 0.0))
    sentinel = grid.get("sentinel", -10.0)
    rows, cols = ds.shape
    out = [_header(b"EMDS"), struct.pack("<I", len(ds)), _grid_header(rows, cols, ds.resolution, center, sentinel),
           _json(ds.meta)]
    for i in range(len(ds)):
        out += [_f32(ds.input_elev[i]), _bits(ds.input_valid[i]), _f32(ds.label_elev[i]), _bits(ds.label_valid[i])]
    return b"".join(out)


def dataset_from_bytes(data: bytes) -> Dataset:
    r = _Reader(data, b"EMDS")
    (n,) = r.unpack("<I")
    rows, cols, res, _, _, _ = r.unpack("<IIffff")
    meta = r.json()
    shape = (n, rows, cols)
    ie, iv, le, lv = np.empty(shape), np.empty(shape, bool), np.empty(shape), np.empty(shape, bool)
    for i in range(n):
        ie[i], iv[i] = r.floats((rows, cols)), r.bits((rows, cols))
        le[i], lv[i] = r.floats((rows, cols)), r.bits((rows, cols))
    if not r.done:
        raise FormatError("trailing bytes after the last record")
    return Dataset(ie, iv, le, lv, float(res), meta)


# weights

def weights_bytes(net: GatedNet) -> bytes:
    desc = net.descriptor()
    if net.meta:
        desc["meta"] = net.meta
    return b"".join([_header(b"EMWT"), _json(desc)] + [_f32(p) for p in net.params.values()])


def weights_from_bytes(data: bytes) -> GatedNet:
    r = _Reader(data, b"EMWT")
    desc = r.json()
    net = GatedNet.from_descriptor(desc)
    net.meta = desc.get("meta", {})
    for name, p in net.params.items():
        net.params[name] = r.floats(p.shape).astype(net.dtype)
    if not r.done:
        raise FormatError("trailing bytes after the parameters")
    return net


# global map

def global_map_bytes(gmap: GlobalMap) -> bytes:
    head = struct.pack("<IfddfffQ", gmap.extent, gmap.resolution, gmap.origin[0], gmap.origin[1],
                       gmap.standing_height, gmap.ground_height, gmap.init_variance, gmap.frame)
    return b"".join([_header(b"EMGM"), head, _f32(gmap.elevation), _f32(gmap.variance)])


def global_map_from_bytes(data: bytes) -> GlobalMap:
    r = _Reader(data, b"EMGM")
    n, res, ox, oy, standing, ground, init_var, frame = r.unpack("<IfddfffQ")
    elev = r.floats((n, n))
    var = r.floats((n, n))
    return GlobalMap(elev, var, (ox, oy), float(res), float(ground), float(standing), float(init_var), int(frame))


# generic helpers

_WRITERS = {Heightfield: heightfield_bytes, LocalGrid: local_grid_bytes, Dataset: dataset_bytes,
            GatedNet: weights_bytes, GlobalMap: global_map_bytes}
_READERS = {b"EMHF": heightfield_from_bytes, b"EMLG": local_grid_from_bytes, b"EMDS": dataset_from_bytes,
            b"EMWT": weights_from_bytes, b"EMGM": global_map_from_bytes}


def save(obj, path) -> Path:
    path = Path(path)
    path.write_bytes(_WRITERS[type(obj)](obj))
    return path


def load(path):
    """Read any of the binary formats, dispatching on the magic."""
    data = Path(path).read_bytes()
    reader = _READERS.get(data[:4])
    if reader is None:
        raise FormatError(f"{path}: unrecognized magic {data[:4]!r}")
    return reader(data)


def write_pgm(path, values, lo=None, hi=None) -> Path:
    """16-bit binary PGM; values map linearly from [lo, hi] to [0, 65535], NaN to 0."""
    a = np.asarray(values, dtype=float)
    finite = np.isfinite(a)
    if lo is None:
        lo = float(a[finite].min()) if finite.any() else 0.0
    if hi is None:
        hi = float(a[finite].max()) if finite.any() else 1.0
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    img = np.where(finite, np.clip((np.where(finite, a, lo) - lo) * scale, 0, 65535), 0)
    img = np.rint(img).astype(">u2")
    path = Path(path)
    path.write_bytes(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode() + img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise FormatError("expected a 16-bit P5 PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:2 * w * h], dtype=">u2").reshape(h, w)


def write_xyz(path, cloud: PointCloud) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    return path


def read_xyz(path, frame: str = "world") -> PointCloud:
    pts = np.loadtxt(path, ndmin=2) if Path(path).stat().st_size else np.zeros((0, 3))
    return PointCloud(pts.reshape(-1, 3), frame)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_reward_csv(path, terms) -> Path:
    """One row per term: name, raw value, weight, weighted value (weight * value * dt)."""
    weighted = terms.weighted()
    rows = [(k, repr(v), repr(terms.weights[k]), repr(weighted[k])) for k, v in terms.values.items()]
    return write_csv(path, ("term", "raw", "weight", "weighted"), rows)
