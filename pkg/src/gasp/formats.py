"""Readers and writers for the on-disk data formats.

* binary PPM (P6, RGB) and PGM (P5, gray), 8-bit
* point-cloud CSV with header ``x0..x{d-1},y0..y{k-1}``
* voxel text: ``D H W`` on the first line, then D*H*W whitespace-separated 0/1 values
* lat-lon CSV grids (one latitude per row, no header)
* ``key=value`` metadata sidecars
"""

from __future__ import annotations

import csv
import os
import re
from typing import Dict, Tuple

import numpy as np

from .errors import DataFormatError
from .pointcloud import PointCloud

_WS = b" \t\r\n"


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != magic:
        raise DataFormatError(f"{path}: expected magic {magic.decode()}", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise DataFormatError(f"{path}: truncated header", offset=pos)
        c = raw[pos:pos + 1]
        if c in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif c == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        else:
            m = re.match(rb"\d+", raw[pos:])
            if not m:
                raise DataFormatError(f"{path}: bad header field", offset=pos)
            fields.append(int(m.group()))
            pos += len(m.group())
    if pos >= len(raw) or raw[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise DataFormatError(f"{path}: header must end with one whitespace byte", offset=pos)
    pos += 1
    width, height, maxval = fields
    if not 0 < maxval < 256:
        raise DataFormatError(f"{path}: only 8-bit files are supported (maxval {maxval})", offset=pos)
    need = width * height * channels
    body = raw[pos:pos + need]
    if len(body) != need:
        raise DataFormatError(f"{path}: expected {need} pixel bytes, found {len(body)}", offset=pos)
    arr = np.frombuffer(body, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape).copy()


def _write_netpbm(path, magic: bytes, pixels: np.ndarray, channels: int) -> None:
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    if channels == 1 and px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    expected_ndim = 3 if channels > 1 else 2
    if px.ndim != expected_ndim or (channels > 1 and px.shape[2] != channels):
        raise DataFormatError(f"pixel array of shape {px.shape} does not fit {magic.decode()}")
    height, width = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{width} {height}\n255\n".encode())
        fh.write(np.ascontiguousarray(px).tobytes())


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) uint8 array from a binary P6 file."""
    return _read_netpbm(path, b"P6", 3)


def write_ppm(path, pixels) -> None:
    _write_netpbm(path, b"P6", pixels, 3)


def read_pgm(path) -> np.ndarray:
    """(H, W) uint8 array from a binary P5 file."""
    return _read_netpbm(path, b"P5", 1)


def write_pgm(path, pixels) -> None:
    _write_netpbm(path, b"P5", pixels, 1)


def read_csv_pointcloud(path) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file", line=1)
    header = [h.strip() for h in rows[0]]
    xs = [h for h in header if h.startswith("x")]
    ys = [h for h in header if h.startswith("y")]
    d, k = len(xs), len(ys)
    if header != [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(k)] or d == 0 or k == 0:
        raise DataFormatError(f"{path}: header must be x0..x(d-1),y0..y(k-1), got {rows[0]}", line=1)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + k:
            raise DataFormatError(f"{path}: expected {d + k} columns, found {len(row)}", line=lineno)
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise DataFormatError(f"{path}: non-numeric value", line=lineno) from None
    if not data:
        raise DataFormatError(f"{path}: no data rows", line=2)
    arr = np.array(data)
    return PointCloud(arr[:, :d], arr[:, d:])


def write_csv_pointcloud(path, pc: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(pc.d)] + [f"y{i}" for i in range(pc.k)])
        for c, f in zip(pc.coords, pc.features):
            w.writerow([repr(float(v)) for v in c] + [repr(float(v)) for v in f])


def read_voxel_text(path) -> np.ndarray:
    """(D, H, W) uint8 occupancy array."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file", line=1)
    dims = lines[0].split()
    if len(dims) != 3 or not all(t.isdigit() and int(t) > 0 for t in dims):
        raise DataFormatError(f"{path}: first line must be 'D H W'", line=1)
    D, H, W = (int(t) for t in dims)
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        for tok in line.split():
            if tok not in ("0", "1"):
                raise DataFormatError(f"{path}: voxel values must be 0 or 1, got {tok!r}", line=lineno)
            values.append(int(tok))
    if len(values) != D * H * W:
        raise DataFormatError(f"{path}: expected {D * H * W} values, found {len(values)}", line=len(lines))
    return np.array(values, dtype=np.uint8).reshape(D, H, W)


def write_voxel_text(path, occupancy) -> None:
    occ = np.asarray(occupancy)
    if occ.ndim != 3:
        raise DataFormatError(f"voxel grids are 3-D, got shape {occ.shape}")
    if not np.all((occ == 0) | (occ == 1)):
        raise DataFormatError("voxel values must be 0 or 1")
    D, H, W = occ.shape
    with open(path, "w") as fh:
        fh.write(f"{D} {H} {W}\n")
        for row in occ.reshape(D * H, W).astype(int):
            fh.write(" ".join(str(v) for v in row) + "\n")


def read_latlon_csv(path) -> np.ndarray:
    """(n_lat, n_lon) grid of raw values, one latitude (south to north) per row."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric value", line=lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}: ragged row", line=lineno)
    if not rows:
        raise DataFormatError(f"{path}: empty grid", line=1)
    return np.array(rows)


def write_latlon_csv(path, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(grid, dtype=np.float64):
            w.writerow([repr(float(v)) for v in row])


def read_metadata(path) -> Dict[str, str]:
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}: expected key=value", line=lineno)
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


def write_metadata(path, meta: Dict[str, object]) -> None:
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


IMAGE_EXTS = (".ppm", ".pgm")
VOXEL_EXTS = (".vox", ".voxel", ".txt")


def load_pointcloud_file(path) -> Tuple[PointCloud, Dict[str, object]]:
    """Load any supported single-datapoint file as a normalized point cloud.

    Returns the cloud and a small description (kind, grid dims, channels)
    used to write samples back in the same format.
    """
    from .pointcloud import GridSpec, grid_to_pointcloud

    ext = os.path.splitext(str(path))[1].lower()
    if ext in IMAGE_EXTS:
        px = read_ppm(path) if ext == ".ppm" else read_pgm(path)
        channels = 3 if px.ndim == 3 else 1
        spec = GridSpec(px.shape[:2], "image", channels)
        return grid_to_pointcloud(px, spec), {"kind": "image", "dims": spec.dims, "channels": channels}
    if ext in VOXEL_EXTS:
        occ = read_voxel_text(path)
        spec = GridSpec(occ.shape, "voxel", 1)
        return grid_to_pointcloud(occ, spec), {"kind": "voxel", "dims": spec.dims, "channels": 1}
    if ext == ".csv":
        pc = read_csv_pointcloud(path)
        return pc, {"kind": "points", "dims": (), "channels": pc.k}
    raise DataFormatError(f"{path}: unsupported file type {ext!r}")
