"""Point clouds: conversion from grids, sphere mapping and K-point subsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, DomainError
from .rng import make_rng, uniform

KINDS = ("image", "voxel", "latlon")


@dataclass(frozen=True)
class PointCloud:
    """One datapoint: ``coords`` (n, d) paired row-by-row with ``features`` (n, k)."""

    coords: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or f.ndim != 2:
            raise DimensionError("coords and features must be 2-D")
        if c.shape[0] != f.shape[0]:
            raise DimensionError(f"{c.shape[0]} coordinates but {f.shape[0]} feature rows")
        if c.shape[0] < 1:
            raise DimensionError("a point cloud needs at least one point")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "features", f)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @property
    def k(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "PointCloud":
        return PointCloud(self.coords[rows], self.features[rows])


@dataclass(frozen=True)
class GridSpec:
    dims: Tuple[int, ...]
    kind: str = "image"
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if self.kind not in KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if not self.dims or any(x < 1 for x in self.dims) or self.channels < 1:
            raise DimensionError(f"invalid grid {self}")
        if self.kind == "latlon" and len(self.dims) != 2:
            raise DimensionError("lat-lon grids are 2-D")


def axis_coords(n: int) -> np.ndarray:
    """Inclusive-endpoint coordinates ``-1 + 2i/(n-1)``; a single sample sits at 0."""
    if n == 1:
        return np.zeros(1)
    # 2*i is exact, so nested grids (n-1 dividing m-1) share coordinates bitwise
    return -1.0 + (2.0 * np.arange(n)) / (n - 1)


def grid_coords(dims: Sequence[int]) -> np.ndarray:
    axes = [axis_coords(n) for n in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def latlon_angles(n_lat: int, n_lon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Evenly spaced latitudes over [-pi/2, pi/2] (inclusive) and longitudes over [0, 2pi)."""
    lat = np.zeros(1) if n_lat == 1 else -np.pi / 2 + np.pi * np.arange(n_lat) / (n_lat - 1)
    lon = 2.0 * np.pi * np.arange(n_lon) / n_lon
    return lat, lon


def latlon_to_sphere(lat, lon) -> np.ndarray:
    """Map latitude/longitude (radians) to unit vectors (cos la cos lo, cos la sin lo, sin la)."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > np.pi / 2) or np.any(lon < 0) or np.any(lon >= 2 * np.pi):
        raise DomainError("latitude must lie in [-pi/2, pi/2] and longitude in [0, 2pi)")
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def latlon_coords(n_lat: int, n_lon: int) -> np.ndarray:
    lat, lon = latlon_angles(n_lat, n_lon)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    return latlon_to_sphere(la.ravel(), lo.ravel())


def normalize_features(values, spec: GridSpec, feature_min: float = None, feature_max: float = None) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if spec.kind == "image":
        return (2.0 * v - 255.0) / 255.0
    if spec.kind == "voxel":
        return 2.0 * v - 1.0
    if feature_min is None or feature_max is None or not feature_max > feature_min:
        raise ValueError("lat-lon grids need feature_min < feature_max")
    return 2.0 * (v - feature_min) / (feature_max - feature_min) - 1.0


def denormalize_features(features, spec: GridSpec, feature_min: float = None, feature_max: float = None) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if spec.kind == "image":
        return (255.0 * f + 255.0) / 2.0
    if spec.kind == "voxel":
        return (f + 1.0) / 2.0
    return (f + 1.0) / 2.0 * (feature_max - feature_min) + feature_min


def grid_to_pointcloud(values, spec: GridSpec, feature_min: float = None, feature_max: float = None) -> PointCloud:
    """Flatten a grid to a point cloud with coordinates in [-1, 1]^d and features in [-1, 1]^k.

    Rows come out in row-major order, but nothing downstream relies on it.
    """
    v = np.asarray(values, dtype=np.float64)
    expected = spec.dims + ((spec.channels,) if spec.channels > 1 else ())
    if v.shape == spec.dims + (1,) and spec.channels == 1:
        v = v[..., 0]
    if v.shape != expected:
        raise DimensionError(f"grid values have shape {v.shape}, spec expects {expected}")
    if spec.kind == "latlon":
        coords = latlon_coords(*spec.dims)
    else:
        coords = grid_coords(spec.dims)
    feats = normalize_features(v, spec, feature_min, feature_max).reshape(-1, spec.channels)
    return PointCloud(coords, feats)


def pointcloud_to_grid(pc: PointCloud, spec: GridSpec, feature_min: float = None, feature_max: float = None) -> np.ndarray:
    """Inverse of ``grid_to_pointcloud`` for clouds still in row-major grid order."""
    vals = denormalize_features(pc.features, spec, feature_min, feature_max)
    shape = spec.dims + ((spec.channels,) if spec.channels > 1 else ())
    return vals.reshape(shape)


def subsample(pc: PointCloud, K: int, seed=None, rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Draw K rows uniformly without replacement."""
    if not 1 <= K <= pc.n:
        raise DimensionError(f"cannot subsample {K} points from a cloud of {pc.n}")
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    rows = rng.permutation(pc.n)[:K]
    return pc.take(rows)


def sinusoid_dataset(n_examples: int, n_points: int = 64, seed: int = 0) -> List[PointCloud]:
    """Toy 1-D dataset: ``sin(2*pi*x + phase)`` on a regular grid, phase ~ U[0, 2pi)."""
    rng = make_rng(seed)
    x = axis_coords(n_points)[:, None]
    phases = uniform(rng, (n_examples,), 0.0, 2.0 * np.pi)
    return [PointCloud(x, np.sin(2.0 * np.pi * x + ph)) for ph in phases]
