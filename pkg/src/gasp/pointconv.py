"""PointConv discriminator: continuous convolutions over kNN neighborhoods.

A PointConv layer computes, at each query ``x``,

    f_out(x) = sum over the k nearest points x_i of  W(x_i - x) @ f_i

where ``W`` is a small MLP from coordinate offsets to (c_out, c_in) kernel
matrices. Layers alternate with farthest-point pooling by a factor 2^d.

Determinism: neighbor search and pooling break distance ties by
lexicographic coordinate order and then by row index, and ``discriminate``
sorts its input rows into that canonical order first. Shuffling the rows of
a point cloud therefore cannot change a single bit of the output.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .layers import MLP
from .pointcloud import PointCloud
from .rng import make_rng
from .tensor import BatchNormState, Tensor

_QUERY_CHUNK = 512
_PLAN_CACHE = 256


def _pow_dist(diff: np.ndarray, p: float) -> np.ndarray:
    """Monotone surrogate of the lp norm over the last axis (the p-th power, or max for p=inf)."""
    a = np.abs(diff)
    if math.isinf(p):
        return a.max(axis=-1)
    if p == 1:
        return a.sum(axis=-1)
    if p == 2:
        return (a * a).sum(axis=-1)
    return (a ** p).sum(axis=-1)


def lp_distance(a, b, p: float = 2) -> np.ndarray:
    d = _pow_dist(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), p)
    if math.isinf(p) or p == 1:
        return d
    return d ** (1.0 / p)


def _snap(dist: np.ndarray, points: np.ndarray, p: float) -> np.ndarray:
    """Round distances to a lattice of 2^-32 times the cloud's extent.

    Regular grids are full of exact distance ties; translating the grid adds
    rounding noise of a few ulps that would otherwise decide those ties.
    """
    extent = _pow_dist(points.max(axis=0) - points.min(axis=0), p)
    if extent == 0:
        return dist
    q = extent * 2.0 ** -32
    return np.round(dist / q)


def canonical_order(coords: np.ndarray, features: Optional[np.ndarray] = None) -> np.ndarray:
    """Row order sorted lexicographically by coordinates, then features, then index."""
    keys = [] if features is None else [features[:, j] for j in reversed(range(features.shape[1]))]
    keys += [coords[:, j] for j in reversed(range(coords.shape[1]))]
    return np.lexsort(keys)


def knn(points, queries, k: int, norm_p: float = 2) -> np.ndarray:
    """Indices (q, k) of each query's k nearest points, nearest first.

    Exact brute force. Equal distances are ordered by lexicographic comparison
    of the point coordinates, then by index.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if points.ndim != 2 or queries.ndim != 2 or points.shape[1] != queries.shape[1]:
        raise DimensionError(f"knn needs (n, d) points and (q, d) queries, got {points.shape} and {queries.shape}")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} neighbors requested from {n} points")
    order = canonical_order(points)
    P = points[order]
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for s in range(0, queries.shape[0], _QUERY_CHUNK):
        Q = queries[s:s + _QUERY_CHUNK]
        dist = _snap(_pow_dist(P[None, :, :] - Q[:, None, :], norm_p), P, norm_p)
        # stable sort keeps canonical order among equal distances
        out[s:s + _QUERY_CHUNK] = order[np.argsort(dist, axis=1, kind="stable")[:, :k]]
    return out


def farthest_point_sample(points, m: int, norm_p: float = 2) -> np.ndarray:
    """Indices of ``m`` points chosen by farthest-point sampling.

    Starts at the point nearest the centroid; every tie is broken
    lexicographically by coordinates, then by index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise DimensionError(f"cannot select {m} of {n} points")
    order = canonical_order(points)
    P = points[order]
    centroid = P.mean(axis=0)
    chosen = [int(np.argmin(_snap(_pow_dist(P - centroid, norm_p), P, norm_p)))]
    mind = _snap(_pow_dist(P - P[chosen[0]], norm_p), P, norm_p)
    for _ in range(m - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, _snap(_pow_dist(P - P[nxt], norm_p), P, norm_p))
    return order[np.array(chosen, dtype=np.int64)]


def _gather_rows(feats: Tensor, idx: np.ndarray) -> Tensor:
    """feats (B, n, c), idx (B, ...) -> (B, ..., c), differentiable in feats."""
    B, n, c = feats.shape
    flat = (idx + (np.arange(B) * n).reshape((B,) + (1,) * (idx.ndim - 1))).reshape(-1)
    out = T.index(T.reshape(feats, (B * n, c)), flat)
    return T.reshape(out, idx.shape + (c,))


def _batch_knn(points: np.ndarray, queries: np.ndarray, k: int, norm_p: float) -> np.ndarray:
    return np.stack([knn(p, q, k, norm_p) for p, q in zip(points, queries)])


def pooled_size(n: int, factor: int) -> int:
    return -(-n // factor)


def _pool_batch(points: np.ndarray, feats: Tensor, factor: int, k: int, norm_p: float,
                plan: Optional[Tuple[np.ndarray, np.ndarray]] = None):
    if plan is None:
        plan = _pool_plan(points, factor, k, norm_p)
    surv, nbr = plan
    new_points = np.take_along_axis(points, surv[:, :, None], axis=1)
    pooled = T.mean(_gather_rows(feats, nbr), axis=2)
    return new_points, pooled


def _pool_plan(points: np.ndarray, factor: int, k: int, norm_p: float):
    """Survivor indices (B, m) and their input-level neighborhoods (B, m, k)."""
    n = points.shape[1]
    m = pooled_size(n, factor)
    surv = np.stack([farthest_point_sample(p, m, norm_p) for p in points])
    new_points = np.take_along_axis(points, surv[:, :, None], axis=1)
    return surv, _batch_knn(points, new_points, min(k, n), norm_p)


def pool_downsample(points, feats, factor: int, k: int, norm_p: float = 2):
    """Keep ceil(n / factor) points by FPS; each survivor averages its k nearest input features.

    ``feats`` may be an array or a Tensor; the pooled features are a Tensor.
    """
    points = np.asarray(points, dtype=np.float64)
    feats = T._as_tensor(feats)
    if points.ndim != 2 or feats.ndim != 2 or points.shape[0] != feats.shape[0]:
        raise DimensionError("pool_downsample needs (n, d) points and (n, c) features")
    new_points, pooled = _pool_batch(points[None], T.reshape(feats, (1,) + feats.shape), factor, k, norm_p)
    return new_points[0], T.reshape(pooled, pooled.shape[1:])


# A kernel maps offsets (N, d) and a training flag to kernel matrices (N, c_out, c_in).
Kernel = Callable[[np.ndarray, bool], Tensor]


class PointConvLayer:
    """One PointConv layer with an MLP-parameterized kernel.

    The default kernel MLP has hidden widths ``weight_hidden`` with batch norm
    and leaky-ReLU. Pass ``kernel`` to substitute any other offset -> matrix map.
    """

    def __init__(self, coord_dim: int, c_in: int, c_out: int, k_neighbors: Optional[int] = None,
                 norm_p: float = 2, weight_hidden: Sequence[int] = (16, 16, 16, 16),
                 seed: int = 0, kernel: Optional[Kernel] = None):
        self.coord_dim = int(coord_dim)
        self.c_in = int(c_in)
        self.c_out = int(c_out)
        self.k_neighbors = int(k_neighbors if k_neighbors is not None else 3 ** coord_dim)
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        self.norm_p = float(norm_p)
        self.kernel = kernel
        self.weight_mlp = None
        if kernel is None:
            self.weight_mlp = MLP([self.coord_dim, *weight_hidden, self.c_out * self.c_in],
                                  make_rng(seed), batch_norm=True)

    @property
    def params(self) -> Dict[str, Tensor]:
        return {} if self.weight_mlp is None else self.weight_mlp.params

    def kernel_matrices(self, offsets: np.ndarray, training: bool) -> Tensor:
        if self.kernel is not None:
            return self.kernel(offsets, training)
        w = self.weight_mlp(T.constant(offsets), training)
        return T.reshape(w, (offsets.shape[0], self.c_out, self.c_in))

    def forward_batch(self, points: np.ndarray, feats: Tensor, queries: np.ndarray,
                      training: bool = False, nbr: Optional[np.ndarray] = None) -> Tensor:
        """points (B, n, d), feats (B, n, c_in), queries (B, q, d) -> (B, q, c_out).

        ``nbr`` optionally supplies precomputed neighbor indices (B, q, k).
        """
        B, n, d = points.shape
        q = queries.shape[1]
        if feats.shape != (B, n, self.c_in):
            raise DimensionError(f"features of shape {feats.shape}, expected {(B, n, self.c_in)}")
        if d != self.coord_dim:
            raise DimensionError(f"coordinates of dimension {d}, layer expects {self.coord_dim}")
        if nbr is None:
            nbr = _batch_knn(points, queries, min(self.k_neighbors, n), self.norm_p)
        k = nbr.shape[2]
        neighbor_pts = points[np.arange(B)[:, None, None], nbr]
        offsets = (neighbor_pts - queries[:, :, None, :]).reshape(B * q * k, d)
        W = T.reshape(self.kernel_matrices(offsets, training), (B * q, k, self.c_out, self.c_in))
        f = T.reshape(_gather_rows(feats, nbr), (B * q, k, 1, self.c_in))
        # contract channels, then add neighbor contributions in rank order
        out = T.sum(T.sum(T.mul(W, f), axis=3), axis=1)
        return T.reshape(out, (B, q, self.c_out))


def pointconv_forward(layer: PointConvLayer, points, in_feats, queries, training: bool = False) -> Tensor:
    """Single-cloud PointConv: points (n, d), in_feats (n, c_in), queries (q, d) -> (q, c_out)."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    in_feats = T._as_tensor(in_feats)
    if points.ndim != 2 or queries.ndim != 2 or in_feats.ndim != 2 or in_feats.shape[0] != points.shape[0]:
        raise DimensionError("pointconv_forward needs (n, d) points, (n, c) features and (q, d) queries")
    out = layer.forward_batch(points[None], T.reshape(in_feats, (1,) + in_feats.shape), queries[None], training)
    return T.reshape(out, out.shape[1:])


class DiscriminatorStack:
    """PointConv layers with pooling, batch norm and a sigmoid head.

    Channel widths must double from one layer to the next. By default each
    layer uses 3^d neighbors and pools by 2^d, where d is ``intrinsic_dim``
    (the coordinate dimension unless the data lives on a lower-dimensional
    manifold such as the sphere).
    """

    def __init__(self, coord_dim: int, feature_dim: int, channels: Sequence[int] = (64, 128, 256, 512),
                 k_neighbors: Optional[int] = None, pool_factor: Optional[int] = None,
                 norm_p: float = 2, weight_hidden: Sequence[int] = (16, 16, 16, 16),
                 intrinsic_dim: Optional[int] = None, seed: int = 0):
        channels = [int(c) for c in channels]
        if not channels:
            raise ValueError("at least one PointConv layer is required")
        for a, b in zip(channels[:-1], channels[1:]):
            if b != 2 * a:
                raise ValueError(f"channel widths must double at each stage, got {channels}")
        dim = int(intrinsic_dim or coord_dim)
        self.coord_dim = int(coord_dim)
        self.feature_dim = int(feature_dim)
        self.channels = channels
        self.k_neighbors = int(k_neighbors or 3 ** dim)
        self.pool_factor = int(pool_factor or 2 ** dim)
        self.norm_p = float(norm_p)
        self.weight_hidden = tuple(int(h) for h in weight_hidden)
        rng = make_rng(seed)
        seeds = rng.integers(0, 2**31, size=len(channels) + 1)
        self.layers: List[PointConvLayer] = []
        self.bn_states: List[BatchNormState] = []
        self.bn_params: Dict[str, Tensor] = {}
        c_in = self.feature_dim
        for i, c in enumerate(channels):
            self.layers.append(PointConvLayer(self.coord_dim, c_in, c, self.k_neighbors, norm_p,
                                              self.weight_hidden, seed=int(seeds[i])))
            self.bn_states.append(BatchNormState.create(c))
            self.bn_params[f"bn{i}.scale"] = Tensor(np.ones(c), requires_grad=True)
            self.bn_params[f"bn{i}.shift"] = Tensor(np.zeros(c), requires_grad=True)
            c_in = c
        self.head = MLP([channels[-1], 1], make_rng(int(seeds[-1])))
        self._plans: "OrderedDict[bytes, list]" = OrderedDict()

    def geometry(self, pts: np.ndarray) -> list:
        """Neighbor and pooling indices of every level for one canonically sorted cloud.

        Geometry depends only on coordinates, so plans are cached; a training
        step evaluates the same coordinates several times.
        """
        key = pts.shape[0].to_bytes(8, "little") + pts.tobytes()
        plan = self._plans.get(key)
        if plan is not None:
            self._plans.move_to_end(key)
            return plan
        plan = []
        level = pts[None]
        for _ in self.layers:
            n = level.shape[1]
            conv = _batch_knn(level, level, min(self.k_neighbors, n), self.norm_p)
            surv, pool = _pool_plan(level, self.pool_factor, self.k_neighbors, self.norm_p)
            plan.append((conv[0], surv[0], pool[0]))
            level = np.take_along_axis(level, surv[:, :, None], axis=1)
        self._plans[key] = plan
        if len(self._plans) > _PLAN_CACHE:
            self._plans.popitem(last=False)
        return plan

    @property
    def params(self) -> Dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update({f"layer{i}.{k}": v for k, v in layer.params.items()})
        out.update(self.bn_params)
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def logits(self, coords, feats, training: bool = False) -> Tensor:
        """Pre-sigmoid scores for a batch: coords (B, n, d), feats (B, n, k) -> (B,)."""
        coords = np.asarray(coords, dtype=np.float64)
        feats = T._as_tensor(feats)
        if coords.ndim != 3 or feats.ndim != 3 or coords.shape[:2] != feats.shape[:2]:
            raise DimensionError(f"expected (B, n, d) coords and (B, n, k) features, got {coords.shape}, {feats.shape}")
        if coords.shape[2] != self.coord_dim or feats.shape[2] != self.feature_dim:
            raise DimensionError(
                f"discriminator takes d={self.coord_dim}, k={self.feature_dim}; got d={coords.shape[2]}, k={feats.shape[2]}")
        B, n, _ = coords.shape
        order = np.stack([canonical_order(c, f) for c, f in zip(coords, feats.data)])
        pts = np.take_along_axis(coords, order[:, :, None], axis=1)
        h = _gather_rows(feats, order)
        plans = [self.geometry(p) for p in pts]
        for i, layer in enumerate(self.layers):
            conv = np.stack([pl[i][0] for pl in plans])
            pool = (np.stack([pl[i][1] for pl in plans]), np.stack([pl[i][2] for pl in plans]))
            h = layer.forward_batch(pts, h, pts, training, nbr=conv)
            c = h.shape[2]
            h = T.batch_norm(T.reshape(h, (B * pts.shape[1], c)), self.bn_states[i], training,
                             self.bn_params[f"bn{i}.scale"], self.bn_params[f"bn{i}.shift"])
            h = T.leaky_relu(T.reshape(h, (B, pts.shape[1], c)))
            pts, h = _pool_batch(pts, h, self.pool_factor, self.k_neighbors, self.norm_p, plan=pool)
        pooled = T.mean(h, axis=1)
        return T.reshape(self.head(pooled), (B,))

    def probabilities(self, coords, feats, training: bool = False) -> Tensor:
        return T.sigmoid(self.logits(coords, feats, training))

    def discriminate(self, pc: PointCloud, training: bool = False) -> float:
        with T.no_grad():
            p = self.probabilities(pc.coords[None], pc.features[None], training)
        return float(p.data[0])

    # -- serialization ----------------------------------------------------------
    def arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.weight_mlp.arrays(f"{prefix}.layer{i}"))
            out[f"{prefix}.bn{i}.running_mean"] = self.bn_states[i].running_mean
            out[f"{prefix}.bn{i}.running_var"] = self.bn_states[i].running_var
        for k, v in self.bn_params.items():
            out[f"{prefix}.{k}"] = v.data
        out.update(self.head.arrays(f"{prefix}.head"))
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str) -> None:
        for i, layer in enumerate(self.layers):
            layer.weight_mlp.load_arrays(arrays, f"{prefix}.layer{i}")
            self.bn_states[i].running_mean = np.array(arrays[f"{prefix}.bn{i}.running_mean"])
            self.bn_states[i].running_var = np.array(arrays[f"{prefix}.bn{i}.running_var"])
        for k, v in self.bn_params.items():
            v.data = np.array(arrays[f"{prefix}.{k}"])
        self.head.load_arrays(arrays, f"{prefix}.head")


def discriminate(stack: DiscriminatorStack, pc: PointCloud, training: bool = False) -> float:
    """Probability that ``pc`` is a set of input/output pairs of a real function."""
    return stack.discriminate(pc, training)
