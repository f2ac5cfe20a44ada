"""Numerical checks of Lipschitz bounds for Fourier features and set discriminators.

Bounds are computed from spectral norms; empirical constants are maxima of
difference quotients over random pairs. A report passes when the empirical
value does not exceed the bound by more than 1e-9.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from . import tensor as T
from .baselines import SetDiscriminator
from .layers import MLP
from .rff import FourierEncoding, encode_np, from_matrix
from .rng import make_rng, standard_normal, uniform

TOLERANCE = 1e-9
RFF_CONSTANT = math.sqrt(8.0) * math.pi
SIGMOID_SLOPE = 0.25


@dataclass
class BoundReport:
    name: str
    bound: float
    empirical: float
    samples: int

    @property
    def margin(self) -> float:
        return self.bound - self.empirical

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<10} bound={self.bound:.12g} empirical={self.empirical:.12g} "
                f"margin={self.margin:.6g} samples={self.samples} {status}")


def spectral_norm(A, iters: int = 20000, tol: float = 1e-15, seed: int = 0):
    """Largest singular value by power iteration on A^T A.

    Accepts a matrix or a stack (..., m, n) and returns a float or an array.
    Iteration stops once every estimate changes by less than ``tol`` relative.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] == 0 or A.shape[-2] == 0:
        raise ValueError(f"spectral_norm needs a nonempty matrix, got shape {A.shape}")
    single = A.ndim == 2
    if single:
        A = A[None]
    lead = A.shape[:-2]
    A = A.reshape((-1,) + A.shape[-2:])
    v = standard_normal(make_rng(seed), (A.shape[0], A.shape[2], 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    At = A.swapaxes(1, 2)
    sigma = np.zeros(A.shape[0])
    for _ in range(iters):
        w = At @ (A @ v)
        norm = np.linalg.norm(w, axis=1)[:, 0]
        zero = norm == 0
        new_sigma = np.sqrt(norm)
        v = np.where(zero[:, None, None], v, w / np.where(zero, 1.0, norm)[:, None, None])
        done = np.abs(new_sigma - sigma) <= tol * np.maximum(new_sigma, 1e-300)
        sigma = new_sigma
        if np.all(done | zero):
            break
    # the Rayleigh estimate ||A v|| is the accurate one once v has converged
    out = np.linalg.norm(A @ v, axis=1)[:, 0]
    return float(out[0]) if single else out.reshape(lead)


def rff_bound(enc: FourierEncoding) -> float:
    """Upper bound sqrt(8) * pi * ||B|| on the Lipschitz constant of the encoding."""
    B = np.asarray(enc.B if isinstance(enc, FourierEncoding) else enc, dtype=np.float64)
    return RFF_CONSTANT * spectral_norm(B)


def mlp_lipschitz_bound(mlp: MLP) -> float:
    """Product of layer spectral norms (leaky-ReLU is 1-Lipschitz), times 1/4 for a sigmoid head."""
    if mlp.batch_norm:
        raise ValueError("bounds for batch-normalized MLPs are not supported")
    bound = 1.0
    for W, _ in mlp.weights():
        bound *= spectral_norm(W.data)
    if mlp.final == "sigmoid":
        bound *= SIGMOID_SLOPE
    return bound


def empirical_lipschitz(f: Callable[[np.ndarray], np.ndarray], sampler: Callable, n_pairs: int,
                        seed: int = 0, step: float = 1e-4, chunk: int = 8192) -> float:
    """Largest difference quotient ||f(a) - f(b)|| / ||a - b|| over sampled pairs.

    ``f`` maps (N, D) inputs to (N, ...) outputs; ``sampler(rng, N)`` draws
    (N, D) points. Uses ``n_pairs`` independent pairs plus ``n_pairs`` pairs
    at distance ``step`` in random directions. Coincident pairs are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = make_rng(seed)
    best = 0.0
    for local in (False, True):
        done = 0
        while done < n_pairs:
            N = min(chunk, n_pairs - done)
            a = np.asarray(sampler(rng, N), dtype=np.float64)
            if local:
                u = standard_normal(rng, a.shape)
                u /= np.linalg.norm(u, axis=1, keepdims=True)
                b = a + step * u
            else:
                b = np.asarray(sampler(rng, N), dtype=np.float64)
            dx = np.linalg.norm((a - b).reshape(N, -1), axis=1)
            dy = np.linalg.norm((np.asarray(f(a)) - np.asarray(f(b))).reshape(N, -1), axis=1)
            ok = dx > 0
            if np.any(ok):
                best = max(best, float(np.max(dy[ok] / dx[ok])))
            done += N
    return best


def box_sampler(dim: int, low: float = -1.0, high: float = 1.0):
    return lambda rng, N: uniform(rng, (N, dim), low, high)


def set_disc_bound(sd: SetDiscriminator) -> float:
    """Lip(rho) * Lip(phi) * sqrt(Lip(gamma_x)^2 + Lip(gamma_y)^2), rho including its sigmoid."""
    lip_rho = mlp_lipschitz_bound(sd.rho) * SIGMOID_SLOPE
    lip_phi = mlp_lipschitz_bound(sd.phi)
    return lip_rho * lip_phi * math.hypot(rff_bound(sd.enc_x), rff_bound(sd.enc_y))


def set_disc_report(sd: SetDiscriminator, n_points: int = 4, n_pairs: int = 10**5, seed: int = 0,
                    name: str = "prop1") -> BoundReport:
    """Compare the composite bound with the empirical constant of D on stacked (x, y) inputs."""
    d, k = sd.coord_dim, sd.feature_dim

    def f(flat):
        s = flat.reshape(-1, n_points, d + k)
        with T.no_grad():
            return sd.probabilities(s[:, :, :d], s[:, :, d:]).data

    emp = empirical_lipschitz(f, box_sampler(n_points * (d + k)), n_pairs, seed)
    return BoundReport(name, set_disc_bound(sd), emp, 2 * n_pairs)


def rff_report(enc: FourierEncoding, n_pairs: int = 10**5, seed: int = 0, name: str = "prop2") -> BoundReport:
    emp = empirical_lipschitz(lambda x: encode_np(enc, x), box_sampler(enc.d), n_pairs, seed)
    return BoundReport(name, rff_bound(enc), emp, 2 * n_pairs)


def _worst(name: str, bounds: np.ndarray, values: np.ndarray) -> BoundReport:
    i = int(np.argmin(bounds - values))
    return BoundReport(name, float(bounds[i]), float(values[i]), int(bounds.size))


def verify_lemmas(trials: int, seed: int = 0, pairs: int = 8) -> List[BoundReport]:
    """Randomized checks of the four composition inequalities; reports the tightest trial of each.

    lemma1  ||[A; B]|| <= sqrt(||A||^2 + ||B||^2)
    lemma2  sum_i ||x_i|| <= sqrt(n) ||(x_1, ..., x_n)||
    lemma3  Lip of sum_i f(x_i) <= sqrt(n) Lip(f), f = tanh(W x) with Lip(f) <= ||W||
    lemma4  Lip of (g, h) <= sqrt(Lip(g)^2 + Lip(h)^2) for linear g, h
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = make_rng(seed)
    reports = []

    # lemma 1: one random shape (up to 6 x 6 blocks) per call
    m1, m2, n = (int(v) for v in rng.integers(1, 7, size=3))
    A = standard_normal(rng, (trials, m1, n))
    B = standard_normal(rng, (trials, m2, n))
    B[0] = 0.0  # the zero-padding equality case
    lhs = spectral_norm(np.concatenate([A, B], axis=1))
    rhs = np.sqrt(spectral_norm(A) ** 2 + spectral_norm(B) ** 2)
    reports.append(_worst("lemma1", rhs, lhs))

    # lemma 2
    npts, dim = 5, 3
    X = standard_normal(rng, (trials, npts, dim))
    X[0] = X[0, :1]  # all-equal tightness case
    lhs = np.linalg.norm(X, axis=2).sum(axis=1)
    rhs = math.sqrt(npts) * np.linalg.norm(X.reshape(trials, -1), axis=1)
    reports.append(_worst("lemma2", rhs, lhs))

    # lemma 3: g(x_1..x_n) = sum_i tanh(W x_i)
    din, dout = 3, 2
    W = standard_normal(rng, (trials, dout, din))
    lip_f = spectral_norm(W)
    a = standard_normal(rng, (trials, pairs, npts, din))
    u = standard_normal(rng, (trials, pairs, npts, din))
    u /= np.linalg.norm(u.reshape(trials, pairs, -1), axis=2)[:, :, None, None]
    b = np.concatenate([standard_normal(rng, (trials, pairs, npts, din)), a + 1e-4 * u], axis=1)
    a = np.concatenate([a, a], axis=1)

    def g(x):
        return np.tanh(np.einsum("tij,tpnj->tpni", W, x)).sum(axis=2)

    emp = (np.linalg.norm(g(a) - g(b), axis=2)
           / np.linalg.norm((a - b).reshape(trials, 2 * pairs, -1), axis=2)).max(axis=1)
    reports.append(_worst("lemma3", math.sqrt(npts) * lip_f, emp))

    # lemma 4: (g, h) with g = G x, h = H x; the trial-0 instance is g = 2x, h = 3x
    G = standard_normal(rng, (trials, 2, din))
    H = standard_normal(rng, (trials, 3, din))
    G[0], H[0] = 0.0, 0.0
    G[0, :1, :1], H[0, :1, :1] = 2.0, 3.0
    GH = np.concatenate([G, H], axis=1)
    x = standard_normal(rng, (trials, pairs, din))
    y = standard_normal(rng, (trials, pairs, din))
    diff = x - y
    emp = (np.linalg.norm(np.einsum("tij,tpj->tpi", GH, diff), axis=2)
           / np.linalg.norm(diff, axis=2)).max(axis=1)
    # the top right singular vector attains the constant of a linear map exactly
    top = _top_right_vector(GH)
    emp = np.maximum(emp, np.linalg.norm(np.einsum("tij,tj->ti", GH, top), axis=1))
    bound = np.sqrt(spectral_norm(G) ** 2 + spectral_norm(H) ** 2)
    reports.append(_worst("lemma4", bound, emp))
    return reports


def _top_right_vector(A: np.ndarray, iters: int = 500) -> np.ndarray:
    v = np.ones((A.shape[0], A.shape[2], 1)) / math.sqrt(A.shape[2])
    At = A.swapaxes(1, 2)
    for _ in range(iters):
        w = At @ (A @ v)
        v = w / np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-300)
    return v[:, :, 0]


def verify_all(trials: int = 200, seed: int = 0, pairs: int = 10**4, n_encodings: int = 5,
               n_discriminators: int = 3) -> List[BoundReport]:
    """Lemma checks, the Fourier-feature bound on random B, and the set-discriminator bound."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    reports = verify_lemmas(trials, seed)
    rng = make_rng(seed + 1)
    for i in range(n_encodings):
        m, d = (int(v) for v in rng.integers(1, 9, size=2))
        enc = from_matrix(standard_normal(rng, (m, d)) * uniform(rng, (), 0.5, 3.0))
        reports.append(rff_report(enc, pairs, seed + i, name=f"prop2.{i}"))
    for i in range(n_discriminators):
        sd = SetDiscriminator(1, 1, m_x=4, m_y=4, phi_hidden=(16,), p=8, rho_hidden=(8,),
                              seed=int(rng.integers(0, 2**31)))
        reports.append(set_disc_report(sd, n_points=3, n_pairs=pairs, seed=seed + i, name=f"prop1.{i}"))
    return reports


def format_report(reports: Sequence[BoundReport]) -> str:
    return "\n".join(r.line() for r in reports) + "\n"


def report_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "bound", "empirical", "margin", "samples", "pass"])
    for r in reports:
        w.writerow([r.name, repr(r.bound), repr(r.empirical), repr(r.margin), r.samples, int(r.passed)])
    return buf.getvalue()
