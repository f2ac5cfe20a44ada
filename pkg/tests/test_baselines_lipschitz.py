import math

import numpy as np
import pytest

from gasp import lipschitz as L
from gasp import tensor as T
from gasp.baselines import (SetDiscriminator, autodecoder_reconstruct, autodecoder_sample, autodecoder_train,
                            latent_prior_check, set_discriminate)
from gasp.errors import DimensionError
from gasp.pointcloud import PointCloud, grid_coords
from gasp.rff import encode, from_matrix
from oracles import jacobi_singular_values


def small_sd(seed=0):
    return SetDiscriminator(2, 1, m_x=4, m_y=3, phi_hidden=(8,), p=5, rho_hidden=(4,), seed=seed)


# -- set discriminator ----------------------------------------------------------------

def test_set_discriminator_permutation_invariant():
    sd = small_sd()
    rng = np.random.default_rng(0)
    for _ in range(10):
        pc = PointCloud(rng.uniform(-1, 1, (15, 2)), rng.uniform(-1, 1, (15, 1)))
        assert set_discriminate(sd, pc) == set_discriminate(sd, pc.take(rng.permutation(15)))


def test_set_discriminator_zero_phi_is_constant():
    sd = small_sd(1)
    for p in sd.phi.params.values():
        p.data = np.zeros_like(p.data)
    rng = np.random.default_rng(1)
    vals = {set_discriminate(sd, PointCloud(rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 1, (n, 1))))
            for n in (1, 4, 9)}
    assert len(vals) == 1
    assert vals.pop() == pytest.approx(float(T.sigmoid(sd.rho(np.zeros((1, 5)))).data[0, 0]))


def test_set_discriminator_single_point_composition():
    sd = small_sd(2)
    x, y = np.array([[0.3, -0.2]]), np.array([[0.5]])
    h = sd.phi(T.concat([encode(sd.enc_x, x), encode(sd.enc_y, y)], axis=1))
    expected = T.sigmoid(sd.rho(h)).data[0, 0]
    assert set_discriminate(sd, PointCloud(x, y)) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(DimensionError):
        set_discriminate(sd, PointCloud(np.zeros((2, 3)), np.zeros((2, 1))))


# -- auto-decoder --------------------------------------------------------------------

def two_examples():
    x = grid_coords((8,))
    return [PointCloud(x, 0.5 * np.sin(3 * x)), PointCloud(x, 0.5 * np.cos(2 * x))]


def test_autodecoder_reconstructs_toy_set():
    res = autodecoder_train(two_examples(), steps=400, latent_dim=4, hidden_dims=(32, 32), fourier_m=8, seed=0)
    assert res.mse < 1e-3
    ad = res.model
    x = grid_coords((8,))
    np.testing.assert_array_equal(autodecoder_reconstruct(ad, 1, x), autodecoder_sample(ad, ad.latents.data[1], x))
    with pytest.raises(IndexError):
        autodecoder_reconstruct(ad, 2, x)


def test_autodecoder_prior_weight_shrinks_latents():
    norms = []
    for w in (1e-4, 1e-1, 10.0):
        res = autodecoder_train(two_examples(), steps=200, latent_dim=4, prior_weight=w,
                                hidden_dims=(16,), fourier_m=4, seed=1)
        norms.append(float(np.linalg.norm(res.model.latents.data, axis=1).mean()))
    assert norms[0] > norms[1] > norms[2]


def test_latent_prior_check_fresh_draws_pass():
    rng = np.random.default_rng(0)
    chk = latent_prior_check(rng.standard_normal((16, 16)), seed=0)
    assert chk.trained_consistent and chk.fresh_consistent
    assert not latent_prior_check(np.zeros((16, 16))).trained_consistent


# -- spectral norm and bounds -------------------------------------------------------

def test_spectral_norm_examples():
    assert L.spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)
    assert L.spectral_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0, abs=1e-12)
    assert L.spectral_norm(np.zeros((3, 2))) == 0.0
    with pytest.raises(ValueError):
        L.spectral_norm(np.zeros((0, 2)))


def test_spectral_norm_matches_jacobi_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, n = rng.integers(1, 9, 2)
        A = rng.standard_normal((m, n))
        assert abs(L.spectral_norm(A) - jacobi_singular_values(A)[0]) < 1e-8


def test_rff_bound_examples_and_scaling():
    assert L.rff_bound(from_matrix([[1.0]])) == pytest.approx(math.sqrt(8) * math.pi)
    assert L.rff_bound(from_matrix([[0.0]])) == 0.0
    assert L.rff_bound(from_matrix(np.diag([2.0, 1.0]))) == pytest.approx(2 * math.sqrt(8) * math.pi)
    B = np.random.default_rng(1).standard_normal((5, 3))
    assert L.rff_bound(from_matrix(-2.5 * B)) == pytest.approx(2.5 * L.rff_bound(from_matrix(B)), rel=1e-12)


def test_empirical_lipschitz_examples():
    box = L.box_sampler(1)
    assert L.empirical_lipschitz(lambda x: 3 * x, box, 1000) == pytest.approx(3.0, abs=1e-9)
    assert L.empirical_lipschitz(lambda x: np.zeros_like(x), box, 1000) == 0.0
    enc = from_matrix([[1.0]])
    r = L.rff_report(enc, n_pairs=20_000)
    assert 6.28 <= r.empirical <= 8.88578 and r.passed
    with pytest.raises(ValueError):
        L.empirical_lipschitz(lambda x: x, box, 0)


def test_set_disc_bound_examples():
    sd = small_sd(3)
    for p in sd.params.values():
        p.data = np.zeros_like(p.data)
    r = L.set_disc_report(sd, n_pairs=1000)
    assert r.bound == 0.0 and r.empirical == 0.0 and r.passed

    sd = SetDiscriminator(1, 1, m_x=1, m_y=1, phi_hidden=(), p=4, rho_hidden=(), seed=0)
    sd.enc_x, sd.enc_y = from_matrix([[1.0]]), from_matrix([[1.0]])
    sd.phi.params["W0"].data = np.eye(4)
    sd.rho.params["W0"].data = np.eye(4)[:, :1]
    expected = 0.25 * 1 * math.sqrt(2) * math.sqrt(8) * math.pi
    assert L.set_disc_bound(sd) == pytest.approx(expected, rel=1e-12)


def test_set_disc_random_bound_holds():
    assert L.set_disc_report(small_sd(4), n_pairs=5000).passed


def test_lemmas_and_equality_cases():
    reports = L.verify_lemmas(200, seed=0)
    assert [r.name for r in reports] == ["lemma1", "lemma2", "lemma3", "lemma4"]
    assert all(r.passed for r in reports)
    A = np.random.default_rng(0).standard_normal((3, 2))
    assert L.spectral_norm(np.vstack([A, np.zeros((2, 2))])) == pytest.approx(L.spectral_norm(A), rel=1e-12)
    x = np.array([0.3, -1.2, 2.0])
    assert 4 * np.linalg.norm(x) == pytest.approx(2 * np.linalg.norm(np.tile(x, 4)), rel=1e-14)
    lemma4 = reports[3]
    GH = np.array([[2.0], [3.0]])
    assert L.spectral_norm(GH) == pytest.approx(math.sqrt(13), rel=1e-12)
    assert lemma4.passed
    with pytest.raises(ValueError):
        L.verify_lemmas(0)


def test_report_format_and_determinism():
    a = L.verify_all(trials=20, seed=3, pairs=500, n_encodings=2, n_discriminators=1)
    b = L.verify_all(trials=20, seed=3, pairs=500, n_encodings=2, n_discriminators=1)
    assert L.format_report(a) == L.format_report(b)
    assert all(r.passed for r in a)
    csv_text = L.report_csv(a)
    assert csv_text.splitlines()[0] == "name,bound,empirical,margin,samples,pass"
    assert len(csv_text.splitlines()) == len(a) + 1
    assert L.BoundReport("x", 1.0, 1.0 + 2e-9, 1).line().endswith("FAIL")
