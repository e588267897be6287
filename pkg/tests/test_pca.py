import json

import numpy as np
import pytest

import bipkit.pca as pca_mod
from bipkit.errors import DomainError, InsufficientData, ZeroVariance
from bipkit.pca import (
    PcaModel,
    effective_dim,
    effective_rank,
    energy_curve,
    fit_pca,
    load_pca,
    principal_energy,
    save_pca,
)
from bipkit.store import EmbeddingMatrix


def spectrum_model(vals):
    vals = np.asarray(vals, dtype=float)
    return PcaModel.from_spectrum(np.eye(vals.size), vals)


def circle_cloud(rng, n=500, d=8):
    q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    th = rng.uniform(0, 2 * np.pi, n)
    return (np.cos(th)[:, None] * q[:, 0] + np.sin(th)[:, None] * q[:, 1]).astype(np.float32)


class TestFit:
    def test_rank_two(self, rng):
        m = fit_pca(circle_cloud(rng))
        assert np.all(m.eigvals[:2] > 0.1)
        assert np.all(m.eigvals[2:] < 1e-10)

    def test_isotropic(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((100_000, 16))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        lam = fit_pca(x.astype(np.float32)).eigvals
        assert np.max(np.abs(lam / lam.mean() - 1)) < 0.10

    def test_duplicates_have_zero_spectrum(self, rng):
        x = np.repeat(circle_cloud(rng, n=1), 50, axis=0)
        m = fit_pca(x)
        assert np.all(m.eigvals == 0)
        with pytest.raises(ZeroVariance):
            effective_rank(m)

    def test_invariants(self, rng):
        x = rng.standard_normal((400, 12)) * np.linspace(3, 0.1, 12)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        x = x.astype(np.float32)
        m = fit_pca(x)
        U = m.eigvecs
        np.testing.assert_allclose(U.T @ U, np.eye(12), atol=1e-8)
        assert np.all(np.diff(m.eigvals) <= 0) and np.all(m.eigvals >= 0)
        np.testing.assert_allclose(m.sigmas ** 2, m.eigvals, atol=1e-10)
        ref = np.cov(x.astype(np.float64), rowvar=False)
        assert np.linalg.norm(m.covariance() - ref) / np.linalg.norm(ref) < 1e-6
        np.testing.assert_allclose(m.mean, x.astype(np.float64).mean(axis=0), atol=1e-12)

    def test_streaming_chunks_match_single_pass(self, rng, monkeypatch):
        x = rng.standard_normal((1000, 6)).astype(np.float32)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        whole = fit_pca(x)
        monkeypatch.setattr(pca_mod, "_CHUNK", 37)
        chunked = fit_pca(x)
        np.testing.assert_allclose(chunked.eigvals, whole.eigvals, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(chunked.mean, whole.mean, atol=1e-14)

    def test_row_order_invariance(self, rng):
        x = rng.standard_normal((300, 5)).astype(np.float32)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        a = fit_pca(x)
        b = fit_pca(x[rng.permutation(300)])
        np.testing.assert_allclose(a.eigvals, b.eigvals, rtol=1e-10)
        np.testing.assert_allclose(np.abs(a.eigvecs.T @ b.eigvecs).diagonal(), 1, atol=1e-8)

    def test_uncentered_second_moment(self, rng):
        x = rng.standard_normal((200, 4)).astype(np.float32) + 2
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        m = fit_pca(x, centered=False)
        x64 = x.astype(np.float64)
        np.testing.assert_allclose(m.covariance(), x64.T @ x64 / 200, atol=1e-12)
        assert m.eigvals.sum() == pytest.approx(1.0, abs=1e-6)

    def test_too_few_rows(self):
        with pytest.raises(InsufficientData):
            fit_pca(np.eye(4, dtype=np.float32)[:1])


class TestEnergy:
    def test_full_and_rank_two(self, rng):
        m = fit_pca(circle_cloud(rng))
        assert principal_energy(m, m.dim) == 1.0
        assert principal_energy(m, 2) == pytest.approx(1.0, abs=1e-9)
        assert effective_dim(m, 0.95) == 2

    def test_uniform(self):
        m = spectrum_model(np.ones(100))
        assert principal_energy(m, 50) == pytest.approx(0.5, abs=1e-15)
        assert effective_dim(m, 0.95) == 95

    def test_geometric_spectrum(self):
        # smallest k with (1 - 0.9^k) / (1 - 0.9^64) >= 0.95 is 29
        m = spectrum_model(0.9 ** np.arange(1, 65))
        assert effective_dim(m, 0.95) == 29

    def test_monotone_curve(self, rng):
        m = spectrum_model(rng.exponential(size=40))
        e = energy_curve(m)
        assert np.all(np.diff(e) >= 0) and e[-1] == 1.0

    def test_faster_decay_needs_fewer_dims(self):
        ks = [effective_dim(spectrum_model(r ** np.arange(64)), 0.9) for r in (0.99, 0.95, 0.9, 0.7)]
        assert all(b <= a for a, b in zip(ks, ks[1:]))

    def test_domain(self):
        m = spectrum_model([1.0, 1.0])
        with pytest.raises(DomainError):
            principal_energy(m, 0)
        with pytest.raises(DomainError):
            effective_dim(m, 0.0)
        with pytest.raises(ZeroVariance):
            principal_energy(spectrum_model([0.0, 0.0]), 1)


class TestEffectiveRank:
    def test_equal_eigenvalues(self):
        assert effective_rank(spectrum_model([2.0] * 7 + [0.0] * 3)) == pytest.approx(7.0, rel=1e-15)

    def test_single(self):
        assert effective_rank(spectrum_model([3.0, 0, 0])) == 1.0

    def test_hand_value(self):
        assert effective_rank(spectrum_model([2.0, 1.0, 1.0])) == pytest.approx(16 / 6, rel=1e-15)

    def test_entropy_variant(self):
        assert effective_rank(spectrum_model([1.0] * 5), "entropy") == pytest.approx(5.0, rel=1e-12)
        with pytest.raises(ValueError):
            effective_rank(spectrum_model([1.0]), "bogus")


def test_save_load(tmp_path, rng):
    x = rng.standard_normal((100, 6)).astype(np.float32)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    m = fit_pca(EmbeddingMatrix(x))
    paths = save_pca(m, tmp_path / "p")
    doc = json.loads(open(paths[2]).read())
    assert set(doc["energy_knees"]) == {"0.5", "0.9", "0.95", "0.99"}
    assert doc["effective_rank"] == pytest.approx(effective_rank(m))
    back = load_pca(tmp_path / "p")
    np.testing.assert_allclose(back.eigvals, m.eigvals)
    np.testing.assert_allclose(back.eigvecs, m.eigvecs, atol=1e-7)
