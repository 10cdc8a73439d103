from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsynth import fixtures as fx
from gridsynth import load_synthesis as ls
from gridsynth.grid_model import Bus, Line, Network


def test_time_covariance_constants():
    np.testing.assert_array_equal(ls.time_covariance([np.full(4, 3.0), np.full(4, 3.0)]), 0.0)


def test_time_covariance_hand_example():
    m = ls.time_covariance([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(m, [[0.25, -0.25], [-0.25, 0.25]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_time_covariance_symmetric_psd(seed):
    x = np.random.default_rng(seed).normal(size=(5, 7))
    m = ls.time_covariance(x)
    np.testing.assert_allclose(m, m.T, atol=1e-14)
    assert np.linalg.eigvalsh(m).min() > -1e-12


def test_identical_years_give_zero_covariance():
    year = np.sin(np.arange(168) / 5.0) + 3
    ens = ls.fit_ensemble([year, year, year], "X")
    assert ens.sigma.rank == 0 and np.all(ens.sigma.diagonal() == 0)
    draws = ls.sample_series(ens, np.random.default_rng(0), 3)
    np.testing.assert_allclose(draws, np.tile(year, (3, 1)), atol=1e-12)


def test_daily_cosine_supports_only_daily_bin():
    t = np.arange(24 * 14)
    years = [a * np.cos(2 * np.pi * t / 24) + 5 for a in (1.0, 1.5, 2.0)]
    ens = ls.fit_ensemble(years, "X", threshold=None)
    d = ens.sigma.diagonal()
    daily = len(t) // 24
    assert d[daily] > 0
    assert np.all(np.delete(d, daily) < 1e-20 * d[daily] + 1e-20)


def test_exact_covariance_matches_spectra():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 48))
    ens = ls.fit_ensemble(x, "X", threshold=None)
    spec = np.fft.rfft(x, axis=1)
    dev = spec - spec.mean(axis=0)
    full = dev.T @ dev.conj() / 4
    got = ens.sigma.to_sparse().toarray()
    cplx = np.arange(1, 24)
    np.testing.assert_allclose(got[np.ix_(cplx, cplx)], full[np.ix_(cplx, cplx)], atol=1e-10)
    # real bins are decoupled from the complex ones
    assert np.all(got[0, cplx] == 0)


def hermitian_psd(rng, n, rank):
    a = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    return a @ a.conj().T


def test_sparsify_threshold_zero_is_identity(rng):
    s = hermitian_psd(rng, 6, 6)
    out = ls.sparsify_covariance(sp.csr_matrix(s), 0.0).to_sparse().toarray()
    np.testing.assert_allclose(out, s, atol=1e-9)


def test_sparsify_high_threshold_gives_diagonal(rng):
    s = hermitian_psd(rng, 6, 6)
    np.fill_diagonal(s, 100.0 * np.abs(s).max())
    out = ls.sparsify_covariance(sp.csr_matrix(s), 0.5).to_sparse().toarray()
    np.testing.assert_allclose(out, np.diag(np.diag(s).real))


def test_sparsify_keeps_diagonal_and_restores_psd(rng):
    s = hermitian_psd(rng, 12, 2)  # rank deficient: thresholding breaks PSD
    out = ls.sparsify_covariance(sp.csr_matrix(s), 0.3)
    dense = out.to_sparse().toarray()
    assert np.linalg.eigvalsh(dense).min() > -1e-9 * np.abs(dense).max()
    assert np.all(np.diag(dense).real > 0)


def test_factorize_diagonal_and_zero():
    f = ls.factorize(sp.diags([4.0, 9.0, 0.0]).tocsr())
    np.testing.assert_allclose(f.to_sparse().toarray(), np.diag([4.0, 9.0, 0.0]))
    np.testing.assert_allclose(sorted(f.diag_sd), [0.0, 2.0, 3.0])
    z = ls.factorize(sp.csr_matrix((3, 3)))
    assert z.rank == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_factorize_reconstructs_random_block(seed):
    s = hermitian_psd(np.random.default_rng(seed), 5, 5)
    f = ls.factorize(sp.csr_matrix(s))
    ((idx, l),) = f.blocks
    np.testing.assert_allclose((l @ l.conj().T)[np.argsort(idx)][:, np.argsort(idx)], s, atol=1e-9 * np.abs(s).max())


def test_factorize_rejects_indefinite():
    with pytest.raises(ls.IndefiniteCovariance):
        ls.factorize(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))


def ensemble_with(var_mu_curve, sigma_diag):
    n = len(var_mu_curve)
    mu = np.fft.rfft(var_mu_curve)
    diag = np.asarray(sigma_diag, dtype=float)
    cov = ls.BlockCovariance(len(mu), np.arange(len(mu)), np.sqrt(diag), ())
    return ls.FourierEnsemble("X", n, mu, cov)


def test_tune_correlation_identity_case():
    n = 64
    t = np.arange(n)
    curve = 2.0 * np.sqrt(2) * np.cos(2 * np.pi * t / n) + 10  # variance 4
    diag = np.zeros(n // 2 + 1)
    diag[3] = n**2 / 2  # contributes 2 * diag / n^2 = 1 to the fluctuation variance
    ens = ensemble_with(curve, diag)
    st_ = ens.stats()
    assert st_.var_mu == pytest.approx(4.0)
    assert st_.var_sigma == pytest.approx(1.0)
    assert st_.implied_correlation == pytest.approx(0.8)
    tuned = ls.tune_correlation(ens, 0.8)
    assert tuned.meta["sigma_scale"] == pytest.approx(1.0)
    half = ls.tune_correlation(ens, 0.5)
    assert half.meta["sigma_scale"] == pytest.approx(4.0)
    assert half.stats().implied_correlation == pytest.approx(0.5)


def test_tune_correlation_rejects_bad_target():
    ens = ensemble_with(np.cos(np.arange(8.0)), np.ones(5))
    with pytest.raises(ValueError):
        ls.tune_correlation(ens, 1.0)


def test_degenerate_mean_rejected():
    ens = ensemble_with(np.full(8, 3.0), np.ones(5))
    with pytest.raises(ls.DegenerateEnsemble):
        ls.tune_correlation(ens, 0.8)


def test_pearson_identities(rng):
    a = rng.normal(size=100)
    assert ls.pearson(a, a) == pytest.approx(1.0)
    assert ls.pearson(a, -a) == pytest.approx(-1.0)
    assert ls.pearson(a, a + 7.0) == pytest.approx(1.0)


def test_sampler_mean_is_unbiased():
    rng = np.random.default_rng(5)
    years = [fx.load_shape(336, np.random.default_rng(k), 10.0) for k in range(4)]
    ens = ls.fit_ensemble(years, "X", threshold=None)
    spectra = ls.sample_spectra(ens, rng, 4000)
    sd = np.sqrt(ens.sigma.diagonal())
    err = np.abs(spectra.mean(axis=1) - ens.mu)
    assert np.all(err <= 5 * sd / np.sqrt(4000) + 1e-9)


def test_samples_are_real_and_keyed():
    years = [fx.load_shape(336, np.random.default_rng(k), 10.0) for k in range(4)]
    ens = ls.fit_ensemble(years, "X")
    a = ls.sample_series(ens, np.random.default_rng(1))
    b = ls.sample_series(ens, np.random.default_rng(1))
    c = ls.sample_series(ens, np.random.default_rng(2))
    assert a.dtype == float and a.shape == (336,)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_json_round_trip():
    years = [fx.load_shape(336, np.random.default_rng(k), 10.0) for k in range(4)]
    ens = ls.prepare_ensemble(years, "X")
    back = ls.ensemble_from_json(ls.ensemble_to_json(ens))
    np.testing.assert_array_equal(back.mu, ens.mu)
    np.testing.assert_allclose(back.sigma.to_sparse().toarray(), ens.sigma.to_sparse().toarray())
    a = ls.sample_series(ens, np.random.default_rng(3))
    b = ls.sample_series(back, np.random.default_rng(3))
    np.testing.assert_allclose(a, b, rtol=1e-12)


def two_bus_country(weights=(0.5, 0.5)):
    buses = (Bus("1", "AA", weights[0], True), Bus("2", "AA", weights[1], True))
    return Network(buses, (Line("l", "1", "2", 1.0, 1.0),), ())


def test_disaggregate_zero_variance_halves():
    year = 5 + np.sin(np.arange(336) / 7.0)
    ens = ls.fit_ensemble([year, year], "AA")
    table = ls.disaggregate({"AA": ens}, two_bus_country(), {"AA": 10.0}, seed=0)
    np.testing.assert_allclose(table.column("1"), table.column("2"))
    assert table.values.sum(axis=1).mean() == pytest.approx(10.0)


def test_disaggregate_single_bus_is_national_shape():
    year = 5 + np.sin(np.arange(336) / 7.0)
    ens = ls.fit_ensemble([year, year], "AA")
    net = Network((Bus("1", "AA", 1.0, True),), (), ())
    table = ls.disaggregate({"AA": ens}, net, {"AA": 5.0}, seed=0)
    np.testing.assert_allclose(table.column("1"), year * 5.0 / year.mean(), rtol=1e-12)


def test_disaggregate_keys_replicas():
    years = [fx.load_shape(336, np.random.default_rng(k), 10.0) for k in range(4)]
    ens = ls.prepare_ensemble(years, "AA")
    net = two_bus_country()
    a = ls.disaggregate({"AA": ens}, net, {"AA": 10.0}, seed=0, key=(2016, 1))
    b = ls.disaggregate({"AA": ens}, net, {"AA": 10.0}, seed=0, key=(2016, 2))
    again = ls.disaggregate({"AA": ens}, net, {"AA": 10.0}, seed=0, key=(2016, 1))
    assert a == again
    assert np.all(a.values != b.values)


def test_disaggregate_missing_ensemble():
    with pytest.raises(ls.InputError):
        ls.disaggregate({}, two_bus_country(), {"AA": 1.0}, seed=0)


def test_pairwise_pearson_near_target(ensembles):
    rng = np.random.default_rng(9)
    x = ls.sample_series(ensembles["BB"], rng, 60)
    assert abs(ls.pairwise_pearson(x).mean() - 0.8) < 0.03
