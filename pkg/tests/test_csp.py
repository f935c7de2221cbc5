import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import loop_covariance
from srmtl.csp import (
    SpatialFilterSet,
    build_feature_matrix,
    class_covariance,
    csp_features,
    features_from_scatter,
    fit_csp,
    fit_csp_from_scatter,
    trial_scatter,
)
from srmtl.dataio import SynthConfig, TrialSet, synth_dataset
from srmtl.errors import DegenerateVariance, DimensionMismatch, EmptyClass, SingularCovariance
from srmtl.signal import DEFAULT_BANDS, design_filter_bank, filter_trialset


def random_spd(rng, C, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((C, C)))
    return Q @ np.diag(np.geomspace(1.0, cond, C)) @ Q.T


def test_identity_covariance():
    np.testing.assert_array_equal(class_covariance([np.eye(2)], center=False), np.eye(2))


def test_sign_invariance(rng):
    X = rng.standard_normal((3, 50))
    np.testing.assert_allclose(class_covariance([X, -X]), class_covariance([X]), atol=1e-14)


def test_covariance_matches_loop_oracle(rng):
    trials = [rng.standard_normal((4, 100)) for _ in range(10)]
    np.testing.assert_allclose(class_covariance(trials), loop_covariance(trials), rtol=0, atol=1e-12)


def test_covariance_empty():
    with pytest.raises(EmptyClass):
        class_covariance([])


def test_diagonal_pencil():
    U = fit_csp(np.diag([4.0, 1.0]), np.eye(2), M=1, shrinkage=0.0)
    np.testing.assert_allclose(U.eigenvalues, [4.0, 1.0], rtol=1e-12)
    np.testing.assert_allclose(np.abs(U.filters), np.eye(2), atol=1e-12)


def test_isotropic_pencil():
    U = fit_csp(np.eye(4), np.eye(4), M=2)
    for u in U.filters.T:
        assert abs(u @ u / (u @ u) - 1.0) < 1e-12
    np.testing.assert_allclose(U.eigenvalues, 1.0, rtol=1e-9)


def test_unit_circle_sweep(rng):
    theta = np.linspace(0, np.pi, 3600, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)])
    for _ in range(20):
        s1, s2 = random_spd(rng, 2, 5.0), random_spd(rng, 2, 5.0)
        ratio = np.einsum("ik,ij,jk->k", u, s1, u) / np.einsum("ik,ij,jk->k", u, s2, u)
        U = fit_csp(s1, s2, M=1, shrinkage=0.0)
        assert abs(ratio.max() - U.eigenvalues[0]) / U.eigenvalues[0] < 1e-4


@pytest.mark.parametrize("C,M", [(4, 1), (8, 2), (22, 3)])
def test_generalized_eigen_residual_and_diagonalization(rng, C, M):
    s1, s2 = random_spd(rng, C, 50.0), random_spd(rng, C, 50.0)
    U = fit_csp(s1, s2, M=M, shrinkage=0.0)
    assert U.filters.shape == (C, 2 * M)
    np.testing.assert_allclose(np.linalg.norm(U.filters, axis=0), 1.0, rtol=1e-12)
    for u, lam in zip(U.filters.T, U.eigenvalues):
        assert np.linalg.norm(s1 @ u - lam * s2 @ u) < 1e-6
    for s in (s1, s2):
        D = U.filters.T @ s @ U.filters
        off = D - np.diag(np.diag(D))
        assert np.linalg.norm(off) / np.linalg.norm(D) < 1e-6
    # M largest first, then M smallest
    lam = U.eigenvalues
    assert np.all(np.diff(lam[:M]) <= 0) and np.all(np.diff(lam[M:]) <= 0)
    assert lam[M - 1] >= lam[M]


def test_fit_csp_errors(rng):
    with pytest.raises(DimensionMismatch):
        fit_csp(np.eye(2), np.eye(3))
    with pytest.raises(DimensionMismatch):
        fit_csp(np.eye(2), np.eye(2), M=2)
    with pytest.raises(SingularCovariance):
        fit_csp(np.zeros((3, 3)), np.zeros((3, 3)), M=1, shrinkage=0.0)


def test_hand_variance():
    X = np.array([[1.0, -1.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0]])
    U = SpatialFilterSet(np.array([[1.0], [0.0]]), np.array([4.0]), M=1)
    f = csp_features(X, U)
    assert abs(f[0] - np.log(4.0 / 3.0)) < 1e-12
    assert abs(f[0] - 0.28768) < 1e-5


def test_constant_trial_degenerate():
    U = fit_csp(np.diag([4.0, 1.0]), np.eye(2), M=1, shrinkage=0.0)
    with pytest.raises(DegenerateVariance):
        csp_features(np.ones((2, 10)), U)


@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3), st.integers(0, 1000))
def test_scaling_shift(c, seed):
    rng = np.random.default_rng(seed)
    U = fit_csp(random_spd(rng, 3), random_spd(rng, 3), M=1)
    X = rng.standard_normal((3, 60))
    shift = csp_features(c * X, U) - csp_features(X, U)
    np.testing.assert_allclose(shift, 2 * np.log(abs(c)), rtol=0, atol=1e-10)


@pytest.fixture(scope="module")
def small_set():
    return synth_dataset(SynthConfig(n_per_class=10, channels=6, samples=250, seed=2))


def test_feature_dimension(small_set):
    bank = design_filter_bank(DEFAULT_BANDS, small_set.fs)
    F, filters = build_feature_matrix(small_set, bank, M=2)
    assert F.values.shape == (20, 68) and len(filters) == 17
    assert F.layout[0] == ((4.0, 8.0), 0) and F.layout[-1] == ((36.0, 40.0), 3)
    assert F.column_names[0] == "4-8Hz_f0"


def test_test_mode_equals_per_band(small_set):
    bank = design_filter_bank(DEFAULT_BANDS, small_set.fs)
    _, filters = build_feature_matrix(small_set, bank, M=2)
    unlabeled = small_set.with_labels(np.ones(len(small_set), dtype=int))
    F, _ = build_feature_matrix(unlabeled, bank, filters_per_band=filters)
    filtered = filter_trialset(small_set, bank)
    manual = np.stack([
        np.concatenate([csp_features(filtered[g, i], U) for g, U in enumerate(filters)])
        for i in range(len(small_set))
    ])
    np.testing.assert_allclose(F.values, manual, rtol=1e-12, atol=1e-12)


def test_row_permutation(small_set, rng):
    bank = design_filter_bank([(8.0, 12.0), (20.0, 24.0)], small_set.fs)
    _, filters = build_feature_matrix(small_set, bank, M=2)
    F, _ = build_feature_matrix(small_set, bank, filters_per_band=filters)
    perm = rng.permutation(len(small_set))
    G, _ = build_feature_matrix(small_set.subset(perm), bank, filters_per_band=filters)
    np.testing.assert_allclose(G.values, F.values[perm], rtol=1e-12, atol=1e-12)


def test_scatter_path_matches_raw(small_set):
    bank = design_filter_bank(DEFAULT_BANDS, small_set.fs)
    filtered = filter_trialset(small_set, bank)
    F, filters = build_feature_matrix(small_set, bank, M=2)
    S = trial_scatter(filtered)
    for g in range(len(bank)):
        U = fit_csp_from_scatter(S[g], small_set.labels, M=2, band=bank.bands[g])
        np.testing.assert_allclose(np.abs(U.filters), np.abs(filters[g].filters), atol=1e-9)
        f = features_from_scatter(S[g], filters[g], small_set.n_samples)
        np.testing.assert_allclose(f, F.values[:, 4 * g:4 * g + 4], rtol=0, atol=1e-10)


def test_training_covariance_psd(small_set):
    bank = design_filter_bank(DEFAULT_BANDS, small_set.fs)
    filtered = filter_trialset(small_set, bank)
    for g in range(len(bank)):
        for c in (1, 2):
            ev = np.linalg.eigvalsh(class_covariance(filtered[g][small_set.labels == c]))
            assert ev.min() >= -1e-10 * ev.max()


def test_training_needs_both_classes(small_set):
    bank = design_filter_bank([(8.0, 12.0)], small_set.fs)
    one = small_set.subset(np.flatnonzero(small_set.labels == 1))
    with pytest.raises(EmptyClass):
        build_feature_matrix(one, bank)
