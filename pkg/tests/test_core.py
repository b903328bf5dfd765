import numpy as np
import pytest

from certmetric import (
    Dataset,
    InvalidInput,
    mahalanobis_sq,
    pca_fit,
    preprocess,
    project_to_psd,
    symmetric_eig,
    validate_metric,
)


def random_symmetric(rng, p):
    a = rng.normal(size=(p, p))
    return 0.5 * (a + a.T)


def random_psd(rng, p, floor=0.0):
    a = rng.normal(size=(p, p))
    return a @ a.T + floor * np.eye(p)


class TestSymmetricEig:
    def test_identity(self):
        eig = symmetric_eig(np.eye(3))
        assert np.allclose(eig.eigenvalues, [1.0, 1.0, 1.0])
        assert np.allclose(eig.eigenvectors @ eig.eigenvectors.T, np.eye(3), atol=1e-12)

    def test_diagonal_sorted_descending(self):
        eig = symmetric_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(eig.eigenvalues, [3.0, 2.0, 1.0])
        # eigenvectors are signed axis vectors permuted to match the order
        assert np.allclose(np.abs(eig.eigenvectors), np.eye(3)[:, [0, 2, 1]])

    def test_reconstruction(self):
        rng = np.random.default_rng(11)
        a = random_symmetric(rng, 5)
        eig = symmetric_eig(a)
        recon = (eig.eigenvectors * eig.eigenvalues) @ eig.eigenvectors.T
        assert np.linalg.norm(recon - a) <= 1e-8 * max(np.linalg.norm(a), 1.0)

    def test_rejects_nonfinite(self):
        bad = np.array([[1.0, np.nan], [np.nan, 1.0]])
        with pytest.raises(InvalidInput):
            symmetric_eig(bad)

    def test_rejects_nonsquare(self):
        with pytest.raises(InvalidInput):
            symmetric_eig(np.zeros((2, 3)))


class TestProjectToPsd:
    def test_diagonal_truncation(self):
        assert np.allclose(project_to_psd(np.diag([2.0, -1.0])), np.diag([2.0, 0.0]))

    def test_psd_fixed_point(self):
        rng = np.random.default_rng(3)
        m = random_psd(rng, 4)
        assert np.abs(project_to_psd(m) - m).max() < 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        a = random_symmetric(rng, 6)
        once = project_to_psd(a)
        twice = project_to_psd(once)
        assert np.abs(twice - once).max() < 1e-10

    def test_frobenius_nearest_against_sampled_psd(self):
        # independent check: the projection beats 100 random PSD candidates
        rng = np.random.default_rng(5)
        a = random_symmetric(rng, 4)
        best = np.linalg.norm(a - project_to_psd(a))
        for _ in range(100):
            q = random_psd(rng, 4)
            assert best <= np.linalg.norm(a - q) + 1e-12

    def test_eigenvalue_clipping_matches_independent_decomposition(self):
        rng = np.random.default_rng(6)
        a = random_symmetric(rng, 4)
        vals, vecs = np.linalg.eigh(a)  # independent route
        expected = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        assert np.abs(project_to_psd(a) - expected).max() < 1e-10


class TestMahalanobis:
    def test_euclidean_case(self):
        assert mahalanobis_sq(np.eye(2), np.array([1.0, 0.0]), np.zeros(2)) == 1.0

    def test_coincident_points(self):
        x = np.array([0.3, -0.7, 2.0])
        assert mahalanobis_sq(np.eye(3), x, x) == 0.0

    def test_diagonal_form(self):
        d = mahalanobis_sq(np.diag([4.0, 1.0]), np.array([1.0, 1.0]), np.zeros(2))
        assert d == pytest.approx(5.0)

    def test_symmetry_in_arguments(self):
        rng = np.random.default_rng(7)
        m = random_psd(rng, 3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert mahalanobis_sq(m, x, y) == pytest.approx(mahalanobis_sq(m, y, x))

    def test_reconstruction_consistency(self):
        rng = np.random.default_rng(8)
        m = random_psd(rng, 4)
        eig = symmetric_eig(m)
        recon = (eig.eigenvectors * eig.eigenvalues) @ eig.eigenvectors.T
        x, y = rng.normal(size=4), rng.normal(size=4)
        assert mahalanobis_sq(m, x, y) == pytest.approx(
            mahalanobis_sq(recon, x, y), rel=1e-8
        )

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            mahalanobis_sq(np.eye(2), np.zeros(3), np.zeros(3))


class TestPreprocess:
    def test_two_point_line(self):
        data = Dataset(np.array([[0.0], [2.0]]), np.array([1, 2]))
        out, lmap = preprocess(data)
        assert np.allclose(out.instances, [[-1.0], [1.0]])
        assert np.allclose(lmap.mean, [1.0])

    def test_rows_unit_norm(self):
        rng = np.random.default_rng(9)
        data = Dataset(rng.normal(size=(40, 6)), rng.integers(1, 3, size=40))
        out, _ = preprocess(data)
        norms = np.linalg.norm(out.instances, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-12

    def test_stored_transform_reproduces_training_output(self):
        rng = np.random.default_rng(10)
        data = Dataset(rng.normal(size=(25, 4)), rng.integers(1, 3, size=25))
        out, lmap = preprocess(data)
        again = lmap.apply(data.instances)
        assert np.array_equal(again, out.instances)

    def test_zero_variance_feature_passes_through(self):
        x = np.column_stack([np.full(10, 2.0), np.arange(10.0)])
        data = Dataset(x, np.tile([1, 2], 5))
        out, lmap = preprocess(data)
        assert lmap.scale[0] == 1.0
        assert np.all(np.isfinite(out.instances))


class TestPcaFit:
    def test_rank_one_data_keeps_one_direction(self):
        t = np.linspace(-1, 1, 20)
        x = np.column_stack([t, 2.0 * t])
        data = Dataset(x, np.tile([1, 2], 10))
        lmap = pca_fit(data, 0.95)
        assert lmap.d.shape == (1, 2)

    def test_full_retention_square(self):
        rng = np.random.default_rng(12)
        data = Dataset(rng.normal(size=(50, 3)), rng.integers(1, 3, size=50))
        lmap = pca_fit(data, 1.0)
        assert lmap.d.shape == (3, 3)

    def test_rows_orthonormal(self):
        rng = np.random.default_rng(13)
        data = Dataset(rng.normal(size=(60, 5)), rng.integers(1, 3, size=60))
        lmap = pca_fit(data, 0.9)
        gram = lmap.d @ lmap.d.T
        assert np.abs(gram - np.eye(lmap.d.shape[0])).max() < 1e-8

    def test_projected_covariance_diagonal(self):
        rng = np.random.default_rng(14)
        base = rng.normal(size=(100, 4)) @ rng.normal(size=(4, 4))
        data = Dataset(base, rng.integers(1, 3, size=100))
        lmap = pca_fit(data, 1.0)
        proj = data.instances @ lmap.d.T
        cov = np.cov(proj, rowvar=False)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 1e-8

    def test_variance_capture_meets_fraction(self):
        rng = np.random.default_rng(15)
        base = rng.normal(size=(80, 6)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])
        data = Dataset(base, rng.integers(1, 3, size=80))
        for fraction in (0.5, 0.8, 0.95, 1.0):
            lmap = pca_fit(data, fraction)
            proj = data.instances @ lmap.d.T
            captured = np.trace(np.atleast_2d(np.cov(proj, rowvar=False)))
            total = np.trace(np.cov(data.instances, rowvar=False))
            assert captured / total >= fraction - 1e-10

    def test_invalid_fraction(self):
        rng = np.random.default_rng(16)
        data = Dataset(rng.normal(size=(10, 2)), np.tile([1, 2], 5))
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(InvalidInput):
                pca_fit(data, bad)


class TestValidateMetric:
    def test_accepts_psd(self):
        rng = np.random.default_rng(17)
        m = random_psd(rng, 3)
        assert validate_metric(m) is not None

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidInput):
            validate_metric(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidInput):
            validate_metric(np.diag([1.0, -0.5]))


class TestDataset:
    def test_requires_two_instances(self):
        with pytest.raises(InvalidInput):
            Dataset(np.zeros((1, 2)), np.array([1]))

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInput):
            Dataset(np.array([[0.0, np.inf], [1.0, 2.0]]), np.array([1, 2]))

    def test_rejects_fractional_labels(self):
        with pytest.raises(InvalidInput):
            Dataset(np.zeros((2, 2)), np.array([1.0, 1.5]))
