import numpy as np
import pytest

from backdoor_diffusion.errors import (
    DimensionMismatch,
    InvalidAdjacency,
    NotPositiveDefinite,
    SingularMatrix,
)
from backdoor_diffusion.stdyn import (
    CarSpec,
    ConfounderLink,
    car_cov,
    confounder_link_apply,
    kron_cov,
    path_adjacency,
    sample_temporal_noise,
)

H2 = np.array([[0.0, 1.0], [1.0, 0.0]])


def test_car_cov_examples():
    np.testing.assert_allclose(car_cov(CarSpec(2, 0.0, H2)), np.eye(2))
    np.testing.assert_allclose(car_cov(CarSpec(2, 0.5, H2)), [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-14)
    with pytest.raises(SingularMatrix):
        car_cov(CarSpec(2, 1.0, H2))
    with pytest.raises(SingularMatrix):
        car_cov(CarSpec(2, 1.5, H2))  # invertible but indefinite
    with pytest.raises(InvalidAdjacency):
        car_cov(CarSpec(2, 0.2, np.array([[1.0, 1.0], [1.0, 0.0]])))


@pytest.mark.parametrize("J,rho", [(3, 0.3), (6, 0.4), (6, -0.45), (10, 0.49)])
def test_car_cov_spd(J, rho):
    D = car_cov(CarSpec.path(J, rho))
    np.testing.assert_array_equal(D, D.T)
    np.linalg.cholesky(D)
    np.testing.assert_allclose(D @ (np.eye(J) - rho * path_adjacency(J)), np.eye(J), atol=1e-12)


def test_kron_cov_examples():
    np.testing.assert_array_equal(kron_cov(np.eye(2), [[2.0]]), np.diag([2.0, 2.0]))
    D = np.array([[4 / 3, 2 / 3], [2 / 3, 4 / 3]])
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    K = kron_cov(D, S)
    for j in range(2):
        for l in range(2):
            np.testing.assert_allclose(K[2 * j:2 * j + 2, 2 * l:2 * l + 2], D[j, l] * S)
    assert np.all(kron_cov(np.zeros((2, 2)), S) == 0)
    with pytest.raises(DimensionMismatch):
        kron_cov(np.zeros((2, 3)), S)


def test_sample_temporal_noise_identity_and_rho():
    X = sample_temporal_noise(np.eye(3), [[1.0]], 50_000, 1)
    C = np.cov(X.T, bias=True)
    # standard error of a covariance entry is about 1/sqrt(n)
    assert np.max(np.abs(C - np.eye(3))) < 3 * np.sqrt(2 / 50_000) * 3
    D = car_cov(CarSpec(2, 0.5, H2))
    X = sample_temporal_noise(D, [[1.0]], 50_000, 2)
    assert np.linalg.norm(np.cov(X.T, bias=True) - D) < 0.05


def test_sample_temporal_noise_edge_cases():
    assert sample_temporal_noise(np.eye(2), np.eye(2), 0, 0).shape == (0, 4)
    a = sample_temporal_noise(np.eye(2), np.eye(2), 5, 9)
    np.testing.assert_array_equal(a, sample_temporal_noise(np.eye(2), np.eye(2), 5, 9))
    with pytest.raises(NotPositiveDefinite):
        sample_temporal_noise(np.array([[1.0, 2.0], [2.0, 1.0]]), [[1.0]], 3, 0)


def test_confounder_link_examples():
    link = ConfounderLink(np.zeros((2, 1, 3)), "poly_sin")
    np.testing.assert_array_equal(confounder_link_apply(link, 1, [0.7], [0.25]), [0.25])
    ident = ConfounderLink(np.eye(2)[None], "identity")
    np.testing.assert_array_equal(confounder_link_apply(ident, 0, [1.5, -2.0], [0.0, 0.0]), [1.5, -2.0])
    # first two components of (x, x^2, sin x) weighted by (1, 2)
    g = ConfounderLink(np.array([[[1.0, 2.0, 0.0]]]), "poly_sin")
    assert confounder_link_apply(g, 0, [3.0], [0.5])[0] == pytest.approx(21.5, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        confounder_link_apply(g, 0, [3.0, 1.0], [0.5])


def test_confounder_link_varies_by_region():
    gam = np.array([[[1.0, 0.0, 0.0]], [[2.0, 0.0, 0.0]]])
    link = ConfounderLink(gam, "poly_sin")
    out = confounder_link_apply(link, np.array([0, 1]), np.array([[1.0], [1.0]]), np.zeros((2, 1)))
    np.testing.assert_array_equal(out[:, 0], [1.0, 2.0])
