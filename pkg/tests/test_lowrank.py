import numpy as np
import pytest

from idpseg.core import DataError
from idpseg.gfl import GflParams
from idpseg.lowrank import AlmParams, decompose, svt


def _oracle_singular_values(m):
    # eigenvalues of m^T m, independent of the SVD routine used by svt
    ev = np.linalg.eigvalsh(m.T @ m)[::-1]
    return np.sqrt(np.clip(ev, 0, None))


def test_svt_diagonal():
    np.testing.assert_allclose(svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-15)


def test_svt_zero_tau_is_identity():
    m = np.random.default_rng(0).normal(size=(10, 5))
    np.testing.assert_allclose(svt(m, 0.0), m, atol=1e-10)


def test_svt_against_independent_spectrum():
    rng = np.random.default_rng(1)
    for _ in range(5):
        m = rng.normal(size=(10, 5))
        got = _oracle_singular_values(svt(m, 0.7))
        want = np.maximum(_oracle_singular_values(m) - 0.7, 0)
        np.testing.assert_allclose(got, want, atol=1e-7)
        got_svd = np.linalg.svd(svt(m, 0.7), compute_uv=False)
        np.testing.assert_allclose(got_svd, np.maximum(np.linalg.svd(m, compute_uv=False) - 0.7, 0), atol=1e-10)


def test_svt_non_expansive():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = rng.normal(size=(2, 8, 6))
        assert np.linalg.norm(svt(x, 0.5) - svt(y, 0.5)) <= np.linalg.norm(x - y) + 1e-12


def test_svt_scale_covariance():
    m = np.random.default_rng(3).normal(size=(7, 4))
    np.testing.assert_allclose(svt(3 * m, 3 * 0.4), 3 * svt(m, 0.4), atol=1e-12)


def test_svt_rejects_non_finite_and_negative_tau():
    with pytest.raises(DataError):
        svt(np.array([[np.inf]]), 1.0)
    with pytest.raises(ValueError):
        svt(np.eye(2), -1.0)


def test_zero_matrix():
    dec = decompose(np.zeros((16, 3)), (4, 4))
    assert dec.converged and dec.iterations == 1
    assert not dec.background.any() and not dec.foreground.any()


def test_rank_one_goes_to_background():
    rng = np.random.default_rng(4)
    a = np.outer(rng.uniform(0.2, 1.0, 100), rng.uniform(0.5, 1.5, 8))
    dec = decompose(a, (10, 10))
    assert dec.converged
    assert np.linalg.norm(dec.foreground) / np.linalg.norm(a) <= 0.05


def test_converged_residual_and_history():
    rng = np.random.default_rng(5)
    a = np.outer(rng.random(36), rng.random(5)) + 0.01 * rng.random((36, 5))
    params = AlmParams(rho=1.5)
    dec = decompose(a, (6, 6), params)
    assert dec.converged
    assert dec.residual <= params.stop_tol
    assert dec.residual_history[-1] == dec.residual
    assert len(dec.residual_history) == dec.iterations
    mus = np.array(dec.mu_history)
    ratios = mus[1:] / mus[:-1]
    assert np.all(ratios >= 1.0)
    assert np.all(np.isclose(ratios, 1.0) | np.isclose(ratios, params.rho))
    np.testing.assert_allclose(dec.background + dec.foreground, a, atol=1e-5 * np.linalg.norm(a))


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(6)
    a = rng.random((25, 4))
    dec = decompose(a, (5, 5), AlmParams(max_iters=2))
    assert not dec.converged
    assert dec.iterations == 2
    assert dec.residual == min(dec.residual_history)


def test_errors():
    with pytest.raises(DataError):
        decompose(np.zeros((16, 1)), (4, 4))
    with pytest.raises(DataError):
        decompose(np.zeros((15, 3)), (4, 4))
    with pytest.raises(DataError):
        decompose(np.full((4, 2), np.nan), (2, 2))


def test_params_validation():
    with pytest.raises(ValueError, match="rho must exceed 1"):
        AlmParams(rho=1.0)
    with pytest.raises(ValueError):
        AlmParams(stop_tol=0)
    with pytest.raises(ValueError):
        AlmParams(lam=-1)


def test_default_lambda():
    a = np.random.default_rng(7).random((64, 4))
    dec = decompose(a, (8, 8), AlmParams(max_iters=1))
    assert dec.lam == pytest.approx(1 / 8)


def test_csv(tmp_path):
    a = np.random.default_rng(8).random((16, 3))
    dec = decompose(a, (4, 4), AlmParams(max_iters=3, gfl=GflParams(gamma=0.2)))
    dec.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual,mu,inner_iters,converged"
    assert len(lines) == 4
