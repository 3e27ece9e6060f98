import numpy as np
import pytest

from vqprecode import covariance as cov
from vqprecode import diffcore as dc
from vqprecode.channel import ArrayGeometry
from fdcheck import finite_difference, assert_grads_close

GEOM = ArrayGeometry(n_v=2, n_h=8)
N = GEOM.n_antennas
DICT = cov.build_dictionary(GEOM)


def test_dictionary_shape_and_orthonormal_columns():
    small = cov.build_dictionary(ArrayGeometry(n_v=2, n_h=2))
    assert small.q.shape == (16, 4)
    assert np.allclose(small.q.conj().T @ small.q, np.eye(4), atol=1e-10)
    assert DICT.q.shape == (4 * N, N)
    assert np.allclose(DICT.q.conj().T @ DICT.q, np.eye(N), atol=1e-10)


def test_all_ones_gives_identity():
    c = np.ones(4 * N)
    cm = cov.build_covariance(c, DICT)
    assert np.max(np.abs(cm - np.eye(N))) < 1e-12


def _toeplitz_violation(block: np.ndarray) -> float:
    worst = 0.0
    n = block.shape[0]
    for off in range(-n + 1, n):
        d = np.diagonal(block, offset=off)
        worst = max(worst, float(np.max(np.abs(d - d[0]))))
    return worst


def test_linear_array_covariance_is_toeplitz():
    geom = ArrayGeometry(n_v=1, n_h=4)
    d = cov.build_dictionary(geom)
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = rng.uniform(0.0, 2.0, size=16)
        cm = cov.build_covariance(c, d)
        assert _toeplitz_violation(cm) < 1e-10


def test_ura_covariance_is_block_toeplitz_with_toeplitz_blocks():
    rng = np.random.default_rng(1)
    nv, nh = GEOM.n_v, GEOM.n_h
    for _ in range(5):
        c = rng.uniform(0.0, 2.0, size=4 * N)
        cm = cov.build_covariance(c, DICT)
        blocks = cm.reshape(nv, nh, nv, nh).transpose(0, 2, 1, 3)
        # within-block Toeplitz
        for i in range(nv):
            for j in range(nv):
                assert _toeplitz_violation(blocks[i, j]) < 1e-10
        # block-level Toeplitz: block (i, j) depends only on i - j
        for off in range(-(nv - 1), nv):
            ref = None
            for i in range(nv):
                j = i - off
                if 0 <= j < nv:
                    blk = blocks[i, j]
                    ref = blk if ref is None else ref
                    assert np.max(np.abs(blk - ref)) < 1e-10


def test_hermitian_and_floor_eigenvalues():
    rng = np.random.default_rng(2)
    for _ in range(10):
        c = cov.C_FLOOR + rng.uniform(0.0, 3.0, size=4 * N)
        cm = cov.build_covariance(c, DICT)
        assert np.max(np.abs(cm - cm.conj().T)) < 1e-12
        assert np.linalg.eigvalsh(cm).min() >= cov.C_FLOOR - 1e-10


def test_spike_gives_rank_one_dominant():
    k = 13
    c = np.full(4 * N, cov.C_FLOOR)
    c[k] += 5.0
    cm = cov.build_covariance(c, DICT)
    a_k = DICT.q[k].conj()
    vals, vecs = np.linalg.eigh(cm)
    top = vecs[:, -1]
    alignment = np.abs(np.vdot(top, a_k)) / (np.linalg.norm(top) * np.linalg.norm(a_k))
    assert alignment > 1 - 1e-10
    assert vals[-1] == pytest.approx(cov.C_FLOOR + 5.0 * np.linalg.norm(a_k) ** 2, rel=1e-9)


def test_negative_c_rejected():
    bad = np.ones(4 * N)
    bad[3] = -0.1
    with pytest.raises(cov.CovarianceError):
        cov.build_covariance(bad, DICT)


def test_scalar_closed_forms():
    geom = ArrayGeometry(n_v=1, n_h=1)
    d = cov.build_dictionary(geom)
    # c chosen so that C = [1]
    c = np.full(4, 0.25) / np.abs(d.q[:, 0]) ** 2 / 4
    cm = cov.build_covariance(np.ones(4), d)
    assert cm.shape == (1, 1) and abs(cm[0, 0] - 1.0) < 1e-12
    h = np.array([[0.3 + 0.4j]])
    nll, *_ = cov.gaussian_nll_values(h, h.copy(), np.ones((1, 4)), d)
    assert nll[0] == pytest.approx(np.log(np.pi), abs=1e-12)
    mu = np.array([[0.3 + 0.4j + 1.0]])   # |h - mu| = 1
    nll2, *_ = cov.gaussian_nll_values(h, mu, np.ones((1, 4)), d)
    assert nll2[0] == pytest.approx(np.log(np.pi) + 1.0, abs=1e-12)


def test_nll_gradients_match_finite_differences():
    geom = ArrayGeometry(n_v=1, n_h=4)
    d = cov.build_dictionary(geom)
    n = geom.n_antennas
    rng = np.random.default_rng(8)
    for _ in range(20):
        h = rng.uniform(-1, 1, size=(1, n)) + 1j * rng.uniform(-1, 1, size=(1, n))
        mu_re = rng.uniform(-1, 1, size=(1, n))
        mu_im = rng.uniform(-1, 1, size=(1, n))
        c = rng.uniform(0.2, 2.0, size=(1, 4 * n))

        def build(leaves):
            node = cov.gaussian_nll(h, leaves[0], leaves[1], leaves[2], d)
            return dc.node_sum(node)

        leaves = [dc.Node(a.copy(), tag="leaf") for a in (mu_re, mu_im, c)]
        dc.backward(build(leaves))
        analytic = [leaf.grad for leaf in leaves]
        numeric = finite_difference(
            lambda a, b, cc: build([dc.Node(v) for v in (a, b, cc)]).value,
            [mu_re, mu_im, c])
        assert_grads_close(analytic, numeric, rel_tol=1e-4)


def test_nll_minimized_at_mu_equals_h():
    rng = np.random.default_rng(4)
    h = rng.standard_normal((1, N)) + 1j * rng.standard_normal((1, N))
    c = rng.uniform(0.5, 1.5, size=(1, 4 * N))
    _, g_re, g_im, _ = cov.gaussian_nll_values(h, h.copy(), c, DICT)
    assert np.max(np.abs(g_re)) < 1e-12
    assert np.max(np.abs(g_im)) < 1e-12


def test_nll_batch_matches_per_sample():
    rng = np.random.default_rng(14)
    h = rng.standard_normal((3, N)) + 1j * rng.standard_normal((3, N))
    mu = rng.standard_normal((3, N)) + 1j * rng.standard_normal((3, N))
    c = rng.uniform(0.3, 2.0, size=(3, 4 * N))
    nll, *_ = cov.gaussian_nll_values(h, mu, c, DICT)
    for i in range(3):
        cm = cov.build_covariance(c[i], DICT)
        r = h[i] - mu[i]
        expected = (N * np.log(np.pi) + np.log(np.linalg.det(cm)).real
                    + np.real(r.conj() @ np.linalg.solve(cm, r)))
        assert nll[i] == pytest.approx(expected, rel=1e-10)


class TestMse:
    def test_zero_for_identical(self):
        h = np.array([[1 + 2j, -0.5j]])
        out = cov.mse_loss(h, dc.constant(h.real), dc.constant(h.imag))
        assert out.value[0] == 0.0

    def test_unit_complex_difference(self):
        h = np.zeros((1, 4), dtype=complex)
        h[0, 0] = 1 + 1j
        out = cov.mse_loss(h, dc.constant(np.zeros((1, 4))), dc.constant(np.zeros((1, 4))))
        assert out.value[0] == pytest.approx(2.0)

    def test_matches_entrywise_loop(self):
        rng = np.random.default_rng(5)
        h = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
        hb = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
        out = cov.mse_loss(h, dc.constant(hb.real), dc.constant(hb.imag))
        for i in range(2):
            acc = 0.0
            for k in range(6):
                d = h[i, k] - hb[i, k]
                acc += d.real ** 2 + d.imag ** 2
            assert out.value[i] == pytest.approx(acc, rel=1e-12)
