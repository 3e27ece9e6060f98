import numpy as np
import pytest

from vqprecode import diffcore as dc
from vqprecode import vq
from fdcheck import finite_difference, assert_grads_close


def brute_force_indices(z, codebook):
    """Independent nearest-codeword scan, lowest index on ties."""
    n_embed = codebook.shape[1]
    out = []
    for i in range(0, len(z), n_embed):
        sub = z[i:i + n_embed]
        best, best_d = None, None
        for c, e in enumerate(codebook):
            d = float(np.sum((e - sub) ** 2))
            if best_d is None or d < best_d:
                best, best_d = c, d
        out.append(best)
    return np.array(out)


def test_exact_codeword_is_idempotent():
    codebook = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    msg = vq.quantize(codebook[2].copy(), codebook)
    assert msg.indices[0] == 2
    assert np.array_equal(msg.f, codebook[2])


def test_four_codeword_example():
    codebook = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    msg = vq.quantize(np.array([0.9, 0.2]), codebook)
    assert msg.indices[0] == 0
    assert np.array_equal(msg.f, [1.0, 0.0])
    assert np.array_equal(msg.indices, brute_force_indices(np.array([0.9, 0.2]), codebook))


def test_tie_breaks_to_lowest_index():
    codebook = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    # origin is equidistant from all four; codeword 1 vs 3 tie checked explicitly
    msg = vq.quantize(np.array([0.0, 0.0]), codebook)
    assert msg.indices[0] == 0
    z = np.array([0.5, 0.0])  # equidistant from codewords 0 and ... check 1 vs 3
    mid_13 = np.array([0.0, 0.0])
    sub_codebook = codebook[[1, 3]]
    msg2 = vq.quantize(mid_13, sub_codebook)
    assert msg2.indices[0] == 0  # first of the tied pair


def test_quantize_matches_brute_force_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_embed = int(rng.integers(1, 4))
        n_sub = int(rng.integers(1, 5))
        n_codewords = 2 ** int(rng.integers(1, 7))
        codebook = rng.uniform(-1, 1, size=(n_codewords, n_embed))
        z = rng.uniform(-1, 1, size=n_embed * n_sub)
        # inject exact ties occasionally by duplicating a codeword
        if rng.random() < 0.3 and n_codewords >= 2:
            codebook[-1] = codebook[0]
        msg = vq.quantize(z, codebook)
        assert np.array_equal(msg.indices, brute_force_indices(z, codebook))
        again = vq.quantize(msg.f, codebook)
        assert np.array_equal(codebook[again.indices].reshape(-1), msg.f)


def test_feedback_bits_paper_point():
    assert vq.feedback_bits(8, 2, 1024) == 40


@pytest.mark.parametrize("nl,ne,c,expected", [(8, 2, 16, 16), (4, 4, 256, 8)])
def test_feedback_bits_arithmetic(nl, ne, c, expected):
    assert vq.feedback_bits(nl, ne, c) == expected


def test_feedback_bits_rejects_bad_config():
    with pytest.raises(vq.VqError):
        vq.feedback_bits(8, 3, 16)
    with pytest.raises(vq.VqError):
        vq.feedback_bits(8, 2, 24)


class TestLossTerms:
    def _setup(self, z_val, codebook):
        store = dc.ParameterStore()
        store.register(vq.CODEBOOK, codebook)
        z = dc.Node(z_val[None, :], tag="z")
        idx = vq.quantize_batch(z.value, store[vq.CODEBOOK].value)
        f = vq.lookup(store, idx)
        return store, z, idx, f

    def test_zero_quantization_error_gives_zero_terms(self):
        codebook = np.array([[0.5, -0.5], [1.0, 1.0]])
        store, z, idx, f = self._setup(np.array([0.5, -0.5]), codebook)
        cb, cm = vq.vq_loss_terms(z, f, beta=0.25)
        assert cb.value[0] == 0.0 and cm.value[0] == 0.0

    def test_codebook_term_gradient_reaches_selected_codeword_only(self):
        codebook = np.array([[0.0, 0.0], [2.0, 2.0]])
        z_val = np.array([0.3, -0.1])
        store, z, idx, f = self._setup(z_val, codebook)
        cb, _ = vq.vq_loss_terms(z, f, beta=0.25)
        store.zero_grads()
        dc.backward(dc.node_sum(cb))
        g = store.gradients()[vq.CODEBOOK]
        assert np.allclose(g[0], 2 * (codebook[0] - z_val))
        assert np.array_equal(g[1], [0.0, 0.0])
        assert z.grad is None  # sg(z) blocks the encoder side

    def test_commitment_term_gradient_reaches_encoder_only(self):
        codebook = np.array([[0.0, 0.0], [2.0, 2.0]])
        z_val = np.array([0.3, -0.1])
        store, z, idx, f = self._setup(z_val, codebook)
        _, cm = vq.vq_loss_terms(z, f, beta=0.25)
        store.zero_grads()
        dc.backward(dc.node_sum(cm))
        assert vq.CODEBOOK not in store.gradients()
        assert np.allclose(z.grad, 0.25 * 2 * (z_val - codebook[0]))

    def test_straight_through_copies_downstream_gradient(self):
        rng = np.random.default_rng(3)
        codebook = rng.uniform(-1, 1, size=(8, 2))
        # pick a latent strictly inside its quantization cell so that the
        # finite-difference perturbations cannot change the selected codeword
        while True:
            z_val = rng.uniform(-1, 1, size=4)
            sub = z_val.reshape(2, 1, 2)
            d2 = np.sort(np.sum((sub - codebook[None]) ** 2, axis=2), axis=1)
            if np.all(d2[:, 1] - d2[:, 0] > 1e-2):
                break
        w = rng.uniform(0.5, 1.5, size=(1, 4))

        def loss_of(zv):
            store = dc.ParameterStore()
            store.register(vq.CODEBOOK, codebook)
            z = dc.Node(zv[None, :], tag="z")
            idx = vq.quantize_batch(z.value, codebook)
            f_st = vq.straight_through(z, vq.lookup(store, idx))
            return dc.node_sum(dc.mul(dc.mul(f_st, f_st), dc.constant(w))), z

        root, z = loss_of(z_val)
        dc.backward(root)
        # analytic gradient w.r.t. f at the (locally constant) selected codewords
        idx = vq.quantize_batch(z_val[None, :], codebook)
        f = codebook[idx[0]].reshape(-1)
        expected = 2 * f * w[0]
        assert np.allclose(z.grad[0], expected, rtol=1e-12)
        # straight-through contract: dL/dz must equal dL/df, where f is an
        # independent input of the downstream loss (finite differences on f)
        numeric = finite_difference(
            lambda fv: float(np.sum(fv[None, :] * fv[None, :] * w)), [f])
        assert_grads_close([z.grad[0]], numeric, rel_tol=1e-4)
        # and the true loss is locally constant in z inside the cell
        bump = loss_of(z_val + 1e-6)[0].value
        assert bump == root.value


def test_pack_examples():
    msg = vq.FeedbackMessage(indices=np.zeros(4, dtype=int), f=np.zeros(8))
    assert vq.pack_feedback(msg, 16) == "0" * 16
    msg = vq.FeedbackMessage(indices=np.array([3]), f=np.zeros(2))
    assert vq.pack_feedback(msg, 4) == "11"


def test_pack_unpack_roundtrip_property():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        n_embed = int(rng.integers(1, 4))
        n_codewords = 2 ** int(rng.integers(1, 8))
        n_sub = int(rng.integers(1, 6))
        codebook = rng.uniform(-1, 1, size=(n_codewords, n_embed))
        idx = rng.integers(0, n_codewords, size=n_sub)
        msg = vq.FeedbackMessage(indices=idx, f=codebook[idx].reshape(-1))
        bits = vq.pack_feedback(msg, n_codewords)
        assert len(bits) == vq.feedback_bits(n_sub * n_embed, n_embed, n_codewords)
        back = vq.unpack_feedback(bits, codebook)
        assert np.array_equal(back.indices, idx)
        assert np.array_equal(back.f, msg.f)


def test_unpack_rejects_wrong_length():
    codebook = np.zeros((4, 2))
    with pytest.raises(vq.VqError):
        vq.unpack_feedback("101", codebook)
    with pytest.raises(vq.VqError):
        vq.unpack_feedback("", codebook)


def test_usage_histogram():
    counts = vq.usage_histogram(np.array([[0, 1], [1, 3]]), 4)
    assert np.array_equal(counts, [1, 2, 0, 1])
