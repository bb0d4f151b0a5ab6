import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaussunmix.hsi import HsiCube, build_neighborhood_matrix
from gaussunmix.networks import (an_forward, build_model, estimate_abundances, extract_endmembers, layer_dims,
                                 load_model, mn_forward, save_model, smooth_pixels, un_forward)
from gaussunmix.nn import EPS, DenseLayer, DenseNetwork


def compose(net, X):
    """Layer-by-layer oracle independent of DenseNetwork.forward."""
    a = X
    for l in net.layers:
        z = l.weights @ a + (0 if l.bias is None else l.bias[:, None])
        if l.activation == "relu":
            a = np.maximum(z, 0)
        elif l.activation == "leaky_relu":
            a = np.maximum(z, 0.01 * z)
        elif l.activation == "relu_eps":
            a = np.maximum(z, EPS)
        elif l.activation == "softmax":
            e = np.exp(z - z.max(axis=0))
            a = e / e.sum(axis=0)
        else:
            a = z
    return a


class TestShapes:
    def test_samson_un(self):
        assert build_model(156, 3).un.dims == [156, 78, 19, 3]

    def test_simulated_an(self):
        m = build_model(198, 4)
        assert m.an.dims == [1584, 792, 198, 198]
        assert m.mn.dims == [4, 49, 198]

    def test_smallest(self):
        m = build_model(8, 2)
        assert m.un.dims == [8, 4, 1, 2] and m.mn.dims == [2, 2, 8]

    def test_too_few_bands(self):
        with pytest.raises(ValueError):
            build_model(7, 2)
        with pytest.raises(ValueError):
            build_model(16, 1)

    def test_bias_and_activations(self):
        m = build_model(16, 3)
        assert all(l.bias is not None for l in m.an.layers)
        assert all(l.bias is None for l in m.un.layers + m.mn.layers)
        assert [l.activation for l in m.an.layers] == ["relu", "relu", "linear"]
        assert [l.activation for l in m.un.layers] == ["leaky_relu", "leaky_relu", "softmax"]
        assert [l.activation for l in m.mn.layers] == ["relu", "relu_eps"]

    @given(st.integers(8, 64), st.integers(2, 6))
    def test_dims_property(self, B, K):
        m = build_model(B, K)
        d = layer_dims(B, K)
        assert m.an.dims == d["an"] and m.un.dims == d["un"] and m.mn.dims == d["mn"]
        assert min(d["un"] + d["mn"] + d["an"]) >= 1

    def test_seeded(self):
        a, b = build_model(16, 3, seed=4), build_model(16, 3, seed=4)
        for x, y in zip(a.an.params() + a.un.params(), b.an.params() + b.un.params()):
            np.testing.assert_array_equal(x, y)


class TestForward:
    def test_an_shape_and_oracle(self, rng):
        m = build_model(16, 3, seed=1)
        N = rng.random((128, 9))
        out = an_forward(m, N)
        assert out.shape == (16, 9)
        np.testing.assert_allclose(out, compose(m.an, N), rtol=1e-12, atol=1e-14)

    def test_un_simplex_and_oracle(self, rng):
        m = build_model(16, 3, seed=1)
        Y = rng.random((16, 11))
        L = un_forward(m, Y)
        np.testing.assert_allclose(L.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(L > 0)
        np.testing.assert_allclose(L, compose(m.un, Y), rtol=1e-12)

    def test_un_symmetric(self):
        net = DenseNetwork([DenseLayer(np.ones((2, 2)), None, "relu"), DenseLayer(np.ones((2, 2)), None, "softmax")])
        m = build_model(8, 2)
        m.un = net
        np.testing.assert_allclose(un_forward(m, np.array([[0.3], [0.3]]))[:, 0], [0.5, 0.5])

    def test_mn_positive_and_oracle(self, rng):
        m = build_model(16, 3, seed=1)
        L = rng.dirichlet(np.ones(3), 7).T
        out = mn_forward(m, L)
        assert np.all(out >= EPS)
        np.testing.assert_allclose(out, compose(m.mn, L), rtol=1e-12)

    def test_mn_zero_weights(self):
        m = build_model(16, 3)
        for l in m.mn.layers:
            l.weights[:] = 0
        np.testing.assert_array_equal(mn_forward(m, np.eye(3)), EPS)

    def test_smooth_pixels_floor(self, rng):
        m = build_model(16, 3, seed=2)
        assert np.all(smooth_pixels(m, rng.random((128, 20)) * 5) >= EPS)


class TestEndmembers:
    def test_linear_mn_returns_weights(self, rng):
        m = build_model(16, 3)
        W = rng.random((16, 3)) + 0.1
        m.mn = DenseNetwork([DenseLayer(W, None, "relu_eps")])
        np.testing.assert_array_equal(extract_endmembers(m), W)

    def test_columns_match_basis_vectors(self):
        m = build_model(16, 4, seed=3)
        A = extract_endmembers(m)
        for k in range(4):
            e = np.zeros((4, 1))
            e[k] = 1
            np.testing.assert_allclose(A[:, k], mn_forward(m, e)[:, 0], rtol=1e-14)
        assert np.all(A >= EPS)


class TestPipeline:
    def test_estimate_equals_composition(self, rng):
        m = build_model(8, 3, seed=5)
        cube = HsiCube(rng.random((4, 5, 8)))
        S = estimate_abundances(m, cube)
        manual = un_forward(m, smooth_pixels(m, build_neighborhood_matrix(cube)))
        np.testing.assert_array_equal(S, manual)
        np.testing.assert_allclose(S.sum(axis=0), 1.0, atol=1e-12)

    def test_constant_cube_constant_output(self):
        m = build_model(8, 3, seed=6)
        S = estimate_abundances(m, HsiCube(np.full((4, 4, 8), 0.4)))
        np.testing.assert_allclose(S, S[:, :1].repeat(16, axis=1), atol=1e-15)

    def test_band_mismatch(self, rng):
        with pytest.raises(ValueError):
            estimate_abundances(build_model(8, 2), HsiCube(rng.random((2, 2, 9))))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = build_model(16, 3, seed=7)
        m.pretrained = True
        save_model(m, tmp_path / "ck")
        back = load_model(tmp_path / "ck")
        assert back.dims == (16, 3, 8) and back.pretrained
        np.testing.assert_array_equal(extract_endmembers(back), extract_endmembers(m))

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "nothing")
