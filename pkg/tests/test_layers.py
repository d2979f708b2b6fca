import numpy as np
import pytest

from cocgan import tensor as T
from cocgan.layers import MLP, LayerNorm, Linear, Module


class Pair(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.rest = [LayerNorm(4), MLP(4, 2, rng)]


class TestModule:
    def test_named_parameters_order(self, rng):
        names = list(Pair(rng).named_parameters())
        assert names[:2] == ["first.weight", "first.bias"]
        assert names[2:4] == ["rest.0.weight", "rest.0.bias"]
        assert all(n.startswith("rest.1.") for n in names[4:])

    def test_num_parameters(self, rng):
        assert Linear(3, 4, rng).num_parameters() == 16
        assert MLP(4, 2, rng).num_parameters() == (4 * 8 + 8) + (8 * 4 + 4)

    def test_state_dict_round_trip(self, rng):
        a, b = Pair(rng), Pair(np.random.default_rng(99))
        b.load_state_dict(a.state_dict())
        for (_, pa), (_, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_zero_grad(self, rng):
        m = Linear(2, 2, rng)
        T.backward(T.sum_(m(T.Tensor(np.ones((1, 2))))))
        assert m.weight.grad is not None
        m.zero_grad()
        assert m.weight.grad is None


class TestLayers:
    def test_linear_weight_layout(self, rng, f64):
        fc = Linear(3, 2, rng)
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(fc(T.Tensor(x)).data, x @ fc.weight.data + fc.bias.data)

    def test_linear_without_bias(self, rng):
        assert "bias" not in Linear(3, 2, rng, bias=False).named_parameters()

    def test_layernorm_initial_identity_affine(self):
        ln = LayerNorm(5)
        np.testing.assert_array_equal(ln.weight.data, np.ones(5))
        np.testing.assert_array_equal(ln.bias.data, np.zeros(5))

    @pytest.mark.parametrize("ratio", [1, 4, 8])
    def test_mlp_width(self, rng, ratio):
        mlp = MLP(6, ratio, rng)
        assert mlp(T.Tensor(np.zeros((2, 3, 6)))).shape == (2, 3, 6)
