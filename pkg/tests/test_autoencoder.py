"""View autoencoder contracts and the reconstruction objective."""

import numpy as np
import pytest

from gdcn.autodiff import ShapeError, Tensor, grad_check, mean
from gdcn.autoencoder import ViewAutoencoder, decode, encode, reconstruction_loss


def _tiny_ae(view=0, input_dim=5, latent=3, hidden=(6,), seed=0):
    return ViewAutoencoder(view, input_dim, latent_dim=latent, hidden=hidden, seed=seed)


def _identity_ae(dim):
    ae = ViewAutoencoder(0, dim, latent_dim=dim, hidden=(), seed=0)
    for mlp in (ae.encoder, ae.decoder):
        mlp.weights[0].values[...] = np.eye(dim)
        mlp.biases[0].values[...] = 0.0
    return ae


class TestShapes:
    def test_encode_shape_contract(self):
        ae = _tiny_ae()
        out = encode(ae, Tensor(np.ones((1, 5))))
        assert out.values.shape == (1, 3)

    def test_decode_shape_contract(self):
        ae = _tiny_ae()
        out = decode(ae, Tensor(np.ones((1, 3))))
        assert out.values.shape == (1, 5)

    def test_decode_encode_round_trip_shape(self):
        ae = _tiny_ae()
        x = Tensor(np.random.default_rng(0).normal(size=(7, 5)))
        assert decode(ae, encode(ae, x)).values.shape == x.values.shape

    def test_width_mismatch_rejected(self):
        ae = _tiny_ae()
        with pytest.raises(ShapeError, match="encode"):
            encode(ae, Tensor(np.ones((2, 4))))
        with pytest.raises(ShapeError, match="decode"):
            decode(ae, Tensor(np.ones((2, 5))))

    def test_zeroed_final_layer_gives_zero_latents(self):
        ae = _tiny_ae()
        ae.encoder.weights[-1].values[...] = 0.0
        ae.encoder.biases[-1].values[...] = 0.0
        out = encode(ae, Tensor(np.random.default_rng(1).normal(size=(4, 5))))
        assert (out.values == 0.0).all()


class TestGradients:
    def test_encode_gradient_check(self):
        ae = _tiny_ae()
        x = Tensor(np.random.default_rng(2).uniform(-1, 1, size=(4, 5)))
        params = ae.encoder.parameters()
        assert grad_check(lambda: mean(encode(ae, x)), params, step=1e-5) <= 1e-5

    def test_decode_gradient_check(self):
        ae = _tiny_ae()
        z = Tensor(np.random.default_rng(3).uniform(-1, 1, size=(4, 3)))
        params = ae.decoder.parameters()
        assert grad_check(lambda: mean(decode(ae, z)), params, step=1e-5) <= 1e-5

    def test_reconstruction_objective_gradient_check(self):
        aes = [_tiny_ae(0, 4, 3, (5,), seed=1), _tiny_ae(1, 3, 3, (5,), seed=2)]
        rng = np.random.default_rng(4)
        batch = [Tensor(rng.uniform(0, 1, size=(5, 4))),
                 Tensor(rng.uniform(0, 1, size=(5, 3)))]
        params = [p for ae in aes for p in ae.parameters()]
        err = grad_check(lambda: reconstruction_loss(aes, batch), params, step=1e-5)
        assert err <= 1e-4


class TestReconstructionLoss:
    def test_perfect_reconstruction_is_zero(self):
        ae = _identity_ae(3)
        x = Tensor(np.random.default_rng(5).normal(size=(6, 3)))
        assert reconstruction_loss([ae], [x]).item() == 0.0

    def test_unit_error_single_view(self):
        ae = _identity_ae(2)
        ae.decoder.weights[0].values[...] = 0.0  # reconstructions all zero
        loss = reconstruction_loss([ae], [Tensor([[1.0, 0.0]])])
        assert loss.item() == 1.0

    def test_matches_per_element_oracle(self):
        aes = [_tiny_ae(0, 4, 2, (6,), seed=7), _tiny_ae(1, 6, 2, (6,), seed=8)]
        rng = np.random.default_rng(9)
        batch = [Tensor(rng.uniform(0, 1, size=(4, 4))),
                 Tensor(rng.uniform(0, 1, size=(4, 6)))]
        loss = reconstruction_loss(aes, batch).item()
        expected = 0.0
        for ae, x in zip(aes, batch):
            xhat = decode(ae, encode(ae, x)).values
            expected += float(((x.values - xhat) ** 2).sum())
        assert abs(loss - expected) <= 1e-10 * max(1.0, abs(expected))

    def test_nonnegative_and_zero_only_when_perfect(self):
        aes = [_tiny_ae(0, 3, 2, (4,), seed=10)]
        x = [Tensor(np.random.default_rng(11).uniform(0, 1, size=(5, 3)))]
        assert reconstruction_loss(aes, x).item() > 0.0

    def test_invariant_to_sample_order(self):
        ae = _tiny_ae(0, 4, 2, (5,), seed=12)
        rng = np.random.default_rng(13)
        x = rng.uniform(0, 1, size=(6, 4))
        perm = rng.permutation(6)
        a = reconstruction_loss([ae], [Tensor(x)]).item()
        b = reconstruction_loss([ae], [Tensor(x[perm])]).item()
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    def test_view_count_mismatch_rejected(self):
        ae = _tiny_ae()
        with pytest.raises(ShapeError):
            reconstruction_loss([ae], [Tensor(np.ones((2, 5))), Tensor(np.ones((2, 5)))])
