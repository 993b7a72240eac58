"""Per-view autoencoders: encoders to latent space, decoders back, squared
reconstruction error summed over views and samples."""

from __future__ import annotations

from .autodiff import ShapeError, add, sub, sum_sq
from .layers import Mlp


class ViewAutoencoder:
    """Encoder D_m -> hidden -> d_m and mirrored decoder for one view.

    Hidden layers use relu, final layers are linear.  All views share the
    latent width so the fusion condition is a plain concatenation.
    """

    def __init__(self, view_index, input_dim, latent_dim=64, hidden=(500, 500), seed=0):
        self.view_index = int(view_index)
        self.input_dim = int(input_dim)
        self.latent_dim = int(latent_dim)
        self.encoder = Mlp([input_dim, *hidden, latent_dim],
                           seed=seed, salt=100 + 2 * view_index,
                           name=f"ae{view_index}.enc")
        self.decoder = Mlp([latent_dim, *reversed(hidden), input_dim],
                           seed=seed, salt=101 + 2 * view_index,
                           name=f"ae{view_index}.dec")

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


def encode(ae, batch):
    """Latent embeddings for a (n, D_m) batch."""
    if batch.values.ndim != 2 or batch.values.shape[1] != ae.input_dim:
        raise ShapeError("encode", batch.values.shape,
                         detail=f"view {ae.view_index} expects (n, {ae.input_dim})")
    return ae.encoder(batch)


def decode(ae, latents):
    """Reconstructions for a (n, d_m) latent batch."""
    if latents.values.ndim != 2 or latents.values.shape[1] != ae.latent_dim:
        raise ShapeError("decode", latents.values.shape,
                         detail=f"view {ae.view_index} expects (n, {ae.latent_dim})")
    return ae.decoder(latents)


def reconstruction_loss(aes, view_batches):
    """Sum over views and samples of squared reconstruction error.

    This is the raw (unaveraged) objective; the trainer rescales per batch.
    """
    if len(aes) != len(view_batches):
        raise ShapeError("reconstruction_loss",
                         detail=f"{len(aes)} autoencoders, {len(view_batches)} views")
    total = None
    for ae, x in zip(aes, view_batches):
        xhat = decode(ae, encode(ae, x))
        term = sum_sq(sub(x, xhat))
        total = term if total is None else add(total, term)
    return total
