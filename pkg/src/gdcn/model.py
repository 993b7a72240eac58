"""Bundles the per-view autoencoders, denoiser and projection heads, with
bit-exact checkpointing."""

from __future__ import annotations

import json
import os

import numpy as np

from .autoencoder import ViewAutoencoder, encode
from .autodiff import Tensor
from .contrastive import ProjectionHeads
from .sgdf import Denoiser, build_condition, fuse

FUSION_MODES = ("sgdf", "concat")


class GDCNModel:
    """All trainable pieces of the pipeline for one dataset shape.

    ``fusion="concat"`` drops the denoiser and uses the raw condition vector
    as the fused representation (the diffusion-free ablation).
    """

    def __init__(self, view_dims, latent_dim=64, encoder_hidden=(500, 500),
                 denoiser_hidden=(256, 256), h_dim=128, fusion="sgdf", seed=0):
        if fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        self.view_dims = [int(d) for d in view_dims]
        self.latent_dim = int(latent_dim)
        self.encoder_hidden = tuple(int(h) for h in encoder_hidden)
        self.denoiser_hidden = tuple(int(h) for h in denoiser_hidden)
        self.h_dim = int(h_dim)
        self.fusion = fusion
        self.seed = int(seed)

        m = len(self.view_dims)
        self.aes = [
            ViewAutoencoder(i, d, latent_dim=self.latent_dim,
                            hidden=self.encoder_hidden, seed=self.seed)
            for i, d in enumerate(self.view_dims)
        ]
        cond_dim = m * self.latent_dim
        self.fused_dim = self.latent_dim if fusion == "sgdf" else cond_dim
        self.denoiser = (
            Denoiser(self.latent_dim, cond_dim, hidden=self.denoiser_hidden,
                     seed=self.seed)
            if fusion == "sgdf" else None
        )
        self.heads = ProjectionHeads(self.fused_dim, [self.latent_dim] * m,
                                     h_dim=self.h_dim, seed=self.seed)

    @property
    def n_views(self):
        return len(self.view_dims)

    def encode_views(self, views):
        """Per-view latent batches; accepts Tensors or plain arrays."""
        ts = [v if isinstance(v, Tensor) else Tensor(v) for v in views]
        return [encode(ae, t) for ae, t in zip(self.aes, ts)]

    def fuse_latents(self, latents, schedule=None, sampler=None, sample_keys=None):
        """Fused per-sample representation under the configured fusion mode."""
        if self.fusion == "concat":
            return build_condition(latents)
        if schedule is None or sampler is None:
            raise ValueError("sgdf fusion needs a schedule and sampler config")
        return fuse(latents, self.denoiser, schedule, sampler, sample_keys=sample_keys)

    def parameters(self, groups=("autoencoders", "denoiser", "heads")):
        out = []
        if "autoencoders" in groups:
            for ae in self.aes:
                out += ae.parameters()
        if "denoiser" in groups and self.denoiser is not None:
            out += self.denoiser.parameters()
        if "heads" in groups:
            out += self.heads.parameters()
        return out

    # -- checkpointing ------------------------------------------------------
    # A checkpoint is a .npz archive holding every named parameter as a raw
    # float64 array plus a JSON metadata entry; float64 buffers round-trip
    # bit-exactly.

    def _meta(self):
        return {
            "view_dims": self.view_dims,
            "latent_dim": self.latent_dim,
            "encoder_hidden": list(self.encoder_hidden),
            "denoiser_hidden": list(self.denoiser_hidden),
            "h_dim": self.h_dim,
            "fusion": self.fusion,
            "seed": self.seed,
        }

    def save(self, path):
        arrays = {p.name: p.values for p in self.parameters()}
        arrays["__meta__"] = np.frombuffer(
            json.dumps(self._meta(), sort_keys=True).encode(), dtype=np.uint8)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path):
        with np.load(path) as archive:
            meta = json.loads(bytes(archive["__meta__"]).decode())
            model = cls(
                meta["view_dims"], latent_dim=meta["latent_dim"],
                encoder_hidden=meta["encoder_hidden"],
                denoiser_hidden=meta["denoiser_hidden"], h_dim=meta["h_dim"],
                fusion=meta["fusion"], seed=meta["seed"],
            )
            for p in model.parameters():
                stored = archive[p.name]
                if stored.shape != p.values.shape:
                    raise ValueError(
                        f"checkpoint {path}: parameter {p.name} has shape "
                        f"{stored.shape}, expected {p.values.shape}")
                p.values[...] = stored
        return model
