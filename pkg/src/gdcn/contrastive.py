"""Projection heads and the structure-weighted contrastive alignment loss.

Projections are L2-row-normalized, which turns every cosine below into a
plain dot product.  The pairwise sample similarity S is computed from the
fused projections and held constant during differentiation; it rescales the
negative terms so that samples the fused view already considers close are
pushed apart less.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError, Tensor, add, add_scalar, cosine_sim, exp, log,
    maximum_scalar, mul, normalize_rows, row_sum, scale, sub, sum_all,
)
from .layers import Mlp

DENOMINATOR_FLOOR = 1e-12


@dataclass
class ContrastiveConfig:
    temperature: float = 0.5
    similarity_detached: bool = True  # provenance; S never carries gradients

    def validate(self):
        if self.temperature <= 0:
            raise ValueError("ContrastiveConfig: temperature must be positive")
        return self


class ProjectionHeads:
    """One linear head per source, all mapping into a shared width h_dim."""

    def __init__(self, fused_dim, view_dims, h_dim=128, seed=0):
        self.h_dim = int(h_dim)
        self.fused_head = Mlp([fused_dim, h_dim], seed=seed, salt=300, name="head.fused")
        self.view_heads = [
            Mlp([d, h_dim], seed=seed, salt=301 + m, name=f"head.view{m}")
            for m, d in enumerate(view_dims)
        ]

    def parameters(self):
        out = self.fused_head.parameters()
        for h in self.view_heads:
            out += h.parameters()
        return out


def project(heads, fused, latents):
    """Project fused and per-view representations; rows come out unit-norm."""
    if len(latents) != len(heads.view_heads):
        raise ShapeError("project", detail=(
            f"{len(latents)} views for {len(heads.view_heads)} heads"))
    hhat = normalize_rows(heads.fused_head(fused))
    views = [normalize_rows(h(z)) for h, z in zip(heads.view_heads, latents)]
    return hhat, views


def compute_similarity(hhat):
    """Scaled cosine similarity (1 + cos)/2 in [0, 1], zero diagonal.

    Takes row-normalized fused projections; returns a plain array that is
    treated as a constant during differentiation.
    """
    h = hhat.values if isinstance(hhat, Tensor) else np.asarray(hhat, dtype=np.float64)
    s = (1.0 + h @ h.T) / 2.0
    np.fill_diagonal(s, 0.0)
    return s


def contrastive_loss(hhat, view_projections, similarity, config):
    """Alignment loss between the fused projection and every view projection.

    For each sample and view, the positive pair is the sample with itself
    across the two sources; every other sample contributes a negative whose
    exponent is damped by (1 - S_ij).  The denominator subtracts e^{1/tau}
    and can go non-positive early in training, so it is clamped at 1e-12
    before the log.
    """
    config.validate()
    n = hhat.values.shape[0]
    if n < 2:
        raise ValueError("contrastive_loss: need at least 2 samples "
                         "(the denominator degenerates for n = 1)")
    if similarity.shape != (n, n):
        raise ShapeError("contrastive_loss", similarity.shape, (n, n))
    tau = config.temperature
    eye = Tensor(np.eye(n))
    damping = Tensor((1.0 - similarity) / tau)
    offset = -math.exp(1.0 / tau)

    total = None
    for h_m in view_projections:
        cos = cosine_sim(hhat, h_m)                      # (n, n) pairwise
        pos = row_sum(mul(cos, eye))                     # (n, 1) diagonal
        denom = add_scalar(row_sum(exp(mul(cos, damping))), offset)
        denom = maximum_scalar(denom, DENOMINATOR_FLOOR)
        terms = sub(scale(pos, 1.0 / tau), log(denom))
        total = terms if total is None else add(total, terms)
    return scale(sum_all(total), -1.0 / (2.0 * n))
