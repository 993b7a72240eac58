"""Stochastic generative diffusion fusion.

Per-view latents are concatenated into a per-sample condition vector; B
reverse-diffusion chains start from independent Gaussian noise conditioned on
it, walk an accelerated K-point time grid, and their final states are averaged
into the fused representation.  All randomness lives in the chain
initializations: chain b of a sampler seeded s draws from the counter-based
stream keyed (s + b, sample_key), so a one-chain sampler seeded s + b
reproduces it exactly, and parallel evaluation cannot change results.

The printed single-step update coefficients (beta = abar_s/abar_t,
sigma^2 = (1-abar_s)/(1-abar_t), gamma = 1 - beta - sigma^2) give gamma < 0
for every decreasing time pair under the sqrt schedule, so gamma has no real
square root.  Two step modes are provided:

* ``ddim-x0`` (default): the network output is read as the predicted clean
  signal; the implied noise is removed and the state re-noised at the target
  level.  Deterministic given the initialization, trainable end-to-end.
* ``literal-clamped``: the two-coefficient combination exactly as written,
  with negative radicands clamped to zero (which in practice zeroes the
  network term).  Kept for fidelity experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, add, concat, scale, sub
from .layers import Mlp, seeded_rng

MODES = ("ddim-x0", "literal-clamped")

ALPHA_FLOOR = 1e-6


@dataclass
class NoiseSchedule:
    """Precomputed sqrt-schedule table abar_t = 1 - sqrt(t/T + 1e-4), clamped."""

    total_steps: int
    alpha_bar: np.ndarray
    epsilon_floor: float = ALPHA_FLOOR


def sqrt_noise_schedule(total_steps):
    if total_steps < 2:
        raise ValueError("sqrt_noise_schedule: need total_steps >= 2")
    t = np.arange(total_steps, dtype=np.float64)
    table = 1.0 - np.sqrt(t / total_steps + 1e-4)
    table = np.clip(table, ALPHA_FLOOR, 1.0)
    return NoiseSchedule(total_steps=int(total_steps), alpha_bar=table)


def alpha_bar(schedule, t):
    """Signal-retention coefficient at integer time t in [0, T-1]."""
    if not 0 <= t <= schedule.total_steps - 1:
        raise ValueError(
            f"alpha_bar: t={t} outside [0, {schedule.total_steps - 1}]")
    return float(schedule.alpha_bar[int(t)])


@dataclass
class TimeGrid:
    """Strictly decreasing integer sampling times from T-1 down to 0."""

    n_points: int
    times: list


def make_grid(total_steps, n_points):
    """K evenly spaced (floored) times tau_k = floor(T-1 - k*(T-1)/(K-1)).

    Evaluated in exact integer arithmetic: floor(a - p/q) = a - ceil(p/q),
    so large T cannot suffer float rounding at the endpoints.
    """
    if n_points < 2:
        raise ValueError("make_grid: need at least 2 grid points")
    if total_steps < 2 or n_points > total_steps:
        raise ValueError(
            f"make_grid: need 2 <= K <= T, got T={total_steps}, K={n_points}")
    span, q = int(total_steps) - 1, int(n_points) - 1
    times = [span - (k * span + q - 1) // q for k in range(n_points)]
    for a, b in zip(times, times[1:]):
        if b >= a:
            raise ValueError(f"make_grid: duplicate time after flooring ({times})")
    return TimeGrid(n_points=int(n_points), times=times)


class Denoiser:
    """Conditional MLP mapping (state, condition) to a fused-width output."""

    def __init__(self, fused_dim, cond_dim, hidden=(256, 256), seed=0):
        self.fused_dim = int(fused_dim)
        self.cond_dim = int(cond_dim)
        self.net = Mlp([fused_dim + cond_dim, *hidden, fused_dim],
                       seed=seed, salt=200, name="denoiser")

    def __call__(self, state, condition):
        return self.net(concat([state, condition], axis=1))

    def parameters(self):
        return self.net.parameters()


@dataclass
class SamplerConfig:
    n_chains: int = 4
    grid: TimeGrid = field(default_factory=lambda: make_grid(1000, 5))
    mode: str = "ddim-x0"
    seed: int = 0

    def validate(self):
        if self.n_chains < 1:
            raise ValueError("SamplerConfig: n_chains must be >= 1")
        if self.grid.n_points < 2:
            raise ValueError("SamplerConfig: grid needs at least 2 points")
        if self.mode not in MODES:
            raise ValueError(f"SamplerConfig: mode must be one of {MODES}")
        return self


def build_condition(latents):
    """Row-wise concatenation of per-view latents, each view once, in order."""
    if not latents:
        raise ShapeError("build_condition", detail="no views")
    rows = {t.values.shape[0] for t in latents}
    if len(rows) != 1:
        raise ShapeError("build_condition", *[t.values.shape for t in latents],
                         detail="row counts differ")
    if len(latents) == 1:
        return latents[0]
    return concat(latents, axis=1)


def denoise_step(state, condition, u, v, denoiser, schedule, mode="ddim-x0"):
    """One reverse step from time u to time v (v < u, or u = v = 0).

    At u = 0 the chain is finished: the state passes through untouched and
    the denoiser is never invoked.  Otherwise the network prediction is
    combined with the state per the configured mode.  Differentiable w.r.t.
    state, condition and denoiser parameters.
    """
    if not (v < u or (u == 0 and v == 0)):
        raise ValueError(f"denoise_step: need v < u or u = v = 0, got u={u}, v={v}")
    if u == 0:
        return state
    a_u = alpha_bar(schedule, u)
    a_v = alpha_bar(schedule, v)
    z_p = denoiser(state, condition)
    if mode == "ddim-x0":
        # z_p is the predicted clean signal; strip the implied noise and
        # re-noise at the target level
        eps_hat = scale(sub(state, scale(z_p, math.sqrt(a_u))),
                        1.0 / math.sqrt(1.0 - a_u))
        return add(scale(z_p, math.sqrt(a_v)), scale(eps_hat, math.sqrt(1.0 - a_v)))
    if mode == "literal-clamped":
        beta = a_v / a_u
        sigma_sq = (1.0 - a_v) / (1.0 - a_u)
        gamma = 1.0 - beta - sigma_sq
        return add(scale(state, math.sqrt(max(beta, 0.0))),
                   scale(z_p, math.sqrt(max(gamma, 0.0))))
    raise ValueError(f"denoise_step: unknown mode {mode!r}")


# keeps noise streams disjoint from the (seed, small-salt) streams used for
# parameter init, shuffling and k-means
_NOISE_KEY_BASE = 0x10000000


def chain_noise(seed, chain, sample_keys, dim):
    """Standard-normal initial states, one row per sample key."""
    rows = [seeded_rng(int(seed) + int(chain), _NOISE_KEY_BASE + int(k)).standard_normal(dim)
            for k in sample_keys]
    return np.asarray(rows, dtype=np.float64)


def fuse(latents, denoiser, schedule, config, sample_keys=None):
    """Average of B conditioned reverse-diffusion chains, one row per sample.

    ``sample_keys`` ties each row's noise streams to a stable identity
    (defaults to row position); rows are processed independently, so
    permuting rows and keys together permutes the output exactly.
    """
    config.validate()
    cond = build_condition(latents)
    n = cond.values.shape[0]
    if sample_keys is None:
        sample_keys = np.arange(n)
    if len(sample_keys) != n:
        raise ShapeError("fuse", (len(sample_keys),), (n,),
                         detail="one key per row required")
    times = config.grid.times
    acc = None
    for b in range(config.n_chains):
        state = Tensor(chain_noise(config.seed, b, sample_keys, denoiser.fused_dim))
        for k in range(1, len(times)):
            state = denoise_step(state, cond, times[k - 1], times[k],
                                 denoiser, schedule, mode=config.mode)
        acc = state if acc is None else add(acc, state)
    return scale(acc, 1.0 / config.n_chains)
