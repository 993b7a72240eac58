"""Linear parameter stacks shared by the encoders, decoders, denoiser and heads."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, add, matmul, param, relu


def seeded_rng(*key):
    """Counter-based generator keyed by one or two integers (order matters).

    Distinct keys give independent Philox streams, so draws cannot shift when
    unrelated code consumes randomness.
    """
    k = [int(x) & 0xFFFFFFFFFFFFFFFF for x in key]
    if not 1 <= len(k) <= 2:
        raise ValueError("seeded_rng: key must be 1 or 2 integers")
    while len(k) < 2:
        k.append(0)
    return np.random.Generator(np.random.Philox(key=k))


def glorot_uniform(rng, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class Mlp:
    """Fully connected stack: relu on hidden layers, linear output.

    Weights are Glorot-uniform from a seeded stream, biases start at zero,
    so construction is reproducible from (seed, salt).
    """

    def __init__(self, sizes, seed=0, salt=0, name="mlp"):
        if len(sizes) < 2:
            raise ValueError("Mlp: need at least input and output sizes")
        self.sizes = list(int(s) for s in sizes)
        self.name = name
        rng = seeded_rng(seed, salt)
        self.weights = []
        self.biases = []
        for i, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.weights.append(param(glorot_uniform(rng, fi, fo), name=f"{name}.w{i}"))
            self.biases.append(param(np.zeros((1, fo)), name=f"{name}.b{i}"))

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def __call__(self, x):
        if x.values.ndim != 2 or x.values.shape[1] != self.in_dim:
            raise ShapeError(self.name, x.values.shape,
                             detail=f"expected (n, {self.in_dim})")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                h = relu(h)
        return h

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out
