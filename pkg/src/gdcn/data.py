"""Multi-view dataset loading, synthesis, normalization and corruption.

On-disk layout of a dataset directory:

* ``manifest.json`` -- keys ``name`` (str), ``n_samples``, ``n_views``,
  ``n_clusters`` (ints), ``view_dims`` (int array), ``has_labels`` (bool)
* ``view_<m>.csv``  -- n_samples rows of D_m comma-separated decimals, no header
* ``labels.csv``    -- n_samples rows of one non-negative integer (optional)

Features are min-max normalized per column to [0, 1] at load time; constant
columns map to 0.  Datasets are immutable after load and safe to share.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .layers import seeded_rng


class DataFormatError(ValueError):
    """Malformed dataset directory; message carries file (and line) context."""


@dataclass
class MultiViewDataset:
    name: str
    n_samples: int
    n_views: int
    view_dims: list
    views: list
    labels: object = None  # optional (n_samples,) int array
    n_clusters: int = 1

    def validate(self):
        if len(self.views) != self.n_views or len(self.view_dims) != self.n_views:
            raise DataFormatError(
                f"{self.name}: expected {self.n_views} views, "
                f"got {len(self.views)} matrices / {len(self.view_dims)} dims")
        for m, v in enumerate(self.views):
            want = (self.n_samples, self.view_dims[m])
            if v.shape != want:
                raise DataFormatError(
                    f"{self.name}: view {m} has shape {v.shape}, expected {want}")
            if not np.isfinite(v).all():
                raise DataFormatError(f"{self.name}: view {m} contains non-finite values")
        if self.labels is not None:
            if len(self.labels) != self.n_samples:
                raise DataFormatError(
                    f"{self.name}: {len(self.labels)} labels for {self.n_samples} samples")
            if self.labels.min() < 0 or self.labels.max() >= self.n_clusters:
                raise DataFormatError(
                    f"{self.name}: labels outside [0, {self.n_clusters})")
        return self


@dataclass
class CorruptionSpec:
    """Cell-level corruption; a cell is one (sample, view) feature vector."""

    noise_sigma: float = 0.0
    noise_fraction: float = 0.0
    missing_fraction: float = 0.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        if not 0.0 <= self.missing_fraction <= 1.0:
            raise ValueError("missing_fraction must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        return self


def minmax_normalize(ds):
    """Map each feature column to [0, 1]; constant columns map to 0."""
    views = []
    for v in ds.views:
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        span = hi - lo
        out = np.zeros_like(v)
        live = span > 0
        out[:, live] = (v[:, live] - lo[live]) / span[live]
        views.append(out)
    return replace(ds, views=views).validate()


def _read_matrix(path, expected_cols=None):
    if not os.path.isfile(path):
        raise DataFormatError(f"{path}: file not found")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = np.array(line.split(","), dtype=np.float64)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
            if expected_cols is not None and row.size != expected_cols:
                raise DataFormatError(
                    f"{path}:{lineno}: {row.size} columns, expected {expected_cols}")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return np.vstack(rows)


def load_dataset(path):
    """Read, validate and min-max normalize a dataset directory."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DataFormatError(f"{manifest_path}: file not found")
    with open(manifest_path) as fh:
        try:
            man = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{manifest_path}: invalid JSON ({e})") from None
    for key in ("name", "n_samples", "n_views", "n_clusters", "view_dims", "has_labels"):
        if key not in man:
            raise DataFormatError(f"{manifest_path}: missing key {key!r}")
    n, m = int(man["n_samples"]), int(man["n_views"])
    dims = [int(d) for d in man["view_dims"]]
    if len(dims) != m:
        raise DataFormatError(f"{manifest_path}: view_dims length != n_views")

    views = []
    for i in range(m):
        vp = os.path.join(path, f"view_{i}.csv")
        mat = _read_matrix(vp, expected_cols=dims[i])
        if mat.shape[0] != n:
            raise DataFormatError(f"{vp}: {mat.shape[0]} rows, manifest says {n}")
        views.append(mat)

    labels = None
    if man["has_labels"]:
        lp = os.path.join(path, "labels.csv")
        if not os.path.isfile(lp):
            raise DataFormatError(f"{lp}: file not found")
        raw = []
        with open(lp) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    lab = int(line)
                except ValueError:
                    raise DataFormatError(f"{lp}:{lineno}: non-integer label") from None
                if not 0 <= lab < int(man["n_clusters"]):
                    raise DataFormatError(
                        f"{lp}:{lineno}: label {lab} outside [0, {man['n_clusters']})")
                raw.append(lab)
        if len(raw) != n:
            raise DataFormatError(f"{lp}: {len(raw)} labels, manifest says {n}")
        labels = np.array(raw, dtype=np.int64)

    ds = MultiViewDataset(
        name=str(man["name"]), n_samples=n, n_views=m, view_dims=dims,
        views=views, labels=labels, n_clusters=int(man["n_clusters"]),
    ).validate()
    return minmax_normalize(ds)


def save_dataset(ds, path):
    """Write a dataset directory in the documented manifest + CSV layout."""
    os.makedirs(path, exist_ok=True)
    man = {
        "name": ds.name,
        "n_samples": ds.n_samples,
        "n_views": ds.n_views,
        "n_clusters": ds.n_clusters,
        "view_dims": list(ds.view_dims),
        "has_labels": ds.labels is not None,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for i, v in enumerate(ds.views):
        np.savetxt(os.path.join(path, f"view_{i}.csv"), v, fmt="%.17g", delimiter=",")
    if ds.labels is not None:
        np.savetxt(os.path.join(path, "labels.csv"), ds.labels, fmt="%d")
    return path


def generate_synthetic(n_clusters, per_cluster, view_dims, separation=6.0, seed=0,
                       name="synthetic"):
    """Gaussian blobs sharing cluster identity across views.

    Each sample draws a latent code around its cluster center; every view
    applies its own random linear map of that code and adds unit noise, so
    the views carry correlated but not identical evidence.
    """
    if n_clusters < 1 or per_cluster < 1 or any(d < 1 for d in view_dims):
        raise ValueError("generate_synthetic: counts must be >= 1")
    if separation <= 0:
        raise ValueError("generate_synthetic: separation must be positive")
    k = int(n_clusters)
    n = k * int(per_cluster)
    q = max(2, k)
    rng = seeded_rng(seed, 0xDA7A)
    # regular simplex under a random rotation: every pair of cluster centers
    # sits exactly `separation` apart regardless of the seed
    simplex = np.eye(k, q)
    simplex -= simplex.mean(axis=0)
    edge = np.linalg.norm(simplex[0] - simplex[1]) if k > 1 else 1.0
    rotation, _ = np.linalg.qr(rng.normal(size=(q, q)))
    centers = (simplex / edge * float(separation)) @ rotation.T
    labels = np.repeat(np.arange(k), per_cluster)
    latents = centers[labels] + rng.normal(size=(n, q))
    views = []
    for d in view_dims:
        d = int(d)
        # random partial isometry: preserves latent geometry up to the view
        # width, so separation survives the per-view map
        g = rng.normal(size=(max(q, d), min(q, d)))
        basis, _ = np.linalg.qr(g)
        a = basis if d <= q else basis.T
        views.append(latents @ a + rng.normal(size=(n, d)))
    return MultiViewDataset(
        name=name, n_samples=n, n_views=len(view_dims),
        view_dims=[int(d) for d in view_dims], views=views,
        labels=labels.astype(np.int64), n_clusters=k,
    ).validate()


def corrupt(ds, spec):
    """Perturb and/or zero-mask a fixed fraction of (sample, view) cells.

    Pure given the seed: exactly floor(f * N * M) cells are selected per
    mechanism, noise is applied before masking, labels stay untouched and
    the input dataset is not modified.
    """
    spec.validate()
    n, m = ds.n_samples, ds.n_views
    views = [v.copy() for v in ds.views]

    n_noise = int(spec.noise_fraction * n * m)
    noise_rng = seeded_rng(spec.seed, 0x4015E)
    chosen = np.sort(noise_rng.permutation(n * m)[:n_noise])
    for cell in chosen:
        i, v = divmod(int(cell), m)
        views[v][i, :] += noise_rng.normal(size=ds.view_dims[v]) * spec.noise_sigma

    n_miss = int(spec.missing_fraction * n * m)
    miss_rng = seeded_rng(spec.seed, 0x30155)
    chosen = np.sort(miss_rng.permutation(n * m)[:n_miss])
    for cell in chosen:
        i, v = divmod(int(cell), m)
        views[v][i, :] = 0.0

    labels = None if ds.labels is None else ds.labels.copy()
    return replace(ds, views=views, labels=labels).validate()
