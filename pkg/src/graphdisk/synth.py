"""Seeded synthetic corpora: clustered data living near a low-dimensional subspace."""

from __future__ import annotations

import numpy as np

from .vecio import VectorDataset, make_dataset


def clustered(n: int, dims: int, n_queries: int = 0, clusters: int = 64, latent: int = 24,
              spread: float = 0.35, noise: float = 0.05, metric: str = "L2", seed: int = 0):
    """Gaussian-mixture points in a `latent`-dim space, linearly embedded in `dims`.

    Returns (base, queries); queries are fresh draws from the same mixture.
    """
    rng = np.random.default_rng(seed)
    latent = min(latent, dims)
    centers = rng.normal(size=(clusters, latent))
    basis = rng.normal(size=(latent, dims)) / np.sqrt(latent)
    total = n + n_queries
    z = centers[rng.integers(clusters, size=total)] + spread * rng.normal(size=(total, latent))
    x = z @ basis + noise * rng.normal(size=(total, dims))
    x = x.astype(np.float32)
    base = make_dataset(x[:n], metric)
    queries = make_dataset(x[n:], metric) if n_queries else None
    return base, queries


def as_u8(ds: VectorDataset) -> VectorDataset:
    lo, hi = ds.data.min(), ds.data.max()
    scaled = np.round((ds.data - lo) / (hi - lo) * 255).astype(np.uint8)
    return VectorDataset(scaled, "u8", ds.metric)
