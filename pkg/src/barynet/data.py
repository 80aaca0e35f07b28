"""Synthetic generators. All draw from numpy's PCG64 stream seeded by ``seed``."""
from __future__ import annotations

import numpy as np

from .objectives import LabeledSample

MIXTURE_VAR = 0.1


def gen_mixture(seed: int, N: int, z=None) -> LabeledSample:
    """Two-component Gaussian mixture whose means ``+-((z+1)/2, -(z+1)/2)`` spread with z.

    ``z`` defaults to uniform draws on [-1, 1]; a scalar pins every label.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    zs = rng.uniform(-1.0, 1.0, N) if z is None else np.full(N, float(z))
    a = (zs + 1.0) / 2.0
    sign = np.where(rng.random(N) < 0.5, 1.0, -1.0)
    means = np.stack([sign * a, -sign * a], axis=1)
    xs = means + np.sqrt(MIXTURE_VAR) * rng.standard_normal((N, 2))
    return LabeledSample(xs, zs[:, None])


def default_centers(K: int, radius: float = 5.0) -> np.ndarray:
    """K points evenly spaced on a circle (a triangle for K = 3)."""
    ang = 2 * np.pi * np.arange(K) / K
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def gen_clusters(seed: int, K: int, centers=None, std: float = 0.3, N: int = 300):
    """Equal-weight isotropic blobs; returns ``(points, labels)``.

    Labels cycle through ``0..K-1`` before shuffling, so every cluster gets
    ``N // K`` or ``N // K + 1`` points.
    """
    if K < 1 or N < 1:
        raise ValueError("K and N must be positive")
    centers = default_centers(K) if centers is None else np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if len(centers) != K:
        raise ValueError("need one center per cluster")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(N) % K)
    pts = centers[labels] + std * rng.standard_normal((N, centers.shape[1]))
    return pts, labels


def latent_curve(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.stack([z, np.sin(np.pi * z)], axis=-1)


def gen_latent_curve(seed: int, N: int, d: int = 5, noise: float = 0.05):
    """Points ``(z*, sin(pi z*), 0, ...) + noise`` in R^d with hidden ``z* ~ U[-1, 1]``.

    Returns ``(points, z_star)``.
    """
    if N < 10:
        raise ValueError("N must be at least 10")
    if d < 2:
        raise ValueError("d must be at least 2")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, N)
    x = np.zeros((N, d))
    x[:, :2] = latent_curve(z)
    x += noise * rng.standard_normal((N, d))
    return x, z


def palette_image(seed: int, palette, size: int = 64, jitter: float = 0.04) -> np.ndarray:
    """A ``size x size`` RGB image in [0,1] built from smooth blobs of the palette colors."""
    rng = np.random.default_rng(seed)
    palette = np.asarray(palette, dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size] / size
    centers = rng.random((len(palette), 2))
    dist = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
    weights = np.exp(-dist / 0.05)
    weights /= weights.sum(axis=-1, keepdims=True)
    img = weights @ palette + jitter * rng.standard_normal((size, size, 3))
    return np.clip(img, 0.0, 1.0)


PALETTES = (
    ((0.9, 0.3, 0.1), (0.95, 0.75, 0.2), (0.5, 0.1, 0.05)),   # warm
    ((0.1, 0.3, 0.8), (0.2, 0.7, 0.9), (0.05, 0.1, 0.35)),    # cool
    ((0.2, 0.6, 0.2), (0.7, 0.85, 0.3), (0.35, 0.25, 0.1)),   # earthy
)


def synthetic_images(seed: int = 0, size: int = 64) -> list:
    return [palette_image(seed + k, p, size) for k, p in enumerate(PALETTES)]
