"""Images as sets of feature points on a normalized grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError


def grid_positions(height, width, dtype=np.float32):
    """Normalized (x, y) coordinates of every pixel centre, raster order.

    Pixel (i, j) sits at ``((j + 0.5)/width - 0.5, (i + 0.5)/height - 0.5)``.
    """
    if height < 1 or width < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {height}x{width}")
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width - 0.5
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1).astype(dtype)


@dataclass
class PointSet:
    """A batch of point sets sharing one grid.

    ``features`` is a (batch, n, d) tensor (or array); ``grid`` is
    (height, width) with ``height * width == n``. Positions are derived from
    the grid on demand and never stored with the features.
    """

    features: object
    grid: tuple

    def __post_init__(self):
        h, w = self.grid
        n = self.features.shape[-2]
        if h * w != n:
            raise ContractError(f"grid {h}x{w} does not hold {n} points")
        self.grid = (int(h), int(w))

    @property
    def n(self):
        return self.grid[0] * self.grid[1]

    @property
    def d(self):
        return self.features.shape[-1]

    def positions(self, dtype=np.float32):
        return grid_positions(*self.grid, dtype=dtype)


def image_to_points(images):
    """(batch, h, w, ch) or (h, w, ch) pixel array -> PointSet array form.

    Returns a PointSet whose features are a plain array of shape
    (batch, h*w, ch); a single image gets a batch axis of 1.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4:
        raise ContractError(f"expected (batch, h, w, ch) images, got shape {images.shape}")
    b, h, w, ch = images.shape
    return PointSet(images.reshape(b, h * w, ch), (h, w))


def points_to_image(ps, channels=None):
    """Inverse of :func:`image_to_points`: (batch, h, w, ch) array."""
    feats = np.asarray(getattr(ps.features, "data", ps.features))
    if channels is not None and feats.shape[-1] != channels:
        raise ContractError(f"point set has {feats.shape[-1]} channels, expected {channels}")
    h, w = ps.grid
    return feats.reshape(feats.shape[0], h, w, feats.shape[-1])
