"""Synthetic datasets for desk-scale training runs."""

from __future__ import annotations

import numpy as np

# 5x6 glyphs, one row per string.
_GLYPHS = {
    0: ["01110", "10001", "10001", "10001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00010", "00100", "01000", "11111"],
    3: ["11110", "00001", "00110", "00001", "00001", "11110"],
    4: ["00010", "00110", "01010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "11110"],
    6: ["00110", "01000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000"],
    8: ["01110", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00010", "01100"],
}


def digit_templates() -> np.ndarray:
    return np.array([[[float(ch) for ch in row] for row in _GLYPHS[d]] for d in range(10)])


def make_digits(n_samples: int = 1000, seed: int = 0, noise: float = 0.15, size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Digit-like images ``(n, 1, size, size)`` in [0, 1] with labels 0-9.

    Each sample is a glyph at a random offset, with random stroke intensity,
    random pixel dropout and additive Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    glyphs = digit_templates()
    gh, gw = glyphs.shape[1:]
    labels = np.arange(n_samples) % 10
    rng.shuffle(labels)
    x = np.zeros((n_samples, 1, size, size))
    for i, d in enumerate(labels):
        oy = rng.integers(0, size - gh + 1)
        ox = rng.integers(0, size - gw + 1)
        g = glyphs[d] * rng.uniform(0.6, 1.0)
        g = g * (rng.random(g.shape) > 0.1)
        x[i, 0, oy : oy + gh, ox : ox + gw] = g
    x += rng.normal(0.0, noise, size=x.shape)
    return np.clip(x, 0.0, 1.0), labels.astype(np.int64)


def make_separable(n_samples: int = 200, seed: int = 0, shape: tuple = (1, 6, 6), margin: float = 0.5
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Two classes split by a random hyperplane with a guaranteed margin."""
    rng = np.random.default_rng(seed)
    d = int(np.prod(shape))
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    x = rng.normal(size=(n_samples, d))
    labels = (np.arange(n_samples) % 2).astype(np.int64)
    proj = x @ w
    # push every point to its class side of the hyperplane, at least `margin` away
    target = np.where(labels == 1, 1.0, -1.0) * (margin + np.abs(proj))
    x += np.outer(target - proj, w)
    return x.reshape(n_samples, *shape), labels
