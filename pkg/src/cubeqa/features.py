"""Quality representations computed from feature maps.

Full-reference vectors compare a reference and a distorted map channel by
channel: a texture term built from the global means and a structure term
built from the global (co)variances, concatenated as ``[texture | structure]``.
No-reference vectors are the global average of each channel.

All statistics use the population convention (divide by H*W).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class SimilarityConstants:
    gamma1: float = 1e-6
    gamma2: float = 1e-6

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("similarity constants must be strictly positive")


@dataclass(frozen=True, eq=False)
class QualityFeatureVector:
    values: np.ndarray
    mode: str  # "FR" or "NR"
    role: str = "c"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if self.mode not in ("FR", "NR"):
            raise ValueError(f"mode must be FR or NR, got {self.mode!r}")
        if self.mode == "FR" and v.size % 2:
            raise ValueError("FR vectors have even length 2C")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def channels(self):
        return len(self) // 2 if self.mode == "FR" else len(self)


def _flat(fm):
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeMismatch(f"feature map must be (H, W, C), got shape {fm.shape}")
    return fm.reshape(-1, fm.shape[2])


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"feature map shapes differ: {np.shape(a)} vs {np.shape(b)}")
    return _flat(a), _flat(b)


def channel_statistics(fm):
    """Per-channel spatial mean and population variance."""
    x = _flat(fm)
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return mu, var


def texture_similarity(a, b, k=SimilarityConstants()):
    x, y = _check_pair(a, b)
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    return (2 * mx * my + k.gamma1) / (mx * mx + my * my + k.gamma1)


def structure_similarity(a, b, k=SimilarityConstants()):
    x, y = _check_pair(a, b)
    dx = x - x.mean(axis=0)
    dy = y - y.mean(axis=0)
    cov = (dx * dy).mean(axis=0)
    vx = (dx * dx).mean(axis=0)
    vy = (dy * dy).mean(axis=0)
    return (2 * cov + k.gamma2) / (vx + vy + k.gamma2)


def fr_quality_vector(ref, dist, k=SimilarityConstants(), role="c") -> QualityFeatureVector:
    alpha = texture_similarity(ref, dist, k)
    beta = structure_similarity(ref, dist, k)
    return QualityFeatureVector(np.concatenate([alpha, beta]), "FR", role)


def nr_quality_vector(dist, role="c") -> QualityFeatureVector:
    return QualityFeatureVector(_flat(dist).mean(axis=0), "NR", role)
