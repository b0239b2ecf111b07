"""Comparison codecs: top-k truncation, scalar quantization, PCA, and
segment-VQ without the encoder/decoder projections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import SoftLabelMatrix
from .vqae import (
    ModelValidationError,
    TrainConfig,
    VqaeModel,
    fit,
    renormalize,
    topk_select,
)


# ---------------------------------------------------------------------------
# Top-k: keep the largest k_top probabilities and their class indices.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopkArchive:
    values: np.ndarray        # n x k_top kept probabilities, rank order
    class_indices: np.ndarray  # n x k_top class ids
    num_classes: int

    @property
    def k_top(self) -> int:
        return self.values.shape[1]


def topk_compress(labels: SoftLabelMatrix, k_top: int) -> TopkArchive:
    values, classes = topk_select(labels.data, k_top)
    return TopkArchive(values, classes.astype(np.int64), labels.c)


def topk_decompress(archive: TopkArchive, epsilon: float = 1e-8) -> SoftLabelMatrix:
    full = np.zeros((archive.values.shape[0], archive.num_classes), dtype=np.float64)
    np.put_along_axis(full, archive.class_indices, archive.values, axis=1)
    return SoftLabelMatrix(renormalize(full, epsilon))


# ---------------------------------------------------------------------------
# Scalar quantization: 2^bits learned levels over all probability entries,
# fit with Lloyd-Max (1-D k-means, k-means++ seeding).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarQuantCodec:
    levels: np.ndarray   # strictly increasing

    def __post_init__(self):
        levels = np.ascontiguousarray(self.levels, dtype=np.float64)
        object.__setattr__(self, "levels", levels)
        if levels.ndim != 1 or levels.size < 1:
            raise ModelValidationError("levels must be a nonempty 1-D array")
        if np.any(np.diff(levels) <= 0):
            raise ModelValidationError("levels must be strictly increasing")

    @property
    def bits(self) -> int:
        return int(np.ceil(np.log2(self.levels.size))) if self.levels.size > 1 else 1


def _kmeanspp_1d(values, counts, k, rng):
    centers = [values[rng.choice(values.size, p=counts / counts.sum())]]
    for _ in range(1, k):
        d2 = np.min((values[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        w = d2 * counts
        if w.sum() == 0:
            centers.append(values[rng.choice(values.size)])
        else:
            centers.append(values[rng.choice(values.size, p=w / w.sum())])
    return np.array(centers)


def scalar_quant_fit(labels: SoftLabelMatrix, bits: int, seed: int = 0,
                     iterations: int = 100) -> ScalarQuantCodec:
    """Learn 2^bits quantization levels over all probability entries."""
    if not 1 <= bits <= 8:
        raise ModelValidationError(f"bits must be in 1..8, got {bits}")
    k = 2 ** bits
    flat = labels.data.reshape(-1)
    values, counts = np.unique(flat, return_counts=True)
    if values.size <= k:
        # degenerate data: every distinct value gets its own level; pad the
        # remainder above the max to keep the level list strictly increasing
        pad = values[-1] + np.arange(1, k - values.size + 1)
        return ScalarQuantCodec(np.concatenate([values, pad]))
    rng = np.random.default_rng(seed)
    centers = np.sort(_kmeanspp_1d(values, counts.astype(np.float64), k, rng))
    for _ in range(iterations):
        # nearest center per unique value (centers sorted: midpoint thresholds)
        edges = (centers[1:] + centers[:-1]) / 2
        assign = np.searchsorted(edges, values)
        sums = np.bincount(assign, weights=values * counts, minlength=k)
        totals = np.bincount(assign, weights=counts, minlength=k)
        new = np.where(totals > 0, sums / np.maximum(totals, 1), centers)
        new = np.sort(new)
        if np.allclose(new, centers, rtol=0, atol=1e-15):
            centers = new
            break
        centers = new
    centers = np.unique(centers)
    if centers.size < k:
        pad = centers[-1] + np.arange(1, k - centers.size + 1)
        centers = np.concatenate([centers, pad])
    return ScalarQuantCodec(centers)


def scalar_quant_apply(codec: ScalarQuantCodec, labels: SoftLabelMatrix) -> np.ndarray:
    """Map each entry to the index of its nearest level."""
    edges = (codec.levels[1:] + codec.levels[:-1]) / 2
    return np.searchsorted(edges, labels.data).astype(np.int64)


def scalar_quant_invert(codec: ScalarQuantCodec, indices: np.ndarray,
                        epsilon: float = 1e-8) -> SoftLabelMatrix:
    """Look levels back up and renormalize each row onto the simplex."""
    return SoftLabelMatrix(renormalize(codec.levels[indices], epsilon))


# ---------------------------------------------------------------------------
# PCA: store k_pc projections per row plus the shared mean and components.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaCodec:
    components: np.ndarray   # k_pc x c, orthonormal rows
    mean: np.ndarray         # c

    def __post_init__(self):
        comps = np.ascontiguousarray(self.components, dtype=np.float64)
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "mean", mean)
        gram = comps @ comps.T
        if not np.allclose(gram, np.eye(comps.shape[0]), atol=1e-8):
            raise ModelValidationError("components must be orthonormal")

    @property
    def k_pc(self) -> int:
        return self.components.shape[0]


def pca_fit(labels: SoftLabelMatrix, k_pc: int) -> PcaCodec:
    if k_pc > min(labels.n, labels.c):
        raise ModelValidationError(f"k_pc={k_pc} exceeds min(n, c)={min(labels.n, labels.c)}")
    mean = labels.data.mean(axis=0)
    _, _, vt = np.linalg.svd(labels.data - mean, full_matrices=False)
    return PcaCodec(vt[:k_pc], mean)


def pca_compress(labels: SoftLabelMatrix, codec: PcaCodec) -> np.ndarray:
    return (labels.data - codec.mean) @ codec.components.T


def pca_decompress(projections: np.ndarray, codec: PcaCodec,
                   epsilon: float = 1e-8) -> SoftLabelMatrix:
    recon = codec.mean + np.asarray(projections) @ codec.components
    return SoftLabelMatrix(renormalize(recon, epsilon))


def pca_reconstruct_raw(labels: SoftLabelMatrix, codec: PcaCodec) -> np.ndarray:
    """Reconstruction before renormalization, for error comparisons."""
    return codec.mean + pca_compress(labels, codec) @ codec.components


# ---------------------------------------------------------------------------
# "Ours w/o AE": quantize raw probability segments directly, with the
# projections pinned to identity and only the codebook trained.
# ---------------------------------------------------------------------------

def vq_no_ae_fit(labels: SoftLabelMatrix, d_c: int, k: int,
                 config: TrainConfig = TrainConfig()):
    """Segment the raw probability vectors and learn a codebook over blocks."""
    c = labels.c
    if c % d_c != 0:
        raise ModelValidationError(f"c={c} not divisible by d_c={d_c}")
    rng = np.random.default_rng(config.seed)
    segs = labels.data.reshape(-1, d_c)
    picks = rng.choice(segs.shape[0], size=k, replace=segs.shape[0] < k)
    codebook = segs[picks] + 1e-4 * rng.standard_normal((k, d_c))
    identity = np.eye(c)
    init = VqaeModel(identity, identity, codebook)
    return fit(labels, c, d_c, k, config, trainable=("codebook",), init_model=init)
