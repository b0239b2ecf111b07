"""Storage accounting for raw and compressed soft labels.

All byte counts follow the half-precision-label / single-precision-parameter
convention: label scalars cost 2 bytes, codec parameters 4 bytes. GB and MB
are 1024-based throughout (1 GB = 1024^3 bytes).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

GIB = 1024 ** 3
MIB = 1024 ** 2


class BudgetError(ValueError):
    """Raised for degenerate or infeasible accounting inputs."""


@dataclass(frozen=True)
class BudgetSpec:
    """Inputs to the storage formulas.

    n = ipc * num_classes labels per view; each of the ``epochs`` epochs
    consumes ``aug_per_epoch`` augmentation views (default one view per
    epoch, so total label rows = n * epochs).
    """

    ipc: int
    num_classes: int
    epochs: int
    aug_per_epoch: int = 1
    d_h: int | None = None
    d_c: int | None = None
    k: int | None = None
    bytes_per_scalar_labels: int = 2
    bytes_per_scalar_params: int = 4

    def __post_init__(self):
        for name in ("ipc", "num_classes", "epochs", "aug_per_epoch",
                     "bytes_per_scalar_labels", "bytes_per_scalar_params"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise BudgetError(f"{name} must be a positive integer, got {v!r}")
        for name in ("d_h", "d_c", "k"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, int) and v > 0):
                raise BudgetError(f"{name} must be a positive integer, got {v!r}")

    @property
    def n(self) -> int:
        return self.ipc * self.num_classes

    @property
    def label_rows(self) -> int:
        return self.n * self.epochs * self.aug_per_epoch

    def require_vq(self) -> None:
        if self.d_h is None or self.d_c is None or self.k is None:
            raise BudgetError("d_h, d_c, and k are required for VQ accounting")
        if self.d_h % self.d_c != 0:
            raise BudgetError(f"d_h={self.d_h} not divisible by d_c={self.d_c}")


@dataclass(frozen=True)
class StorageReport:
    raw_bytes: float
    compressed_bytes: float
    breakdown: dict = field(default_factory=dict)
    exact: bool = True

    @property
    def ratio(self) -> float:
        return self.raw_bytes / self.compressed_bytes

    def gb(self, value) -> float:
        return value / GIB

    def as_dict(self) -> dict:
        return {
            "raw_bytes": self.raw_bytes,
            "raw_gb": round(self.raw_bytes / GIB, 3),
            "compressed_bytes": self.compressed_bytes,
            "compressed_gb": round(self.compressed_bytes / GIB, 3),
            "ratio": self.ratio,
            "breakdown": dict(self.breakdown),
            "exact": self.exact,
        }


def bits_per_index(k: int) -> int:
    """ceil(log2 k); byte-exact accounting needs k to be a power of two."""
    if k < 2:
        raise BudgetError(f"need k >= 2 for indexing, got k={k}")
    return max(1, (k - 1).bit_length())


def is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def raw_label_bytes(spec: BudgetSpec) -> int:
    """Uncompressed cost: one c-vector of label scalars per row per epoch."""
    return spec.label_rows * spec.num_classes * spec.bytes_per_scalar_labels


def vq_bytes(spec: BudgetSpec) -> StorageReport:
    """VQ storage: packed indices per label plus the decoder and codebook."""
    spec.require_vq()
    bits = bits_per_index(spec.k)
    exact = is_power_of_two(spec.k)
    if not exact:
        warnings.warn(f"k={spec.k} is not a power of two; using ceil(log2 k)={bits} bits",
                      stacklevel=2)
    m = spec.d_h // spec.d_c
    batch_bits = spec.label_rows * m * bits
    batch = batch_bits / 8 if batch_bits % 8 else batch_bits // 8
    decoder = spec.num_classes * spec.d_h * spec.bytes_per_scalar_params
    codebook = spec.k * spec.d_c * spec.bytes_per_scalar_params
    return StorageReport(
        raw_bytes=raw_label_bytes(spec),
        compressed_bytes=batch + decoder + codebook,
        breakdown={"batch_data": batch, "decoder": decoder, "codebook": codebook},
        exact=exact,
    )


def compression_ratio(spec: BudgetSpec) -> float:
    return vq_bytes(spec).ratio


def asymptotic_ratio_class(d_c: int, k: int) -> float:
    """Dominant per-label cost class d_c / log2(k) in the many-epoch limit."""
    if k < 2:
        raise BudgetError(f"need k >= 2, got k={k}")
    return d_c / math.log2(k)


def level_set(d_c0: int, k0: int, steps: int):
    """(k, d_c) pairs with identical asymptotic ratio class: square k,
    double d_c each step. Truncates with a warning if k would exceed 2^32.
    """
    if k0 < 2:
        raise BudgetError(f"need k0 >= 2, got k0={k0}")
    pairs = [(k0, d_c0)]
    k, d_c = k0, d_c0
    for _ in range(steps):
        k, d_c = k * k, d_c * 2
        if k > 2 ** 32:
            warnings.warn(f"level set truncated: k={k} exceeds 2^32", stacklevel=2)
            break
        pairs.append((k, d_c))
    return pairs


def topk_bytes(spec: BudgetSpec, k_top: int) -> StorageReport:
    """Top-k: per row, k_top label scalars plus k_top class ids of
    log2(C) bits each."""
    if k_top > spec.num_classes:
        raise BudgetError(f"k_top={k_top} exceeds C={spec.num_classes}")
    per_row = k_top * (spec.bytes_per_scalar_labels + math.log2(spec.num_classes) / 8)
    return StorageReport(
        raw_bytes=raw_label_bytes(spec),
        compressed_bytes=spec.label_rows * per_row,
        breakdown={"values": spec.label_rows * k_top * spec.bytes_per_scalar_labels,
                   "indices": spec.label_rows * k_top * math.log2(spec.num_classes) / 8},
    )


def pca_bytes(spec: BudgetSpec, k_pc: int) -> StorageReport:
    """PCA: k_pc projections per row plus the shared component vectors."""
    if k_pc > spec.num_classes:
        raise BudgetError(f"k_pc={k_pc} exceeds C={spec.num_classes}")
    projections = spec.label_rows * k_pc * spec.bytes_per_scalar_labels
    vectors = k_pc * spec.num_classes * spec.bytes_per_scalar_labels
    return StorageReport(
        raw_bytes=raw_label_bytes(spec),
        compressed_bytes=projections + vectors,
        breakdown={"projections": projections, "vectors": vectors},
    )


def quant_bytes(spec: BudgetSpec, bits: int) -> StorageReport:
    """Scalar quantization: a level index per entry plus the level table."""
    if not 1 <= bits <= 8:
        raise BudgetError(f"bits must be in 1..8, got {bits}")
    index_bits = spec.label_rows * spec.num_classes * bits
    indices = index_bits / 8 if index_bits % 8 else index_bits // 8
    levels = (2 ** bits) * spec.bytes_per_scalar_labels
    return StorageReport(
        raw_bytes=raw_label_bytes(spec),
        compressed_bytes=indices + levels,
        breakdown={"indices": indices, "levels": levels},
    )


def llm_raw_bytes(tokens: int, vocab: int, bytes_per_scalar: int = 2) -> int:
    """Uncompressed token-level soft-label cost: one vocab-sized half vector
    per token."""
    if tokens < 1 or vocab < 1:
        raise BudgetError("tokens and vocab must be positive")
    return tokens * vocab * bytes_per_scalar


def llm_compression_ratio(tokens: int, vocab: int, archive_gb: float) -> float:
    """Ratio of raw token-label storage to an archive of the given size in
    (1024-based) GB."""
    if archive_gb <= 0:
        raise BudgetError("archive size must be positive")
    return (llm_raw_bytes(tokens, vocab) / GIB) / archive_gb


def solve_hyperparams(target_ratio: float, spec: BudgetSpec,
                      max_k: int = 4096):
    """Search (d_h, d_c, k) hitting at least the target ratio with the least
    slack; ties prefer larger d_h (more codec capacity for the same budget).

    k ranges over powers of two up to ``max_k``; d_h over [C/2, 2C]; d_c
    over divisors of d_h.
    """
    if target_ratio <= 1:
        raise BudgetError(f"target ratio must exceed 1, got {target_ratio}")
    c = spec.num_classes
    best = None
    ks = [2 ** b for b in range(1, max_k.bit_length())]
    for d_h in range(max(1, c // 2), 2 * c + 1):
        divisors = [d for d in range(1, d_h + 1) if d_h % d == 0]
        for d_c in divisors:
            for k in ks:
                trial = BudgetSpec(spec.ipc, c, spec.epochs, spec.aug_per_epoch,
                                   d_h=d_h, d_c=d_c, k=k)
                ratio = compression_ratio(trial)
                if ratio < target_ratio:
                    continue
                slack = ratio - target_ratio
                key = (slack, -d_h)
                if best is None or key < best[0]:
                    best = (key, (d_h, d_c, k), ratio)
    if best is None:
        raise BudgetError(f"no hyperparameters reach a {target_ratio}x ratio")
    return best[1], best[2]
