"""Bit-exact serialization: packed code indices, the SLAR archive container,
and the SLVQ model file.

Indices are packed MSB-first with each label row padded to a byte boundary,
so rows remain randomly accessible. The container is little-endian on disk
and ends with a CRC32 trailer over everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .vqae import GRADIENT_MODES, VqaeModel

SLAR_MAGIC = b"SLAR"
SLAR_VERSION = 1
SLVQ_MAGIC = b"SLVQ"
SLVQ_VERSION = 1

CODEC_VQAE = 0
CODEC_TOPK = 1
CODEC_QUANT = 2
CODEC_PCA = 3
CODEC_VQ_NO_AE = 4
CODEC_TOPK_VQ = 5
CODEC_IDS = (CODEC_VQAE, CODEC_TOPK, CODEC_QUANT, CODEC_PCA, CODEC_VQ_NO_AE, CODEC_TOPK_VQ)


class ArchiveError(ValueError):
    """Raised on malformed, truncated, or corrupted archive files."""


def packed_row_bytes(m: int, bits: int) -> int:
    return (m * bits + 7) // 8


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    """Pack an n x m index matrix, MSB-first, one byte-aligned record per row."""
    indices = np.asarray(indices)
    if indices.ndim != 2:
        raise ArchiveError(f"index matrix must be 2-D, got shape {indices.shape}")
    if not 1 <= bits <= 32:
        raise ArchiveError(f"bits must be in 1..32, got {bits}")
    if indices.size and (indices.min() < 0 or indices.max() >= (1 << bits)):
        raise ArchiveError(f"index out of range for {bits}-bit packing")
    n, m = indices.shape
    if n == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bit_rows = ((indices.astype(np.uint64)[:, :, None] >> shifts) & 1).reshape(n, m * bits)
    pad = (-m * bits) % 8
    if pad:
        bit_rows = np.concatenate([bit_rows, np.zeros((n, pad), dtype=np.uint64)], axis=1)
    return np.packbits(bit_rows.astype(np.uint8), axis=1).tobytes()


def unpack_indices(blob: bytes, n: int, m: int, bits: int) -> np.ndarray:
    """Invert pack_indices; validates the blob length."""
    row_bytes = packed_row_bytes(m, bits)
    if len(blob) != n * row_bytes:
        raise ArchiveError(f"expected {n * row_bytes} packed bytes, got {len(blob)}")
    if n == 0:
        return np.zeros((0, m), dtype=np.int64)
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, row_bytes)
    bit_rows = np.unpackbits(raw, axis=1)[:, : m * bits].reshape(n, m, bits)
    weights = (1 << np.arange(bits - 1, -1, -1, dtype=np.int64))
    return (bit_rows.astype(np.int64) * weights).sum(axis=2)


@dataclass(frozen=True)
class CompressedArchive:
    """A stored codec payload: header dims, named float sections, and
    bit-packed per-label index matrices."""

    codec_id: int
    header: dict
    arrays: dict = field(default_factory=dict)        # name -> float64 ndarray (stored f32)
    packed: dict = field(default_factory=dict)        # name -> (indices, bits)
    version: int = SLAR_VERSION

    def __post_init__(self):
        if self.codec_id not in CODEC_IDS:
            raise ArchiveError(f"unknown codec id {self.codec_id}")


def vqae_archive(model: VqaeModel, indices: np.ndarray, epsilon: float = 1e-8,
                 codec_id: int = CODEC_VQAE) -> CompressedArchive:
    """Bundle what the decoder side needs: indices, codebook, and decoder."""
    bits = max(1, (model.k - 1).bit_length())
    header = {"c": model.c, "d_h": model.d_h, "d_c": model.d_c, "k": model.k,
              "n": int(np.asarray(indices).shape[0]), "epsilon": epsilon}
    return CompressedArchive(
        codec_id=codec_id,
        header=header,
        arrays={"codebook": model.codebook, "decoder": model.decoder},
        packed={"indices": (np.asarray(indices), bits)},
    )


def decompress_vqae_archive(archive: CompressedArchive):
    """Reconstruct labels from a VQAE archive without the encoder."""
    from .vqae import SoftLabelMatrix, decode, renormalize

    h = archive.header
    codebook = archive.arrays["codebook"]
    decoder = archive.arrays["decoder"]
    indices, _ = archive.packed["indices"]
    if indices.size and indices.max() >= h["k"]:
        raise ArchiveError("archive contains out-of-range code indices")
    h_hat = codebook[indices].reshape(indices.shape[0], h["d_h"])
    return SoftLabelMatrix(renormalize(h_hat @ decoder, h["epsilon"]))


# ---------------------------------------------------------------------------
# On-disk container. Layout:
#   magic "SLAR" | u16 version | u8 codec_id
#   u32 header_len | header JSON (sorted keys, utf-8)
#   u16 array count | per array: u16 name_len, name, u32 rows, u32 cols, f32 data
#   u16 packed count | per packed: u16 name_len, name, u32 n, u32 m, u8 bits, blob
#   u32 CRC32 of everything above
# ---------------------------------------------------------------------------

def _encode_archive(archive: CompressedArchive) -> bytes:
    parts = [SLAR_MAGIC, struct.pack("<HB", archive.version, archive.codec_id)]
    header_blob = json.dumps(archive.header, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(header_blob)))
    parts.append(header_blob)
    parts.append(struct.pack("<H", len(archive.arrays)))
    for name in sorted(archive.arrays):
        arr = np.ascontiguousarray(archive.arrays[name], dtype="<f4")
        nm = name.encode()
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<II", arr.shape[0], arr.shape[1]))
        parts.append(arr.tobytes())
    parts.append(struct.pack("<H", len(archive.packed)))
    for name in sorted(archive.packed):
        indices, bits = archive.packed[name]
        nm = name.encode()
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<IIB", indices.shape[0], indices.shape[1], bits))
        parts.append(pack_indices(indices, bits))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def write_archive(archive: CompressedArchive, path) -> None:
    with open(path, "wb") as f:
        f.write(_encode_archive(archive))


def read_archive(path) -> CompressedArchive:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 15 or blob[:4] != SLAR_MAGIC:
        raise ArchiveError(f"{path}: not a SLAR archive")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ArchiveError(f"{path}: CRC32 mismatch, file corrupted")
    off = 4
    version, codec_id = struct.unpack_from("<HB", body, off)
    off += 3
    if version != SLAR_VERSION:
        raise ArchiveError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", body, off)
    off += 4
    header = json.loads(body[off:off + hlen].decode())
    off += hlen
    (n_arrays,) = struct.unpack_from("<H", body, off)
    off += 2
    arrays = {}
    for _ in range(n_arrays):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        rows, cols = struct.unpack_from("<II", body, off)
        off += 8
        nbytes = rows * cols * 4
        arrays[name] = np.frombuffer(body, dtype="<f4", count=rows * cols,
                                     offset=off).reshape(rows, cols).astype(np.float64)
        off += nbytes
    (n_packed,) = struct.unpack_from("<H", body, off)
    off += 2
    packed = {}
    for _ in range(n_packed):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        n, m, bits = struct.unpack_from("<IIB", body, off)
        off += 9
        nbytes = n * packed_row_bytes(m, bits)
        packed[name] = (unpack_indices(body[off:off + nbytes], n, m, bits), bits)
        off += nbytes
    if off != len(body):
        raise ArchiveError(f"{path}: {len(body) - off} trailing bytes")
    return CompressedArchive(codec_id=codec_id, header=header, arrays=arrays,
                             packed=packed, version=version)


# ---------------------------------------------------------------------------
# SLVQ model file: magic, version u16, header (c, d_h, d_c, k u32 each,
# gradient_mode u8, epsilon f64), then P, D, codebook as little-endian f32.
# ---------------------------------------------------------------------------

def write_model(model: VqaeModel, path, gradient_mode: str = "straight_through",
                epsilon: float = 1e-8) -> None:
    mode_code = GRADIENT_MODES.index(gradient_mode)
    header = SLVQ_MAGIC + struct.pack("<HIIIIBd", SLVQ_VERSION, model.c, model.d_h,
                                      model.d_c, model.k, mode_code, epsilon)
    with open(path, "wb") as f:
        f.write(header)
        for arr in (model.encoder, model.decoder, model.codebook):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_model(path):
    """Returns (model, gradient_mode, epsilon)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != SLVQ_MAGIC:
        raise ArchiveError(f"{path}: not a SLVQ model file")
    version, c, d_h, d_c, k, mode_code, epsilon = struct.unpack_from("<HIIIIBd", blob, 4)
    if version != SLVQ_VERSION:
        raise ArchiveError(f"{path}: unsupported version {version}")
    if mode_code >= len(GRADIENT_MODES):
        raise ArchiveError(f"{path}: unknown gradient mode code {mode_code}")
    off = 4 + struct.calcsize("<HIIIIBd")
    expected = off + 4 * (c * d_h + d_h * c + k * d_c)
    if len(blob) != expected:
        raise ArchiveError(f"{path}: expected {expected} bytes, found {len(blob)}")
    def take(rows, cols):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
        off += rows * cols * 4
        return arr.reshape(rows, cols).astype(np.float64)
    encoder = take(c, d_h)
    decoder = take(d_h, c)
    codebook = take(k, d_c)
    return VqaeModel(encoder, decoder, codebook), GRADIENT_MODES[mode_code], epsilon
