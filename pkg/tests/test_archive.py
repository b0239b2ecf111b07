import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slvq.archive import (
    ArchiveError,
    CompressedArchive,
    _encode_archive,
    decompress_vqae_archive,
    pack_indices,
    packed_row_bytes,
    read_archive,
    read_model,
    unpack_indices,
    vqae_archive,
    write_archive,
    write_model,
)
from slvq.labels import SoftLabelMatrix
from slvq.vqae import VqaeModel, compress, decompress

from conftest import random_labels


def f32_model(rng, c=6, d_h=8, d_c=4, k=5):
    """Model whose weights survive f32 storage exactly."""
    return VqaeModel(
        rng.standard_normal((c, d_h)).astype(np.float32).astype(np.float64),
        rng.standard_normal((d_h, c)).astype(np.float32).astype(np.float64),
        rng.standard_normal((k, d_c)).astype(np.float32).astype(np.float64),
    )


class TestBitPacking:
    def test_row_byte_count(self):
        # 159 ten-bit indices -> 1590 bits -> 199 bytes per row
        assert packed_row_bytes(159, 10) == 199
        assert packed_row_bytes(8, 1) == 1
        assert packed_row_bytes(9, 1) == 2

    def test_msb_first_layout(self):
        # a single 3-bit index of 1 occupies the three high bits: 0b0010_0000
        assert pack_indices(np.array([[1]]), 3) == bytes([0b00100000])
        # two 3-bit indices 5, 3 -> 101 011 00 -> 0b10101100
        assert pack_indices(np.array([[5, 3]]), 3) == bytes([0b10101100])

    def test_rows_are_byte_aligned(self):
        blob = pack_indices(np.array([[1], [1]]), 3)
        assert blob == bytes([0b00100000, 0b00100000])

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 12), st.integers(1, 20),
           st.integers(0, 10))
    @settings(max_examples=80, deadline=None)
    def test_roundtrip(self, seed, bits, m, n):
        rng = np.random.default_rng(seed)
        indices = rng.integers(0, 2 ** bits, size=(n, m))
        blob = pack_indices(indices, bits)
        assert len(blob) == n * packed_row_bytes(m, bits)
        np.testing.assert_array_equal(unpack_indices(blob, n, m, bits), indices)

    def test_out_of_range_rejected(self):
        with pytest.raises(ArchiveError):
            pack_indices(np.array([[4]]), 2)
        with pytest.raises(ArchiveError):
            pack_indices(np.array([[-1]]), 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ArchiveError):
            unpack_indices(b"\x00", 2, 4, 3)


class TestArchiveContainer:
    def make_archive(self, rng):
        model = f32_model(rng)
        labels = random_labels(rng, 10, 6)
        return model, labels, vqae_archive(model, compress(labels, model), epsilon=1e-8)

    def test_roundtrip_byte_identical(self, rng, tmp_path):
        _, _, archive = self.make_archive(rng)
        path = tmp_path / "a.slar"
        write_archive(archive, path)
        back = read_archive(path)
        # re-encoding what was read must reproduce the file exactly
        assert _encode_archive(back) == path.read_bytes()

    def test_roundtrip_preserves_content(self, rng, tmp_path):
        model, labels, archive = self.make_archive(rng)
        path = tmp_path / "a.slar"
        write_archive(archive, path)
        back = read_archive(path)
        assert back.header == archive.header
        np.testing.assert_array_equal(back.packed["indices"][0],
                                      archive.packed["indices"][0])
        np.testing.assert_array_equal(back.arrays["codebook"], model.codebook)

    def test_decompress_matches_direct_path(self, rng, tmp_path):
        model, labels, archive = self.make_archive(rng)
        path = tmp_path / "a.slar"
        write_archive(archive, path)
        out = decompress_vqae_archive(read_archive(path))
        direct = decompress(compress(labels, model), model, epsilon=1e-8)
        np.testing.assert_allclose(out.data, direct.data, atol=1e-12)

    def test_corruption_detected(self, rng, tmp_path):
        _, _, archive = self.make_archive(rng)
        path = tmp_path / "a.slar"
        write_archive(archive, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ArchiveError):
            read_archive(path)

    def test_truncation_detected(self, rng, tmp_path):
        _, _, archive = self.make_archive(rng)
        path = tmp_path / "a.slar"
        write_archive(archive, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(ArchiveError):
            read_archive(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.slar"
        path.write_bytes(b"WRONG" + b"\x00" * 32)
        with pytest.raises(ArchiveError):
            read_archive(path)

    def test_unknown_codec_id_rejected(self):
        with pytest.raises(ArchiveError):
            CompressedArchive(codec_id=42, header={})

    def test_out_of_range_indices_rejected_on_decode(self, rng):
        model = f32_model(rng)
        archive = vqae_archive(model, np.array([[0, 4]]))
        bad = CompressedArchive(archive.codec_id, dict(archive.header, k=3),
                                archive.arrays, archive.packed)
        with pytest.raises(ArchiveError):
            decompress_vqae_archive(bad)


class TestModelFile:
    def test_roundtrip(self, rng, tmp_path):
        model = f32_model(rng)
        path = tmp_path / "model.slvq"
        write_model(model, path, "literal_stop_gradient", epsilon=1e-5)
        back, mode, epsilon = read_model(path)
        assert mode == "literal_stop_gradient"
        assert epsilon == 1e-5
        np.testing.assert_array_equal(back.encoder, model.encoder)
        np.testing.assert_array_equal(back.decoder, model.decoder)
        np.testing.assert_array_equal(back.codebook, model.codebook)

    def test_truncated_model(self, rng, tmp_path):
        model = f32_model(rng)
        path = tmp_path / "model.slvq"
        write_model(model, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ArchiveError):
            read_model(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.slvq"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(ArchiveError):
            read_model(path)
