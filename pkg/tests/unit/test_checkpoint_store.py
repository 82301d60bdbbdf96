"""Tests for the binary checkpoint store."""

import struct
import zlib

import numpy as np
import pytest

from src.core.exceptions import CheckpointError, CheckpointFormatError, ChecksumMismatch
from src.domain.models import Checkpoint
from src.infrastructure.checkpoints.binary_store import HEADER, MAGIC, BinaryCheckpointStore
from src.services.autonet import init_net


@pytest.fixture
def store():
    return BinaryCheckpointStore()


@pytest.fixture
def checkpoint():
    net = init_net(5, 4, 3, seed=0)
    net.b1[:] = 0.25
    centres = np.random.default_rng(1).standard_normal((3, 7))
    return Checkpoint(net=net, centres=centres)


def _recrc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class TestBinaryCheckpointStore:

    def test_layout(self, store, checkpoint, tmp_path):
        path = store.save(checkpoint, tmp_path / "model.arck")
        payload = path.read_bytes()
        assert payload[:4] == MAGIC
        assert HEADER.unpack_from(payload)[1:] == (1, 5, 4, 3, 7)
        assert len(payload) == HEADER.size + 4 * (5 * 4 + 4 + 4 * 3 + 3 + 3 * 7) + 4

    def test_values_survive_at_float32_precision(self, store, checkpoint, tmp_path):
        loaded = store.load(store.save(checkpoint, tmp_path / "model.arck"))
        assert loaded.dims == (5, 4, 3, 7)
        np.testing.assert_allclose(loaded.net.w1, checkpoint.net.w1, rtol=1e-6)
        np.testing.assert_array_equal(loaded.net.b1, np.full(4, 0.25))
        np.testing.assert_allclose(loaded.centres, checkpoint.centres, rtol=1e-6)

    def test_without_centres(self, store, checkpoint, tmp_path):
        loaded = store.load(store.save(Checkpoint(net=checkpoint.net), tmp_path / "net.arck"))
        assert loaded.centres is None
        assert loaded.dims[3] == 0

    def test_save_is_byte_stable(self, store, checkpoint, tmp_path):
        first = store.save(checkpoint, tmp_path / "a.arck").read_bytes()
        second = store.save(checkpoint, tmp_path / "b.arck").read_bytes()
        assert first == second

    @pytest.mark.parametrize("with_centres", [True, False])
    def test_reload_then_save_is_byte_identical(self, store, checkpoint, tmp_path, with_centres):
        original = checkpoint if with_centres else Checkpoint(net=checkpoint.net)
        first = store.save(original, tmp_path / "first.arck")
        second = store.save(store.load(first), tmp_path / "second.arck")
        assert second.read_bytes() == first.read_bytes()

    def test_no_temporary_files_left(self, store, checkpoint, tmp_path):
        store.save(checkpoint, tmp_path / "out" / "model.arck")
        assert [p.name for p in (tmp_path / "out").iterdir()] == ["model.arck"]

    def test_flipped_byte(self, store, checkpoint, tmp_path):
        path = store.save(checkpoint, tmp_path / "model.arck")
        payload = bytearray(path.read_bytes())
        payload[HEADER.size + 3] ^= 0xFF
        path.write_bytes(bytes(payload))
        with pytest.raises(ChecksumMismatch):
            store.load(path)

    def test_bad_magic(self, store, checkpoint, tmp_path):
        path = store.save(checkpoint, tmp_path / "model.arck")
        body = b"XXXX" + path.read_bytes()[4:-4]
        path.write_bytes(_recrc(body))
        with pytest.raises(CheckpointFormatError):
            store.load(path)

    def test_bad_version(self, store, checkpoint, tmp_path):
        path = store.save(checkpoint, tmp_path / "model.arck")
        body = bytearray(path.read_bytes()[:-4])
        body[4:8] = struct.pack("<I", 2)
        path.write_bytes(_recrc(bytes(body)))
        with pytest.raises(CheckpointFormatError):
            store.load(path)

    def test_truncated_blob(self, store, checkpoint, tmp_path):
        path = store.save(checkpoint, tmp_path / "model.arck")
        path.write_bytes(_recrc(path.read_bytes()[:-12]))
        with pytest.raises(CheckpointFormatError):
            store.load(path)

    def test_too_short(self, store, tmp_path):
        path = tmp_path / "empty.arck"
        path.write_bytes(b"ARCK")
        with pytest.raises(CheckpointFormatError):
            store.load(path)

    def test_missing_file(self, store, tmp_path):
        with pytest.raises(CheckpointError):
            store.load(tmp_path / "absent.arck")

    def test_errors_map_to_io_exit_code(self):
        assert ChecksumMismatch("x").exit_code == 3
        assert CheckpointFormatError("x").exit_code == 3
