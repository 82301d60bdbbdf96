"""
Base Checkpoint Store
Abstract base class for checkpoint stores
"""

import os
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path

from src.core.exceptions import CheckpointError
from src.domain.interfaces import ICheckpointStore, PathLike
from src.domain.models import Checkpoint


class BaseCheckpointStore(ICheckpointStore, ABC):
    """Base class for checkpoint store implementations"""

    def save(self, checkpoint: Checkpoint, path: PathLike) -> Path:
        """
        Serialize and write atomically: a temporary sibling file is renamed into place

        Args:
            checkpoint: Trained parameters
            path: Destination file

        Returns:
            Path actually written
        """
        target = Path(path)
        payload = self._encode(checkpoint)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as handle:
                    handle.write(payload)
                os.replace(tmp_name, target)
            except BaseException:
                Path(tmp_name).unlink(missing_ok=True)
                raise
        except OSError as e:
            raise CheckpointError(f"Failed to write checkpoint {target}: {e}") from e
        return target

    def load(self, path: PathLike) -> Checkpoint:
        """
        Read and decode a checkpoint

        Args:
            path: Source file

        Returns:
            Checkpoint instance
        """
        source = Path(path)
        try:
            payload = source.read_bytes()
        except OSError as e:
            raise CheckpointError(f"Failed to read checkpoint {source}: {e}") from e
        return self._decode(payload)

    @abstractmethod
    def _encode(self, checkpoint: Checkpoint) -> bytes:
        """Implementation-specific serialization"""
        pass

    @abstractmethod
    def _decode(self, payload: bytes) -> Checkpoint:
        """Implementation-specific deserialization"""
        pass
