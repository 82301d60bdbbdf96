"""
Domain Interfaces
Abstract base classes for the pluggable infrastructure pieces
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Callable, List, Sequence, Union

import pandas as pd

from src.domain.models import Checkpoint

PathLike = Union[str, Path]


class ICheckpointStore(ABC):
    """Interface for checkpoint persistence"""

    @abstractmethod
    def save(self, checkpoint: Checkpoint, path: PathLike) -> Path:
        """
        Persist a checkpoint

        Args:
            checkpoint: Trained parameters
            path: Destination file

        Returns:
            Path actually written
        """
        pass

    @abstractmethod
    def load(self, path: PathLike) -> Checkpoint:
        """
        Load and validate a checkpoint

        Args:
            path: Source file

        Returns:
            Checkpoint instance
        """
        pass


class IReportWriter(ABC):
    """Interface for tabular report output"""

    @abstractmethod
    def write(self, table: pd.DataFrame, path: PathLike) -> Path:
        """
        Write one report table

        Args:
            table: Rows to write, column order preserved
            path: Destination file

        Returns:
            Path actually written
        """
        pass


class ISimulatedDevice(ABC):
    """Interface for one in-process device of the sharded classification head"""

    @property
    @abstractmethod
    def rank(self) -> int:
        """Position of the device in the fixed reduction order"""
        pass

    @abstractmethod
    def receive(self, name: str, value: Any) -> None:
        """
        Store a value message sent to this device

        Args:
            name: Message key
            value: Payload
        """
        pass


class IDeviceGroup(ABC):
    """Interface for running one step on every device and reducing in rank order"""

    @abstractmethod
    def run(self, step: Callable[[Any], Any]) -> List[Any]:
        """
        Execute a step on every device

        Args:
            step: Callable applied to each device

        Returns:
            Per-device results ordered by rank
        """
        pass

    @abstractmethod
    def broadcast(self, name: str, value: Any) -> None:
        """Send the same value to every device"""
        pass

    @abstractmethod
    def all_reduce(self, name: str, values: Sequence[Any], op: str) -> Any:
        """Reduce per-device values in rank order with 'sum' or 'max'"""
        pass
