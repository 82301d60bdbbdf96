"""
Simulated Devices
In-process workers that hold one class shard each and exchange value messages.
Reductions always run in rank order, whatever order the devices executed in.
"""

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import ShardError
from src.domain.interfaces import IDeviceGroup, ISimulatedDevice
from src.domain.models import ShardPlan

_REDUCE_OPS = {"sum": np.add, "max": np.maximum}


class TrafficTally:
    """Scalars moved between devices, per message name"""

    def __init__(self):
        """Initialize an empty tally"""
        self._scalars: Dict[str, int] = defaultdict(int)

    def record(self, name: str, scalars: int) -> None:
        self._scalars[name] += int(scalars)

    def scalars(self, name: str) -> int:
        return self._scalars.get(name, 0)

    def bytes(self, name: str, bytes_per_scalar: int) -> int:
        return self.scalars(name) * bytes_per_scalar

    def as_dict(self) -> Dict[str, int]:
        return dict(self._scalars)


class SimulatedDevice(ISimulatedDevice):
    """One device owning a contiguous range of class columns"""

    def __init__(self, rank: int, class_range: Tuple[int, int]):
        """
        Initialize a device

        Args:
            rank: Position in the reduction order
            class_range: [start, stop) of the owned class columns
        """
        self._rank = rank
        self.class_range = class_range
        self._memory: Dict[str, Any] = {}

    @property
    def rank(self) -> int:
        return self._rank

    def receive(self, name: str, value: Any) -> None:
        self._memory[name] = value

    def __getitem__(self, name: str) -> Any:
        return self._memory[name]


class SimulatedDeviceGroup(IDeviceGroup):
    """k devices following a ShardPlan, run serially or on a thread pool"""

    def __init__(self, plan: ShardPlan, workers: int = 1, schedule: Optional[Sequence[int]] = None):
        """
        Initialize the device group

        Args:
            plan: Class partition, one range per device
            workers: Thread count; 1 runs every step serially
            schedule: Order in which devices execute each step; defaults to rank order
        """
        self.plan = plan
        self.workers = max(1, int(workers))
        self.devices = [SimulatedDevice(rank, r) for rank, r in enumerate(plan.ranges)]
        order = list(range(plan.k)) if schedule is None else [int(r) for r in schedule]
        if sorted(order) != list(range(plan.k)):
            raise ShardError(f"Schedule {order} is not a permutation of 0..{plan.k - 1}")
        self.schedule = order
        self.traffic = TrafficTally()

    def place(self, name: str, values: Sequence[Any]) -> None:
        """Load per-device resident state without counting it as traffic"""
        for device, value in zip(self.devices, values):
            device.receive(name, value)

    def run(self, step: Callable[[SimulatedDevice], Any]) -> List[Any]:
        """
        Execute a step on every device

        Args:
            step: Callable applied to each device

        Returns:
            Per-device results ordered by rank
        """
        ordered = [self.devices[rank] for rank in self.schedule]
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outputs = list(pool.map(step, ordered))
        else:
            outputs = [step(device) for device in ordered]
        results: List[Any] = [None] * self.plan.k
        for device, output in zip(ordered, outputs):
            results[device.rank] = output
        return results

    def broadcast(self, name: str, value: Any) -> None:
        """Send one value to every device; counted once, as a single gather"""
        for device in self.devices:
            device.receive(name, value)
        self.traffic.record(name, np.size(value))

    def all_reduce(self, name: str, values: Sequence[Any], op: str) -> Any:
        """
        Reduce per-device contributions in rank order and hand the result to every device

        Args:
            name: Message key under which devices receive the result
            values: One contribution per device, ordered by rank
            op: 'sum' or 'max'

        Returns:
            Reduced value
        """
        if op not in _REDUCE_OPS:
            raise ShardError(f"Unknown reduction '{op}'")
        if len(values) != self.plan.k:
            raise ShardError(f"Expected {self.plan.k} contributions, got {len(values)}")
        result = reduce(_REDUCE_OPS[op], values)
        for value in values:
            self.traffic.record(name, np.size(value))
        for device in self.devices:
            device.receive(name, result)
        return result
