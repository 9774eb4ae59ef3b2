"""Search task families: tours, equation discovery, online bin packing."""

from evoscope.tasks.base import InvalidGenomeError, Task
from evoscope.tasks.binpack import BinPackInstance, BinPackTask, binpack_simulate
from evoscope.tasks.symreg import SymregDataset, SymregTask
from evoscope.tasks.tsp import TspInstance, TspTask

__all__ = [
    "BinPackInstance",
    "BinPackTask",
    "InvalidGenomeError",
    "SymregDataset",
    "SymregTask",
    "Task",
    "TspInstance",
    "TspTask",
    "binpack_simulate",
]
