"""TIPI-indexed online core/uncore frequency selection.

The engine in :mod:`tipifreq.policy` discovers, for every memory-access
slab it observes, the core and uncore frequencies with the lowest energy
per instruction. :mod:`tipifreq.simulator` and :mod:`tipifreq.harness`
drive it against a synthetic machine.
"""

from tipifreq.frequency import FreqPair, FrequencyGrid, haswell_grids, hypothetical_grids
from tipifreq.policy import (
    CounterSample,
    Decision,
    Engine,
    PolicyConfig,
    Reason,
    Variant,
    ZeroInstructions,
)

__all__ = [
    "CounterSample",
    "Decision",
    "Engine",
    "FreqPair",
    "FrequencyGrid",
    "PolicyConfig",
    "Reason",
    "Variant",
    "ZeroInstructions",
    "haswell_grids",
    "hypothetical_grids",
]

__version__ = "0.1.0"
