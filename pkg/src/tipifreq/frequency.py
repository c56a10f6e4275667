"""Discrete frequency ladders.

All policy code works on integer indices into a :class:`FrequencyGrid`;
MHz values only appear at the platform boundary and in reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

LETTERS = "ABCDEFG"


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform ladder ``min_mhz, min_mhz + step_mhz, ...`` with ``levels`` rungs."""

    min_mhz: int
    step_mhz: int
    levels: int

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ValueError(f"grid needs at least 2 levels, got {self.levels}")
        if self.step_mhz <= 0:
            raise ValueError(f"step_mhz must be positive, got {self.step_mhz}")

    @classmethod
    def from_range(cls, min_mhz: int, max_mhz: int, step_mhz: int) -> FrequencyGrid:
        if step_mhz <= 0:
            raise ValueError(f"step_mhz must be positive, got {step_mhz}")
        span = max_mhz - min_mhz
        if span <= 0 or span % step_mhz:
            raise ValueError(
                f"range {min_mhz}..{max_mhz} MHz is not a whole number of {step_mhz} MHz steps"
            )
        return cls(min_mhz, step_mhz, span // step_mhz + 1)

    @property
    def max_mhz(self) -> int:
        return self.min_mhz + (self.levels - 1) * self.step_mhz

    @property
    def max_index(self) -> int:
        return self.levels - 1

    def index_to_mhz(self, i: int) -> int:
        if not 0 <= i < self.levels:
            raise IndexError(f"frequency index {i} outside 0..{self.levels - 1}")
        return self.min_mhz + i * self.step_mhz

    def mhz_to_index(self, mhz: int) -> int:
        offset = mhz - self.min_mhz
        if offset % self.step_mhz or not 0 <= offset // self.step_mhz < self.levels:
            raise ValueError(f"{mhz} MHz is not a level of {self}")
        return offset // self.step_mhz

    def ghz(self, i: int) -> float:
        return self.index_to_mhz(i) / 1000.0

    def to_dict(self) -> dict:
        return {"min_mhz": self.min_mhz, "step_mhz": self.step_mhz, "levels": self.levels}

    @classmethod
    def from_dict(cls, d: dict) -> FrequencyGrid:
        return cls(int(d["min_mhz"]), int(d["step_mhz"]), int(d["levels"]))


class FreqPair(NamedTuple):
    """Core and uncore frequency indices applied together."""

    cf: int
    uf: int


def index_to_mhz(grid: FrequencyGrid, i: int) -> int:
    return grid.index_to_mhz(i)


def haswell_grids() -> tuple[FrequencyGrid, FrequencyGrid]:
    """Core 1.2-2.3 GHz and uncore 1.2-3.0 GHz, both in 100 MHz steps."""
    return FrequencyGrid(1200, 100, 12), FrequencyGrid(1200, 100, 19)


def hypothetical_grids() -> tuple[FrequencyGrid, FrequencyGrid]:
    """Seven-level A..G ladders used for hand-worked exploration examples."""
    return FrequencyGrid(1000, 100, 7), FrequencyGrid(1000, 100, 7)


def letter(i: int) -> str:
    return LETTERS[i]


def from_letter(c: str) -> int:
    return LETTERS.index(c.upper())
