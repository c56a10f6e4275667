"""Synthetic machine, workload scripts and brute-force optima.

The parametric machine runs ``a`` core cycles per instruction plus ``m``
uncore cycles per LLC request::

    seconds/instr = a / f_core + tipi * m / f_uncore
    watts         = p0 + pc * f_core**3 + pu * f_uncore**2      (GHz)

so low-TIPI work wants a fast core and a slow uncore, and high-TIPI work the
opposite.  A tabular machine takes JPI and throughput surfaces per slab
verbatim, which lets tests inject exact energy landscapes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from tipifreq.frequency import FreqPair, FrequencyGrid, haswell_grids
from tipifreq.platform import EndOfRun, PlatformPort
from tipifreq.policy import CounterSample, quantize


@dataclass(frozen=True)
class ParametricModel:
    a_cycles_per_instr: float = 0.8
    m_cycles_per_miss: float = 150.0
    p0_watts: float = 40.0
    pc_core_coeff: float = 1.0
    pu_uncore_coeff: float = 3.0
    core_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[0])
    uncore_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[1])

    def __post_init__(self) -> None:
        for name in ("a_cycles_per_instr", "m_cycles_per_miss", "p0_watts", "pc_core_coeff", "pu_uncore_coeff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def throughput(self, tipi: float, pair: FreqPair) -> float:
        cf = self.core_grid.ghz(pair.cf)
        uf = self.uncore_grid.ghz(pair.uf)
        ns_per_instr = self.a_cycles_per_instr / cf + tipi * self.m_cycles_per_miss / uf
        return 1e9 / ns_per_instr

    def power(self, pair: FreqPair, tipi: float = 0.0) -> float:
        cf = self.core_grid.ghz(pair.cf)
        uf = self.uncore_grid.ghz(pair.uf)
        return self.p0_watts + self.pc_core_coeff * cf**3 + self.pu_uncore_coeff * uf**2

    def jpi(self, tipi: float, pair: FreqPair) -> float:
        return self.power(pair) / self.throughput(tipi, pair)

    def to_dict(self) -> dict:
        return {
            "mode": "parametric",
            "a_cycles_per_instr": self.a_cycles_per_instr,
            "m_cycles_per_miss": self.m_cycles_per_miss,
            "p0_watts": self.p0_watts,
            "pc_core_coeff": self.pc_core_coeff,
            "pu_uncore_coeff": self.pu_uncore_coeff,
            "core_grid": self.core_grid.to_dict(),
            "uncore_grid": self.uncore_grid.to_dict(),
        }


@dataclass
class TabularModel:
    """Per-slab JPI (J/instr) and throughput (instr/s) surfaces, rows = core index."""

    jpi_tables: dict[int, np.ndarray]
    throughput_tables: dict[int, np.ndarray]
    core_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[0])
    uncore_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[1])
    slab_width: float = 0.004

    def __post_init__(self) -> None:
        shape = (self.core_grid.levels, self.uncore_grid.levels)
        if set(self.jpi_tables) != set(self.throughput_tables):
            raise ValueError("jpi and throughput tables cover different slabs")
        for slab in self.jpi_tables:
            self.jpi_tables[slab] = np.asarray(self.jpi_tables[slab], dtype=float)
            self.throughput_tables[slab] = np.asarray(self.throughput_tables[slab], dtype=float)
            for t in (self.jpi_tables[slab], self.throughput_tables[slab]):
                if t.shape != shape:
                    raise ValueError(f"slab {slab}: table shape {t.shape}, expected {shape}")
                if not np.all(np.isfinite(t)) or np.any(t <= 0):
                    raise ValueError(f"slab {slab}: tables must be finite and positive")

    def _slab(self, tipi: float) -> int:
        slab = quantize(tipi, self.slab_width)
        if slab not in self.jpi_tables:
            raise KeyError(f"tabular model has no slab {slab} (tipi {tipi})")
        return slab

    def throughput(self, tipi: float, pair: FreqPair) -> float:
        return float(self.throughput_tables[self._slab(tipi)][pair.cf, pair.uf])

    def jpi(self, tipi: float, pair: FreqPair) -> float:
        return float(self.jpi_tables[self._slab(tipi)][pair.cf, pair.uf])

    def power(self, pair: FreqPair, tipi: float = 0.0) -> float:
        return self.jpi(tipi, pair) * self.throughput(tipi, pair)

    def to_dict(self) -> dict:
        return {
            "core_grid": self.core_grid.to_dict(),
            "uncore_grid": self.uncore_grid.to_dict(),
            "slabs": {
                str(s): {
                    "jpi": self.jpi_tables[s].tolist(),
                    "throughput": self.throughput_tables[s].tolist(),
                }
                for s in sorted(self.jpi_tables)
            },
        }


MachineModel = Union[ParametricModel, TabularModel]


def throughput(model: MachineModel, tipi: float, pair: FreqPair) -> float:
    return model.throughput(tipi, pair)


def power(model: MachineModel, pair: FreqPair, tipi: float = 0.0) -> float:
    return model.power(pair, tipi)


def jpi_surface(model: MachineModel, tipi: float) -> np.ndarray:
    """Exact JPI over every (core, uncore) pair for one TIPI value."""
    if isinstance(model, TabularModel):
        return model.jpi_tables[model._slab(tipi)].copy()
    cf = np.array([model.core_grid.ghz(i) for i in range(model.core_grid.levels)])[:, None]
    uf = np.array([model.uncore_grid.ghz(i) for i in range(model.uncore_grid.levels)])[None, :]
    watts = model.p0_watts + model.pc_core_coeff * cf**3 + model.pu_uncore_coeff * uf**2
    ns = model.a_cycles_per_instr / cf + tipi * model.m_cycles_per_miss / uf
    return watts * ns * 1e-9


def model_from_dict(d: dict) -> MachineModel:
    grids = {}
    for key in ("core_grid", "uncore_grid"):
        if key in d:
            grids[key] = FrequencyGrid.from_dict(d[key])
    if "slabs" in d:
        jpi, tput = {}, {}
        for k, v in d["slabs"].items():
            jpi[int(k)] = np.asarray(v["jpi"], dtype=float)
            tput[int(k)] = np.asarray(v["throughput"], dtype=float)
        return TabularModel(jpi, tput, **grids, slab_width=float(d.get("slab_width", 0.004)))
    coeffs = {k: float(d[k]) for k in (
        "a_cycles_per_instr", "m_cycles_per_miss", "p0_watts", "pc_core_coeff", "pu_uncore_coeff"
    ) if k in d}
    return ParametricModel(**coeffs, **grids)


def load_model(path: Union[str, Path]) -> MachineModel:
    with open(path, encoding="utf-8") as f:
        return model_from_dict(json.load(f))


# -- workloads ---------------------------------------------------------------


@dataclass(frozen=True)
class WorkPhase:
    work_units: int  # instructions
    tipi: float
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.work_units <= 0:
            raise ValueError("work_units must be positive")
        if self.tipi < 0:
            raise ValueError("tipi must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class WorkloadScript:
    phases: tuple[WorkPhase, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("workload script has no phases")

    @property
    def total_work(self) -> int:
        return sum(p.work_units for p in self.phases)

    def with_seed(self, seed: int) -> WorkloadScript:
        return WorkloadScript(self.phases, seed)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "phases": [
                {"work_units": p.work_units, "tipi": p.tipi, "noise_sigma": p.noise_sigma}
                for p in self.phases
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> WorkloadScript:
        phases = tuple(
            WorkPhase(int(p["work_units"]), float(p["tipi"]), float(p.get("noise_sigma", 0.0)))
            for p in d.get("phases", [])
        )
        return cls(phases, int(d.get("seed", 0)))


def load_script(path: Union[str, Path]) -> WorkloadScript:
    with open(path, encoding="utf-8") as f:
        return WorkloadScript.from_dict(json.load(f))


@dataclass
class SimClock:
    now_us: int = 0
    phase: int = 0
    done: int = 0  # instructions retired in the current phase

    def exhausted(self, script: WorkloadScript) -> bool:
        return self.phase >= len(script.phases)


def advance(
    model: MachineModel,
    script: WorkloadScript,
    clock: SimClock,
    pair: FreqPair,
    dt_us: int,
    rng: np.random.Generator,
) -> CounterSample:
    """Run the workload for ``dt_us`` (less if it finishes) at ``pair``.

    An interval that crosses a phase boundary retires instructions from both
    phases at their own rates, so its TIPI is the instruction-weighted blend.
    """
    if clock.exhausted(script):
        raise EndOfRun
    start_phase = script.phases[clock.phase]
    left = float(dt_us)
    instructions = 0
    tor = 0.0
    energy_j = 0.0
    while left > 0 and not clock.exhausted(script):
        ph = script.phases[clock.phase]
        rate = model.throughput(ph.tipi, pair)
        remaining = ph.work_units - clock.done
        capacity = rate * left * 1e-6
        if capacity >= remaining:
            n = remaining
            t = remaining / rate * 1e6
            clock.phase += 1
            clock.done = 0
        else:
            n = int(capacity)
            t = left
            clock.done += n
        instructions += n
        tor += ph.tipi * n
        energy_j += model.power(pair, ph.tipi) * t * 1e-6
        left -= t

    elapsed = dt_us if left <= 0 else max(1, math.ceil(dt_us - left))
    if isinstance(model, ParametricModel):
        energy_uj = model.power(pair) * elapsed
    else:
        energy_uj = energy_j * 1e6
    if start_phase.noise_sigma > 0:
        energy_uj *= math.exp(start_phase.noise_sigma * rng.standard_normal())
    clock.now_us += elapsed

    total_tor = int(round(tor))
    local = total_tor // 2
    return CounterSample(local, total_tor - local, instructions, energy_uj, elapsed)


class SimulatedPort(PlatformPort):
    """Platform port backed by the synthetic machine, stepping ``t_inv_us`` per read."""

    def __init__(self, model: MachineModel, script: WorkloadScript, t_inv_us: int):
        self.model = model
        self.script = script
        self.t_inv_us = t_inv_us
        self.core_grid = model.core_grid
        self.uncore_grid = model.uncore_grid
        self.clock = SimClock()
        self.rng = np.random.default_rng(script.seed)
        self.pair = FreqPair(self.core_grid.max_index, self.uncore_grid.max_index)

    def read_counters(self) -> CounterSample:
        return advance(self.model, self.script, self.clock, self.pair, self.t_inv_us, self.rng)

    def apply(self, pair: FreqPair) -> None:
        self.pair = pair


# -- oracles -----------------------------------------------------------------


class OracleResult(NamedTuple):
    opt: int  # where the step-two descent settles
    argmin: int  # unconstrained minimum, for diagnostics


def descent_opt(values: Sequence[float], lb: int, rb: int, core: bool, levels: int) -> int:
    """Settle point of the step-two descent over exact values.

    Written as a direct loop over the column rather than through the engine's
    state machine: compare ``rb-2`` with ``rb``; move the right bound down on
    improvement, otherwise pin the left bound next to it.  Adjacent bounds
    resolve to the right one for uncore, and for core to the right one only
    when it lies in the upper half of the ladder.
    """
    while rb - lb > 1:
        if values[rb - 2] < values[rb]:
            rb -= 2
        else:
            lb = rb - 1
    if rb == lb:
        return rb
    if not core:
        return rb
    return rb if 2 * rb > levels - 1 else lb


def oracle_cf_opt(surface: np.ndarray, lb: int = 0, rb: Optional[int] = None) -> OracleResult:
    """Core optimum with the uncore pinned at its maximum."""
    column = np.asarray(surface)[:, -1]
    rb = len(column) - 1 if rb is None else rb
    return OracleResult(descent_opt(column, lb, rb, True, len(column)), int(np.argmin(column)))


def oracle_uf_opt(surface: np.ndarray, cf: int, lb: int = 0, rb: Optional[int] = None) -> OracleResult:
    """Uncore optimum with the core pinned at ``cf``."""
    row = np.asarray(surface)[cf, :]
    rb = len(row) - 1 if rb is None else rb
    return OracleResult(descent_opt(row, lb, rb, False, len(row)), int(np.argmin(row)))


def brute_force_argmin(model: MachineModel, tipi: float) -> FreqPair:
    s = jpi_surface(model, tipi)
    i, j = np.unravel_index(int(np.argmin(s)), s.shape)
    return FreqPair(int(i), int(j))
