"""Experiment runner and report generation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Callable, Optional, Sequence

from tipifreq.frequency import FreqPair, FrequencyGrid
from tipifreq.platform import EndOfRun, PlatformPort, RecordingPort
from tipifreq.policy import (
    CounterSample,
    Decision,
    Engine,
    PolicyConfig,
    PolicyState,
    Reason,
    compute_tipi,
    quantize,
    slab_bounds,
    snapshot,
)
from tipifreq.simulator import MachineModel, ParametricModel, SimulatedPort, WorkloadScript, jpi_surface

FREQUENT_PCT = 10.0
DECISION_FIELDS = ("interval", "elapsed_us", "slab", "cf_mhz", "uf_mhz", "reason")


class UncoreRule(str, Enum):
    PINNED_MAX = "max"
    PINNED_VALUE = "value"
    AUTO = "auto"


@dataclass(frozen=True)
class BaselineSpec:
    """Stand-in for the performance governor: core at max, uncore per ``uf_rule``.

    ``AUTO`` mimics firmware uncore scaling with a threshold on the TIPI slab
    observed in the previous interval.
    """

    uf_rule: UncoreRule = UncoreRule.AUTO
    uf_mhz: Optional[int] = None
    slab_threshold: int = 14
    low_mhz: int = 2200
    high_mhz: int = 3000
    slab_width: float = 0.004

    @classmethod
    def parse(cls, text: str) -> BaselineSpec:
        text = text.strip().lower()
        if text == "auto":
            return cls(UncoreRule.AUTO)
        if text == "max":
            return cls(UncoreRule.PINNED_MAX)
        try:
            return cls(UncoreRule.PINNED_VALUE, uf_mhz=int(text))
        except ValueError:
            raise ValueError(f"baseline must be auto, max or an uncore MHz value, got {text!r}") from None


class BaselinePolicy:
    def __init__(self, spec: BaselineSpec, core_grid: FrequencyGrid, uncore_grid: FrequencyGrid):
        self.spec = spec
        self.core_grid = core_grid
        self.uncore_grid = uncore_grid
        self.cf = core_grid.max_index
        if spec.uf_rule is UncoreRule.PINNED_MAX:
            self.uf = uncore_grid.max_index
        elif spec.uf_rule is UncoreRule.PINNED_VALUE:
            self.uf = uncore_grid.mhz_to_index(spec.uf_mhz)
        else:
            self.low = uncore_grid.mhz_to_index(spec.low_mhz)
            self.high = uncore_grid.mhz_to_index(spec.high_mhz)
            self.uf = self.high

    @property
    def initial(self) -> FreqPair:
        return FreqPair(self.cf, self.uf)

    def step(self, sample: CounterSample) -> Decision:
        slab = None
        if sample.instructions > 0:
            slab = quantize(compute_tipi(sample), self.spec.slab_width)
            if self.spec.uf_rule is UncoreRule.AUTO:
                self.uf = self.high if slab >= self.spec.slab_threshold else self.low
        return Decision(FreqPair(self.cf, self.uf), Reason.SETTLED, slab)


@dataclass
class RunConfig:
    policy: PolicyConfig
    model: MachineModel
    script: WorkloadScript
    baseline: BaselineSpec = field(default_factory=BaselineSpec)

    def __post_init__(self) -> None:
        if self.policy.core_grid != self.model.core_grid or self.policy.uncore_grid != self.model.uncore_grid:
            raise ValueError("policy and machine model use different frequency grids")


@dataclass
class SlabStat:
    index: int
    tipi_lo: float
    tipi_hi: float
    intervals: int
    occupancy_pct: float
    frequent: bool
    cf_opt_mhz: Optional[int]
    uf_opt_mhz: Optional[int]


@dataclass
class RunReport:
    total_energy_j: float
    total_time_s: float
    intervals: int
    slabs: list[SlabStat]
    decisions: list[tuple[int, int, Optional[int], int, int, str]]
    final_state: Optional[PolicyState] = None

    @property
    def edp(self) -> float:
        return self.total_energy_j * self.total_time_s

    @property
    def frequent_slabs(self) -> list[SlabStat]:
        return [s for s in self.slabs if s.frequent]

    def to_dict(self, decisions_csv: str = "decisions.csv") -> dict:
        return {
            "energy_j": self.total_energy_j,
            "time_s": self.total_time_s,
            "edp": self.edp,
            "slabs": [
                {
                    "index": s.index,
                    "tipi_lo": s.tipi_lo,
                    "tipi_hi": s.tipi_hi,
                    "occupancy_pct": s.occupancy_pct,
                    "frequent": s.frequent,
                    "cf_opt_mhz": s.cf_opt_mhz,
                    "uf_opt_mhz": s.uf_opt_mhz,
                }
                for s in self.slabs
            ],
            "decisions_csv": decisions_csv,
        }

    def decisions_text(self) -> str:
        buf = io.StringIO()
        write_decisions(buf, self.decisions)
        return buf.getvalue()


def write_decisions(sink: IO[str], rows) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(DECISION_FIELDS)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])


def slab_statistics(
    slab_counts: dict[int, int],
    slab_width: float,
    state: Optional[PolicyState] = None,
) -> list[SlabStat]:
    """Occupancy per slab; a slab is frequent when it holds more than 10% of intervals."""
    total = sum(slab_counts.values())
    out = []
    for slab in sorted(slab_counts):
        n = slab_counts[slab]
        pct = 100.0 * n / total if total else 0.0
        cf_mhz = uf_mhz = None
        if state is not None:
            node = state.node(slab)
            if node is not None:
                cfg = state.config
                cf_mhz = None if node.cf.opt is None else cfg.core_grid.index_to_mhz(node.cf.opt)
                uf_mhz = None if node.uf.opt is None else cfg.uncore_grid.index_to_mhz(node.uf.opt)
        lo, hi = slab_bounds(slab, slab_width)
        out.append(SlabStat(slab, lo, hi, n, pct, pct > FREQUENT_PCT, cf_mhz, uf_mhz))
    return out


def drive(
    port: PlatformPort,
    decide: Callable[[CounterSample], Decision],
    initial: FreqPair,
    max_intervals: Optional[int] = None,
) -> tuple[list[CounterSample], list[Decision]]:
    """Read, decide, apply until the port runs dry."""
    port.apply(initial)
    samples: list[CounterSample] = []
    decisions: list[Decision] = []
    while max_intervals is None or len(samples) < max_intervals:
        try:
            sample = port.read_counters()
        except EndOfRun:
            break
        d = decide(sample)
        port.apply(d.pair)
        samples.append(sample)
        decisions.append(d)
    return samples, decisions


def _report(
    samples: Sequence[CounterSample],
    decisions: Sequence[Decision],
    core_grid: FrequencyGrid,
    uncore_grid: FrequencyGrid,
    slab_width: float,
    state: Optional[PolicyState],
) -> RunReport:
    rows = []
    elapsed = 0
    energy_uj = 0.0
    counts: dict[int, int] = {}
    for i, (s, d) in enumerate(zip(samples, decisions)):
        elapsed += s.elapsed_us
        energy_uj += s.energy_uj
        if d.reason is not Reason.WARMUP and d.slab is not None:
            counts[d.slab] = counts.get(d.slab, 0) + 1
        rows.append((
            i, elapsed, d.slab,
            core_grid.index_to_mhz(d.pair.cf), uncore_grid.index_to_mhz(d.pair.uf),
            d.reason.value,
        ))
    return RunReport(
        total_energy_j=energy_uj * 1e-6,
        total_time_s=elapsed * 1e-6,
        intervals=sum(counts.values()),
        slabs=slab_statistics(counts, slab_width, state),
        decisions=rows,
        final_state=state,
    )


def run_policy_on_port(port: PlatformPort, policy: PolicyConfig) -> RunReport:
    engine = Engine(policy)
    samples, decisions = drive(port, engine.step, policy.max_pair)
    state = engine.stop()
    return _report(samples, decisions, policy.core_grid, policy.uncore_grid, policy.slab_width, state)


def run(config: RunConfig, trace_sink: Optional[IO[str]] = None) -> RunReport:
    """Simulate the workload under the engine, one ``t_inv`` per interval."""
    port: PlatformPort = SimulatedPort(config.model, config.script, config.policy.t_inv_us)
    if trace_sink is not None:
        port = RecordingPort(port, trace_sink)
    return run_policy_on_port(port, config.policy)


def run_baseline(config: RunConfig) -> RunReport:
    port = SimulatedPort(config.model, config.script, config.policy.t_inv_us)
    base = BaselinePolicy(config.baseline, config.model.core_grid, config.model.uncore_grid)
    samples, decisions = drive(port, base.step, base.initial)
    return _report(
        samples, decisions, config.model.core_grid, config.model.uncore_grid, config.policy.slab_width, None
    )


@dataclass(frozen=True)
class Comparison:
    energy_savings_pct: float
    slowdown_pct: float
    edp_savings_pct: float

    def to_dict(self) -> dict:
        return {
            "energy_savings_pct": self.energy_savings_pct,
            "slowdown_pct": self.slowdown_pct,
            "edp_savings_pct": self.edp_savings_pct,
        }


def compare_totals(e_new: float, t_new: float, e_ref: float, t_ref: float) -> Comparison:
    if e_ref <= 0 or t_ref <= 0:
        raise ValueError("baseline energy and time must be positive")
    return Comparison(
        energy_savings_pct=(1.0 - e_new / e_ref) * 100.0,
        slowdown_pct=(t_new / t_ref - 1.0) * 100.0,
        edp_savings_pct=(1.0 - (e_new * t_new) / (e_ref * t_ref)) * 100.0,
    )


def compare(report: RunReport, baseline: RunReport) -> Comparison:
    return compare_totals(report.total_energy_j, report.total_time_s, baseline.total_energy_j, baseline.total_time_s)


def geomean(values: Sequence[float]) -> float:
    if not values or any(v <= 0 for v in values):
        raise ValueError("geomean needs positive values")
    return math.exp(sum(math.log(v) for v in values) / len(values))


@dataclass(frozen=True)
class SweepRow:
    t_inv_ms: float
    energy_savings_pct: float
    slowdown_pct: float


def sweep_tinv(
    config: RunConfig,
    values_ms: Sequence[float],
    scripts: Optional[Sequence[WorkloadScript]] = None,
) -> list[SweepRow]:
    """Engine-vs-baseline savings for each ``t_inv``, geomean over ``scripts``."""
    scripts = list(scripts) if scripts else [config.script]
    rows = []
    for ms in values_ms:
        if not ms > 0:
            raise ValueError(f"t_inv must be positive, got {ms}")
        t_inv_us = int(round(ms * 1000))
        e_ratios, t_ratios = [], []
        for script in scripts:
            cfg = replace(config, policy=replace(config.policy, t_inv_us=t_inv_us), script=script)
            ours, base = run(cfg), run_baseline(cfg)
            e_ratios.append(ours.total_energy_j / base.total_energy_j)
            t_ratios.append(ours.total_time_s / base.total_time_s)
        rows.append(SweepRow(ms, (1 - geomean(e_ratios)) * 100, (geomean(t_ratios) - 1) * 100))
    return rows


@dataclass(frozen=True)
class MotivationTable:
    slabs: list[int]
    core_mhz: list[int]  # min, mid, max at uncore max
    uncore_mhz: list[int]  # min, mid, max at core max
    core_jpi: list[list[float]]  # [frequency][slab]
    uncore_jpi: list[list[float]]

    def to_dict(self) -> dict:
        return {
            "slabs": self.slabs,
            "core_sweep": {"mhz": self.core_mhz, "jpi": self.core_jpi},
            "uncore_sweep": {"mhz": self.uncore_mhz, "jpi": self.uncore_jpi},
        }


def motivational_sweep(model: MachineModel, slabs: Sequence[int], slab_width: float = 0.004) -> MotivationTable:
    """JPI at slab centres for core {min, mid, max} (uncore max) and uncore {min, mid, max} (core max)."""
    cg, ug = model.core_grid, model.uncore_grid
    core_idx = [0, cg.levels // 2, cg.max_index]
    unc_idx = [0, ug.levels // 2, ug.max_index]
    core_rows = [[0.0] * len(slabs) for _ in core_idx]
    unc_rows = [[0.0] * len(slabs) for _ in unc_idx]
    for k, slab in enumerate(slabs):
        surface = jpi_surface(model, (slab + 0.5) * slab_width)
        for r, i in enumerate(core_idx):
            core_rows[r][k] = float(surface[i, ug.max_index])
        for r, j in enumerate(unc_idx):
            unc_rows[r][k] = float(surface[cg.max_index, j])
    return MotivationTable(
        list(slabs),
        [cg.index_to_mhz(i) for i in core_idx],
        [ug.index_to_mhz(j) for j in unc_idx],
        core_rows,
        unc_rows,
    )


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def state_json(state: PolicyState) -> str:
    return dumps(snapshot(state))


def default_run_config(script: WorkloadScript, **policy_kw) -> RunConfig:
    model = ParametricModel()
    return RunConfig(PolicyConfig(**policy_kw), model, script)
