"""The frequency-selection engine.

Every ``t_inv`` the engine receives one :class:`CounterSample`, derives the
TIPI (LLC table-of-request inserts per instruction) and JPI (joules per
instruction) of that interval, files the interval under a fixed-width TIPI
slab and returns the core/uncore pair to run next.

Per slab the engine keeps a :class:`TipiNode` in a list sorted by slab.  A
node first searches its core frequency with the uncore pinned at maximum,
stepping down two levels at a time from the right bound; afterwards it
searches the uncore inside a window predicted from the core optimum.  Bounds
learned by one slab are pushed to its neighbours: a lower slab (more
compute-bound) never wants a lower core frequency or a higher uncore
frequency than a higher slab.

The engine is a plain state machine with no clock, I/O or threads, so an
identical sample sequence always yields an identical decision sequence.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from tipifreq.frequency import FreqPair, FrequencyGrid, haswell_grids

# Guards floor(tipi / width) against 0.012 / 0.004 == 2.9999999999999996.
_SLAB_EPS = 1e-9


class ZeroInstructions(ValueError):
    """A sample retired no instructions, so TIPI and JPI are undefined."""


class PolicyStopped(RuntimeError):
    pass


class Variant(str, Enum):
    FULL = "full"
    CORE = "core"  # uncore pinned at maximum
    UNCORE = "uncore"  # core pinned at maximum


class Phase(str, Enum):
    WARMUP = "warmup"
    RUNNING = "running"
    STOPPED = "stopped"


class Reason(str, Enum):
    WARMUP = "warmup"
    EXPLORING_CF = "exploring_cf"
    EXPLORING_UF = "exploring_uf"
    SETTLED = "settled"
    TRANSITION = "transition_discard"


class Domain(str, Enum):
    CF = "cf"
    UF = "uf"


class Change(Enum):
    RB_LOWERED = "rb_lowered"
    LB_RAISED = "lb_raised"
    OPT_SET = "opt_set"


@dataclass(frozen=True)
class CounterSample:
    """Counter deltas over one sampling interval."""

    tor_local: int
    tor_remote: int
    instructions: int
    energy_uj: float
    elapsed_us: int

    def __post_init__(self) -> None:
        for name in ("tor_local", "tor_remote", "instructions", "energy_uj", "elapsed_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(slots=True)
class JpiAccumulator:
    total: float = 0.0
    count: int = 0


@dataclass(slots=True)
class DomainState:
    lb: int
    rb: int
    opt: Optional[int] = None
    table: dict[int, JpiAccumulator] = field(default_factory=dict)
    estimated: bool = False

    def record(self, freq: int, jpi: float, window: int) -> bool:
        acc = self.table.get(freq)
        if acc is None:
            acc = self.table[freq] = JpiAccumulator()
        if acc.count >= window:
            return False
        acc.total += jpi
        acc.count += 1
        return True

    def average(self, freq: int, window: int) -> Optional[float]:
        acc = self.table.get(freq)
        if acc is None or acc.count < window:
            return None
        return acc.total / acc.count

    def readings(self, freq: int) -> int:
        acc = self.table.get(freq)
        return 0 if acc is None else acc.count


@dataclass(slots=True)
class TipiNode:
    slab: int
    cf: DomainState
    uf: DomainState
    occurrences: int = 0

    def domain(self, d: Domain) -> DomainState:
        return self.cf if d is Domain.CF else self.uf


@dataclass
class PolicyConfig:
    t_inv_us: int = 20_000
    warmup_us: int = 2_000_000
    slab_width: float = 0.004
    avg_window: int = 10
    variant: Variant = Variant.FULL
    core_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[0])
    uncore_grid: FrequencyGrid = field(default_factory=lambda: haswell_grids()[1])
    range_multiplier: int = 4

    def __post_init__(self) -> None:
        self.variant = Variant(self.variant)
        if self.t_inv_us <= 0:
            raise ValueError("t_inv_us must be positive")
        if self.warmup_us < 0:
            raise ValueError("warmup_us must be non-negative")
        if self.avg_window < 1:
            raise ValueError("avg_window must be at least 1")
        if not self.slab_width > 0:
            raise ValueError("slab_width must be positive")
        if self.range_multiplier < 1:
            raise ValueError("range_multiplier must be at least 1")

    def grid(self, d: Domain) -> FrequencyGrid:
        return self.core_grid if d is Domain.CF else self.uncore_grid

    @property
    def max_pair(self) -> FreqPair:
        return FreqPair(self.core_grid.max_index, self.uncore_grid.max_index)

    def to_dict(self) -> dict:
        return {
            "t_inv_us": self.t_inv_us,
            "warmup_us": self.warmup_us,
            "slab_width": self.slab_width,
            "avg_window": self.avg_window,
            "variant": self.variant.value,
            "core_grid": self.core_grid.to_dict(),
            "uncore_grid": self.uncore_grid.to_dict(),
            "range_multiplier": self.range_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PolicyConfig:
        kw = dict(d)
        for key in ("core_grid", "uncore_grid"):
            if key in kw:
                kw[key] = FrequencyGrid.from_dict(kw[key])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown policy config keys: {sorted(unknown)}")
        return cls(**kw)


@dataclass
class PolicyState:
    config: PolicyConfig
    nodes: list[TipiNode] = field(default_factory=list)
    slabs: list[int] = field(default_factory=list)  # parallel to nodes, for bisect
    prev_slab: Optional[int] = None
    prev_pair: FreqPair = FreqPair(0, 0)
    phase: Phase = Phase.WARMUP
    interval_count: int = 0
    elapsed_us: int = 0

    def __post_init__(self) -> None:
        self.prev_pair = self.config.max_pair

    def node(self, slab: int) -> Optional[TipiNode]:
        i = bisect.bisect_left(self.slabs, slab)
        if i < len(self.slabs) and self.slabs[i] == slab:
            return self.nodes[i]
        return None


@dataclass(frozen=True, slots=True)
class Decision:
    pair: FreqPair
    reason: Reason
    slab: Optional[int] = None


# -- metrics -----------------------------------------------------------------


def compute_tipi(s: CounterSample) -> float:
    if s.instructions <= 0:
        raise ZeroInstructions("sample retired no instructions")
    return (s.tor_local + s.tor_remote) / s.instructions


def compute_jpi(s: CounterSample) -> float:
    if s.instructions <= 0:
        raise ZeroInstructions("sample retired no instructions")
    return s.energy_uj * 1e-6 / s.instructions


def quantize(tipi: float, slab_width: float = 0.004) -> int:
    """Slab index of ``tipi``; a value on a slab edge belongs to the upper slab."""
    if tipi < 0 or math.isnan(tipi):
        raise ValueError(f"TIPI must be non-negative, got {tipi}")
    return int(math.floor(tipi / slab_width + _SLAB_EPS))


def slab_bounds(slab: int, slab_width: float = 0.004) -> tuple[float, float]:
    return round(slab * slab_width, 9), round((slab + 1) * slab_width, 9)


# -- exploration primitives --------------------------------------------------


def estimate_uf_range(
    cf_opt: int,
    core_grid: FrequencyGrid,
    uncore_grid: FrequencyGrid,
    multiplier: int = 4,
) -> tuple[int, int]:
    """Uncore search window predicted from the core optimum.

    The optimum is assumed to lie on the line joining (core max, uncore min)
    and (core min, uncore max); the window is ``multiplier`` times the
    uncore/core level ratio wide, shifted back inside the grid when it would
    spill over an edge.  Everything is in index units.
    """
    umax = uncore_grid.max_index
    width = multiplier * uncore_grid.levels // core_grid.levels
    half = width // 2
    slope = Fraction(uncore_grid.levels - 1, core_grid.levels - 1)
    est = umax - math.floor(slope * cf_opt + Fraction(1, 2))
    lb = max(0, est - half)
    rb = min(umax, est + half)
    if umax - est <= half:
        lb -= est + half - umax
    if est <= half:
        rb += half - est
    lb = min(max(lb, 0), umax)
    rb = min(max(rb, 0), umax)
    return min(lb, rb), max(lb, rb)


def uf_estimate_center(cf_opt: int, core_grid: FrequencyGrid, uncore_grid: FrequencyGrid) -> int:
    slope = Fraction(uncore_grid.levels - 1, core_grid.levels - 1)
    return uncore_grid.max_index - math.floor(slope * cf_opt + Fraction(1, 2))


def resolve_adjacent(d: DomainState, domain: Domain, grid: FrequencyGrid) -> int:
    """Pick the optimum once the bounds are one level apart.

    Uncore: the right bound.  Core: the right bound when it sits in the upper
    half of the ladder (compute-bound, protect performance), otherwise the
    left bound (memory-bound, save energy).
    """
    assert d.rb - d.lb == 1, (d.lb, d.rb)
    if domain is Domain.UF or 2 * d.rb > grid.max_index:
        d.opt = d.rb
    else:
        d.opt = d.lb
    return d.opt


def _clamps(domain: Domain, change: Change, src: DomainState) -> list[tuple[int, str, int]]:
    """(direction, bound, value) clamps implied by a bound change at ``src``.

    direction +1 means every node to the right of the origin, -1 to the left.
    Core optima fall as TIPI grows; uncore optima rise.
    """
    if change is Change.OPT_SET:
        v = src.opt
        if domain is Domain.CF:
            return [(-1, "lb", v), (+1, "rb", v)]
        return [(+1, "lb", v), (-1, "rb", v)]
    if change is Change.RB_LOWERED:
        return [(+1 if domain is Domain.CF else -1, "rb", src.rb)]
    return [(-1 if domain is Domain.CF else +1, "lb", src.lb)]


def propagate_bounds(nodes: list[TipiNode], origin: int, domain: Domain, change: Change) -> None:
    """Clamp the bounds of every other node consistent with ``origin``'s change.

    Clamps only ever narrow.  A node whose bounds meet gets its optimum set on
    the spot and propagates that in turn.  Nodes with a known optimum are left
    alone.
    """
    work = [(origin, change)]
    while work:
        pos, ch = work.pop()
        src = nodes[pos].domain(domain)
        for direction, bound, value in _clamps(domain, ch, src):
            targets = range(pos + 1, len(nodes)) if direction > 0 else range(pos - 1, -1, -1)
            for j in targets:
                t = nodes[j].domain(domain)
                if t.opt is not None:
                    continue
                if bound == "rb":
                    if value >= t.rb:
                        continue
                    t.rb = max(value, t.lb)
                else:
                    if value <= t.lb:
                        continue
                    t.lb = min(value, t.rb)
                if t.lb == t.rb:
                    t.opt = t.rb
                    work.append((j, Change.OPT_SET))


def narrow_on_insert(nodes: list[TipiNode], pos: int, grid: FrequencyGrid) -> None:
    """Seed a new node's core bounds from its neighbours."""
    d = nodes[pos].cf
    lb, rb = 0, grid.max_index
    if pos + 1 < len(nodes):
        right = nodes[pos + 1].cf
        lb = max(lb, right.opt if right.opt is not None else right.lb)
    if pos > 0:
        left = nodes[pos - 1].cf
        rb = min(rb, left.opt if left.opt is not None else left.rb)
    if lb > rb:
        lb = rb
    d.lb, d.rb = lb, rb


def narrow_uf_range(nodes: list[TipiNode], pos: int, lb: int, rb: int, center: int) -> None:
    """Install a predicted uncore window on ``nodes[pos]``, tightened by neighbours.

    Bounds already pushed onto the node by earlier propagation are kept.  If
    the neighbours contradict each other the window collapses onto whichever
    bound lies nearer the predicted optimum.
    """
    d = nodes[pos].uf
    lb = max(lb, d.lb)
    rb = min(rb, d.rb)
    if pos + 1 < len(nodes):
        right = nodes[pos + 1].uf
        rb = min(rb, right.opt if right.opt is not None else right.rb)
    if pos > 0:
        left = nodes[pos - 1].uf
        lb = max(lb, left.opt if left.opt is not None else left.lb)
    if lb > rb:
        lb = rb = lb if abs(lb - center) < abs(rb - center) else rb
    d.lb, d.rb = lb, rb
    d.estimated = True
    if lb == rb:
        d.opt = lb
        propagate_bounds(nodes, pos, Domain.UF, Change.OPT_SET)


def find(
    nodes: list[TipiNode],
    pos: int,
    domain: Domain,
    jpi: float,
    current: int,
    prev_equals_curr: bool,
    config: PolicyConfig,
) -> int:
    """One exploration step for ``domain`` of ``nodes[pos]``; returns the next frequency.

    ``current`` is the frequency the reading ``jpi`` was measured at.  The
    reading only counts when the previous interval fell in the same slab.
    """
    d = nodes[pos].domain(domain)
    if d.opt is not None:
        return d.opt
    if d.lb == d.rb:
        d.opt = d.rb
        propagate_bounds(nodes, pos, domain, Change.OPT_SET)
        return d.opt
    if d.rb - d.lb == 1:
        resolve_adjacent(d, domain, config.grid(domain))
        propagate_bounds(nodes, pos, domain, Change.OPT_SET)
        return d.opt

    window = config.avg_window
    if prev_equals_curr:
        d.record(current, jpi, window)

    at_rb = d.average(d.rb, window)
    if at_rb is None:
        return d.rb
    probe = d.rb - 2
    at_probe = d.average(probe, window)
    if at_probe is None:
        return probe

    if at_probe < at_rb:
        d.rb = probe
        nxt = d.rb - 2 if d.rb - d.lb > 2 else d.lb
        change = Change.RB_LOWERED
    else:
        d.lb = d.rb - 1
        nxt = d.lb
        change = Change.LB_RAISED
    if d.lb == d.rb:
        d.opt = nxt = d.rb
        change = Change.OPT_SET
    propagate_bounds(nodes, pos, domain, change)
    return nxt


# -- engine ------------------------------------------------------------------


class Engine:
    """Owns one :class:`PolicyState` and advances it a sample at a time.

    Not thread-safe; ``step`` and ``stop`` must be called serially.
    """

    def __init__(self, config: Optional[PolicyConfig] = None):
        self.config = config or PolicyConfig()
        self.state = PolicyState(self.config)

    @property
    def nodes(self) -> list[TipiNode]:
        return self.state.nodes

    def step(self, sample: CounterSample) -> Decision:
        st = self.state
        cfg = self.config
        if st.phase is Phase.STOPPED:
            raise PolicyStopped("step() called after stop()")

        if st.elapsed_us < cfg.warmup_us:
            st.elapsed_us += sample.elapsed_us
            st.interval_count += 1
            st.prev_pair = cfg.max_pair
            return Decision(cfg.max_pair, Reason.WARMUP, None)

        tipi = compute_tipi(sample)
        jpi = compute_jpi(sample)
        slab = quantize(tipi, cfg.slab_width)
        st.elapsed_us += sample.elapsed_us
        st.interval_count += 1
        st.phase = Phase.RUNNING

        pos = bisect.bisect_left(st.slabs, slab)
        if pos < len(st.slabs) and st.slabs[pos] == slab:
            pair = self._revisit(pos, jpi, st.prev_slab == slab)
        else:
            pair = self._insert(pos, slab, jpi)
        node = st.nodes[pos]
        node.occurrences += 1

        if node.cf.opt is not None and node.uf.opt is not None:
            reason = Reason.SETTLED
        elif st.prev_slab is not None and st.prev_slab != slab:
            reason = Reason.TRANSITION
        elif node.cf.opt is None:
            reason = Reason.EXPLORING_CF
        else:
            reason = Reason.EXPLORING_UF

        st.prev_slab = slab
        st.prev_pair = pair
        return Decision(pair, reason, slab)

    def stop(self) -> PolicyState:
        self.state.phase = Phase.STOPPED
        return self.state

    # Algorithm branches ----------------------------------------------------

    def _insert(self, pos: int, slab: int, jpi: float) -> FreqPair:
        cfg = self.config
        st = self.state
        cmax, umax = cfg.core_grid.max_index, cfg.uncore_grid.max_index
        node = TipiNode(slab, DomainState(0, cmax), DomainState(0, umax))
        st.nodes.insert(pos, node)
        st.slabs.insert(pos, slab)

        if cfg.variant is Variant.UNCORE:
            node.cf.lb = node.cf.opt = cmax
            center = uf_estimate_center(cmax, cfg.core_grid, cfg.uncore_grid)
            narrow_uf_range(st.nodes, pos, 0, umax, center)
            uf = find(st.nodes, pos, Domain.UF, jpi, st.prev_pair.uf, False, cfg)
            return FreqPair(cmax, uf)

        if len(st.nodes) > 1:
            narrow_on_insert(st.nodes, pos, cfg.core_grid)
        cf = find(st.nodes, pos, Domain.CF, jpi, st.prev_pair.cf, False, cfg)
        if cfg.variant is Variant.CORE and node.cf.opt is not None:
            node.uf.opt = umax
        return FreqPair(cf, umax)

    def _revisit(self, pos: int, jpi: float, prev_eq: bool) -> FreqPair:
        cfg = self.config
        st = self.state
        node = st.nodes[pos]
        umax = cfg.uncore_grid.max_index
        core_only = cfg.variant is Variant.CORE

        if core_only and node.cf.opt is not None:
            node.uf.opt = umax

        if node.cf.opt is None:
            cf = find(st.nodes, pos, Domain.CF, jpi, st.prev_pair.cf, prev_eq, cfg)
            uf = umax
            if node.cf.opt is not None:
                if core_only:
                    node.uf.opt = umax
                elif node.uf.opt is not None:
                    uf = node.uf.opt
                else:
                    uf = self._begin_uf(pos)
            return FreqPair(cf, uf)

        if node.uf.opt is None:
            if not node.uf.estimated:
                return FreqPair(node.cf.opt, self._begin_uf(pos))
            uf = find(st.nodes, pos, Domain.UF, jpi, st.prev_pair.uf, prev_eq, cfg)
            return FreqPair(node.cf.opt, uf)

        return FreqPair(node.cf.opt, node.uf.opt)

    def _begin_uf(self, pos: int) -> int:
        cfg = self.config
        node = self.state.nodes[pos]
        cf_opt = node.cf.opt
        lb, rb = estimate_uf_range(cf_opt, cfg.core_grid, cfg.uncore_grid, cfg.range_multiplier)
        center = uf_estimate_center(cf_opt, cfg.core_grid, cfg.uncore_grid)
        narrow_uf_range(self.state.nodes, pos, lb, rb, center)
        return node.uf.opt if node.uf.opt is not None else node.uf.rb


def step(engine: Engine, sample: CounterSample) -> Decision:
    return engine.step(sample)


def stop(engine: Engine) -> PolicyState:
    return engine.stop()


# -- diagnostics -------------------------------------------------------------


def _domain_dict(d: DomainState, grid: FrequencyGrid, with_estimated: bool) -> dict:
    out = {
        "lb": d.lb,
        "rb": d.rb,
        "opt": d.opt,
        "lb_mhz": grid.index_to_mhz(d.lb),
        "rb_mhz": grid.index_to_mhz(d.rb),
        "opt_mhz": None if d.opt is None else grid.index_to_mhz(d.opt),
        "readings": {str(f): acc.count for f, acc in sorted(d.table.items())},
    }
    if with_estimated:
        out["estimated"] = d.estimated
    return out


def snapshot(state: PolicyState) -> dict:
    """JSON-ready view of the engine state (bounds, optima, reading counts)."""
    cfg = state.config
    return {
        "phase": state.phase.value,
        "interval_count": state.interval_count,
        "elapsed_us": state.elapsed_us,
        "prev_slab": state.prev_slab,
        "prev_pair": {
            "cf_mhz": cfg.core_grid.index_to_mhz(state.prev_pair.cf),
            "uf_mhz": cfg.uncore_grid.index_to_mhz(state.prev_pair.uf),
        },
        "config": cfg.to_dict(),
        "nodes": [
            {
                "slab": n.slab,
                "tipi_lo": slab_bounds(n.slab, cfg.slab_width)[0],
                "tipi_hi": slab_bounds(n.slab, cfg.slab_width)[1],
                "occurrences": n.occurrences,
                "cf": _domain_dict(n.cf, cfg.core_grid, False),
                "uf": _domain_dict(n.uf, cfg.uncore_grid, True),
            }
            for n in state.nodes
        ],
    }
