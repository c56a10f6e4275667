"""Shared helpers: synthetic samples, a scripted bench, surface generators and invariant checks."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from tipifreq.frequency import FreqPair, from_letter, hypothetical_grids
from tipifreq.policy import (
    CounterSample, Domain, DomainState, Engine, JpiAccumulator, PolicyConfig, Reason, TipiNode,
)

INSTR = 1_000_000


def sample(slab: int, jpi: float, width: float = 0.004, elapsed_us: int = 20_000) -> CounterSample:
    """A sample whose TIPI sits mid-slab and whose JPI equals ``jpi``."""
    tor = int(round((slab + 0.5) * width * INSTR))
    return CounterSample(tor // 2, tor - tor // 2, INSTR, jpi * INSTR * 1e6, elapsed_us)


def hypo_config(**kw) -> PolicyConfig:
    core, unc = hypothetical_grids()
    kw.setdefault("warmup_us", 0)
    return PolicyConfig(core_grid=core, uncore_grid=unc, **kw)


def L(c: str) -> int:
    return from_letter(c)


class Bench:
    """Feeds an engine samples whose JPI depends on the pair it applied last.

    ``surfaces`` maps slab -> 2-D array indexed [core, uncore].
    """

    def __init__(self, engine: Engine, surfaces: dict):
        self.engine = engine
        self.surfaces = surfaces
        self.pair = engine.config.max_pair
        self.decisions = []
        self.applied = []

    def run(self, slab: int, n: int = 1):
        d = None
        for _ in range(n):
            jpi = float(self.surfaces[slab][self.pair.cf, self.pair.uf])
            self.applied.append((slab, self.pair))
            d = self.engine.step(sample(slab, jpi, self.engine.config.slab_width))
            self.decisions.append(d)
            self.pair = d.pair
        return d

    def run_until(self, slab: int, pred, limit: int = 10_000):
        for _ in range(limit):
            if pred():
                return
            self.run(slab)
        raise AssertionError("condition not reached")

    def node(self, slab: int):
        return self.engine.state.node(slab)


def unimodal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Strictly unimodal vector with a random minimum position (edges included)."""
    k = int(rng.integers(0, n))
    steps = rng.uniform(0.05, 1.0, size=n)
    v = np.empty(n)
    v[k] = 1.0
    for i in range(k - 1, -1, -1):
        v[i] = v[i + 1] + steps[i]
    for i in range(k + 1, n):
        v[i] = v[i - 1] + steps[i]
    return v


def unimodal_surface(rng: np.random.Generator, nc: int, nu: int) -> np.ndarray:
    """f(core) + g(uncore): every row and column is strictly unimodal."""
    return unimodal(rng, nc)[:, None] + unimodal(rng, nu)[None, :]


def monotone_surface(nc: int, nu: int, core_rising: bool, uncore_rising: bool) -> np.ndarray:
    c = np.arange(nc, dtype=float) * (1 if core_rising else -1)
    u = np.arange(nu, dtype=float) * (1 if uncore_rising else -1)
    return 100.0 + c[:, None] + 0.5 * u[None, :]


# -- invariants ---------------------------------------------------------------


@dataclass
class InvariantChecker:
    """Asserts P1-P8 around each engine step."""

    engine: Engine
    opts: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)  # (slab, domain) -> [freq...]
    violations: list = field(default_factory=list)

    def _fail(self, msg):
        self.violations.append(msg)

    def _readings(self):
        out = {}
        for n in self.engine.state.nodes:
            for dom in Domain:
                for f, acc in n.domain(dom).table.items():
                    out[(n.slab, dom, f)] = acc.count
        return out

    def step(self, s: CounterSample):
        eng = self.engine
        st = eng.state
        cfg = eng.config
        before = self._readings()
        prev_slab = st.prev_slab
        pre = {}
        for n in st.nodes:
            pre[n.slab] = {
                d: (n.domain(d).lb, n.domain(d).rb, n.domain(d).estimated,
                    {f: a.count for f, a in n.domain(d).table.items()})
                for d in Domain
            }
        d = eng.step(s)
        after = self._readings()

        if d.reason is not Reason.WARMUP:
            # P7: a slab change never feeds an accumulator.
            if prev_slab is not None and prev_slab != d.slab and before != after:
                self._fail(f"P7: readings changed on transition {prev_slab}->{d.slab}")
            changed = [k for k in after if after[k] != before.get(k, 0)]
            if len(changed) > 1:
                self._fail(f"P7: more than one accumulator moved: {changed}")
            for slab, dom, f in changed:
                self.probes.setdefault((slab, dom), []).append(f)

            # P8: own bound moves only on complete averages.
            if d.slab in pre:
                node = st.node(d.slab)
                for dom in Domain:
                    lb0, rb0, est0, counts = pre[d.slab][dom]
                    ds = node.domain(dom)
                    if ds.estimated != est0 or (ds.lb, ds.rb) == (lb0, rb0):
                        continue
                    for f in (rb0, rb0 - 2):
                        c = counts.get(f, 0) + (1 if (d.slab, dom, f) in changed else 0)
                        if c < cfg.avg_window:
                            self._fail(f"P8: slab {d.slab} {dom.value} moved with {c} readings at {f}")

        self.check_state()
        return d

    def check_state(self):
        st = self.engine.state
        cfg = self.engine.config
        nodes = st.nodes
        if [n.slab for n in nodes] != sorted({n.slab for n in nodes}):
            self._fail("list not strictly sorted")
        for n in nodes:
            for dom in Domain:
                ds = n.domain(dom)
                top = cfg.grid(dom).max_index
                # P1
                if not (0 <= ds.lb <= ds.rb <= top):
                    self._fail(f"P1: slab {n.slab} {dom.value} bounds {ds.lb}..{ds.rb}")
                if ds.opt is not None and not (ds.lb <= ds.opt <= ds.rb):
                    self._fail(f"P1: slab {n.slab} {dom.value} opt {ds.opt} outside {ds.lb}..{ds.rb}")
                # P4
                key = (n.slab, dom)
                if key in self.opts and self.opts[key] != ds.opt:
                    self._fail(f"P4: slab {n.slab} {dom.value} opt {self.opts[key]} -> {ds.opt}")
                if ds.opt is not None:
                    self.opts[key] = ds.opt
                # P6
                measured = [f for f, a in ds.table.items() if a.count]
                if len(measured) > math.ceil(cfg.grid(dom).levels / 2) + 1:
                    self._fail(f"P6: slab {n.slab} {dom.value} probed {sorted(measured)}")
        for left, right in zip(nodes, nodes[1:]):
            # P2: core optima do not rise with TIPI.
            if right.cf.opt is not None and left.cf.opt is None and left.cf.lb < right.cf.opt:
                self._fail(f"P2: slab {left.slab} cf.lb {left.cf.lb} < right opt {right.cf.opt}")
            if left.cf.opt is None and right.cf.opt is None and right.cf.rb > left.cf.rb:
                self._fail(f"P2: slab {right.slab} cf.rb {right.cf.rb} > left rb {left.cf.rb}")
            # P3: uncore optima do not fall with TIPI.
            if (left.uf.opt is not None and right.uf.opt is None and right.uf.estimated
                    and right.uf.lb < left.uf.opt):
                self._fail(f"P3: slab {right.slab} uf.lb {right.uf.lb} < left opt {left.uf.opt}")

    def check_probe_order(self):
        """P5: each node's measured frequencies descend, allowing one upward correction."""
        for (slab, dom), seq in self.probes.items():
            distinct = [f for i, f in enumerate(seq) if i == 0 or seq[i - 1] != f]
            ups = sum(1 for a, b in zip(distinct, distinct[1:]) if b > a)
            if ups > 1:
                self._fail(f"P5: slab {slab} {dom.value} probe order {distinct}")


# -- hand-built states for the worked examples ----------------------------------


def seed(engine: Engine, slab: int, cf=(0, None), uf=(0, None), cf_opt=None, uf_opt=None, uf_estimated=False):
    """Insert a node with explicit bounds; ``cf``/``uf`` are (lb, rb) with rb None meaning grid max."""
    cfg = engine.config
    st = engine.state
    cf_rb = cfg.core_grid.max_index if cf[1] is None else cf[1]
    uf_rb = cfg.uncore_grid.max_index if uf[1] is None else uf[1]
    node = TipiNode(slab, DomainState(cf[0], cf_rb, cf_opt), DomainState(uf[0], uf_rb, uf_opt, estimated=uf_estimated))
    pos = bisect.bisect_left(st.slabs, slab)
    st.nodes.insert(pos, node)
    st.slabs.insert(pos, slab)
    return node


def fill(node, domain: Domain, freq: int, jpi: float, count: int = 10) -> None:
    acc = node.domain(domain).table.setdefault(freq, JpiAccumulator())
    acc.total = jpi * count
    acc.count = count


def resume(bench: Bench, slab: int, pair: FreqPair) -> None:
    """Pretend the previous interval ran in ``slab`` with ``pair`` applied afterwards."""
    bench.engine.state.prev_slab = slab
    bench.engine.state.prev_pair = pair
    bench.pair = pair
