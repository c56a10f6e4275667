import math

import numpy as np
import pytest

from tipifreq.frequency import FreqPair, haswell_grids, hypothetical_grids
from tipifreq.platform import EndOfRun
from tipifreq.simulator import (
    ParametricModel,
    SimClock,
    SimulatedPort,
    TabularModel,
    WorkloadScript,
    WorkPhase,
    advance,
    brute_force_argmin,
    descent_opt,
    jpi_surface,
    model_from_dict,
    oracle_cf_opt,
    oracle_uf_opt,
    power,
    throughput,
)

CORE, UNC = haswell_grids()
MAXP = FreqPair(CORE.max_index, UNC.max_index)


def script(*phases, seed=0):
    return WorkloadScript(tuple(WorkPhase(*p) for p in phases), seed)


def test_throughput_arithmetic_with_reference_coefficients():
    m = ParametricModel(a_cycles_per_instr=0.5, m_cycles_per_miss=300.0)
    # cf 1.2 GHz, uf 3.0 GHz, tipi 0.1: 1 / (0.4167 + 10.0) per ns
    assert throughput(m, 0.1, FreqPair(0, 18)) == pytest.approx(1e9 / (0.5 / 1.2 + 10.0), rel=1e-12)
    assert throughput(m, 0.1, FreqPair(0, 18)) == pytest.approx(9.6e7, rel=0.01)


def test_throughput_without_memory_term():
    m = ParametricModel()
    t = [throughput(m, 0.0, FreqPair(0, uf)) for uf in range(UNC.levels)]
    assert max(t) == min(t) == pytest.approx(1.2e9 / m.a_cycles_per_instr)
    # 1.2 -> 2.4 GHz would be index 12, past the ladder; use 1.2 -> 1.8 scaling instead
    assert throughput(m, 0.0, FreqPair(6, 0)) / throughput(m, 0.0, FreqPair(0, 0)) == pytest.approx(1.5)


def test_power_arithmetic_with_reference_coefficients():
    m = ParametricModel(pc_core_coeff=1.5, pu_uncore_coeff=2.0)
    assert power(m, FreqPair(11, 18)) == pytest.approx(76.25 + 0.0005, abs=1e-3)
    assert power(m, FreqPair(11, 18)) == pytest.approx(40 + 1.5 * 2.3**3 + 2.0 * 9.0, rel=1e-12)


def test_power_strictly_increasing():
    m = ParametricModel()
    p = np.array([[m.power(FreqPair(c, u)) for u in range(UNC.levels)] for c in range(CORE.levels)])
    assert np.all(np.diff(p, axis=0) > 0) and np.all(np.diff(p, axis=1) > 0)


def test_default_surface_unimodal_per_axis():
    m = ParametricModel()
    for slab in range(26):
        s = jpi_surface(m, (slab + 0.5) * 0.004)
        for vec in list(s) + list(s.T):
            k = int(np.argmin(vec))
            assert np.all(np.diff(vec[: k + 1]) < 0) and np.all(np.diff(vec[k:]) > 0)


def test_default_directional_argmins():
    m = ParametricModel()
    low = brute_force_argmin(m, 0.002)
    assert low.cf == CORE.max_index and low.uf <= UNC.max_index // 3
    high = brute_force_argmin(m, 0.066)
    assert high.cf <= CORE.max_index // 3 and high.uf > UNC.max_index // 2


def test_advance_splits_phase_boundary():
    m = ParametricModel()
    rate0 = m.throughput(0.0, MAXP)
    s = script((int(rate0 * 0.01), 0.0), (10**12, 0.1))
    clock = SimClock()
    sample = advance(m, s, clock, MAXP, 20_000, np.random.default_rng(0))
    n1 = int(rate0 * 0.01)
    n2 = sample.instructions - n1
    assert n2 > 0 and clock.phase == 1
    tipi = (sample.tor_local + sample.tor_remote) / sample.instructions
    assert abs(tipi * sample.instructions - 0.1 * n2) <= 0.5 + 1e-6
    assert sample.elapsed_us == 20_000


def test_advance_final_interval_is_short_and_then_ends():
    m = ParametricModel()
    s = script((1_000_000, 0.01))
    clock = SimClock()
    rng = np.random.default_rng(0)
    sample = advance(m, s, clock, MAXP, 20_000, rng)
    assert sample.instructions == 1_000_000
    assert sample.elapsed_us == math.ceil(1e6 / m.throughput(0.01, MAXP) * 1e6)
    with pytest.raises(EndOfRun):
        advance(m, s, clock, MAXP, 20_000, rng)


def test_energy_is_power_times_time_without_noise():
    m = ParametricModel()
    port = SimulatedPort(m, script((5 * 10**8, 0.03)), 20_000)
    total_e = total_t = 0.0
    while True:
        try:
            s = port.read_counters()
        except EndOfRun:
            break
        total_e += s.energy_uj
        total_t += s.elapsed_us
    assert total_e == pytest.approx(m.power(MAXP) * total_t, rel=1e-12)


def test_tor_split_and_noise_determinism():
    m = ParametricModel()
    s = script((10**9, 0.05, 0.1), seed=3)
    a = [SimulatedPort(m, s, 20_000).read_counters() for _ in range(2)]
    assert a[0] == a[1]
    assert abs(a[0].tor_local - a[0].tor_remote) <= 1
    other = SimulatedPort(m, s.with_seed(4), 20_000).read_counters()
    assert other.energy_uj != a[0].energy_uj and other.instructions == a[0].instructions


def test_script_validation_and_round_trip():
    with pytest.raises(ValueError):
        WorkloadScript(())
    with pytest.raises(ValueError):
        WorkPhase(0, 0.1)
    with pytest.raises(ValueError):
        WorkPhase(10, -0.1)
    s = script((10, 0.1, 0.2), (5, 0.0), seed=9)
    assert WorkloadScript.from_dict(s.to_dict()) == s


def test_tabular_model():
    core, unc = hypothetical_grids()
    jpi = np.arange(49, dtype=float).reshape(7, 7) + 1
    tput = np.full((7, 7), 1e9)
    m = TabularModel({2: jpi}, {2: tput}, core, unc)
    assert m.jpi(0.01, FreqPair(1, 2)) == 10.0
    assert m.power(FreqPair(1, 2), 0.01) == pytest.approx(1e10)
    assert np.array_equal(jpi_surface(m, 0.01), jpi)
    with pytest.raises(KeyError):
        m.jpi(0.5, FreqPair(0, 0))
    with pytest.raises(ValueError):
        TabularModel({2: jpi[:6]}, {2: tput[:6]}, core, unc)
    again = model_from_dict(m.to_dict())
    assert isinstance(again, TabularModel) and np.array_equal(again.jpi_tables[2], jpi)


def test_parametric_round_trip():
    m = ParametricModel(a_cycles_per_instr=0.7)
    assert model_from_dict(m.to_dict()) == m
    with pytest.raises(ValueError):
        ParametricModel(p0_watts=0)


def test_oracles():
    # JPI falling with frequency: the descent reaches the bottom, which is also the argmin
    falling = np.arange(7, dtype=float)
    assert oracle_cf_opt(np.repeat(falling[:, None], 7, axis=1)) == (0, 0)
    assert oracle_uf_opt(np.repeat(falling[None, :], 7, axis=0), cf=3) == (0, 0)
    # JPI rising as frequency falls: core stays at the top
    rising = falling[::-1].copy()
    assert oracle_cf_opt(np.repeat(rising[:, None], 7, axis=1)) == (6, 6)
    # a minimum at B on core: descent G, E, C, then A is worse -> adjacent B..C -> B
    assert descent_opt([5, 0, 1, 2, 3, 4, 5], 0, 6, True, 7) == 1
    assert descent_opt([5, 0, 1, 2, 3, 4, 5], 0, 6, False, 7) == 2
