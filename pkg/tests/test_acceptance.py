"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import time

import numpy as np
import pytest

from conftest import random_density, record_criterion
from spinpump.analysis import resonance_table
from spinpump.evolve import build_pulse_map, compare_integrators
from spinpump.harness import haar_state, run_preset
from spinpump.hilbert import SpaceShape, config_bits, embed_spin_space_op
from spinpump.model import (
    LindbladGenerator,
    NoiseConfig,
    SystemConfig,
    build_h_int,
    coherent_generator,
    dissipative_generator,
    lindblad_rhs,
    paul_trap_config,
)
from spinpump.protocol import (
    asymptotic_fidelity,
    build_sequence_channel,
    default_sequence,
    optimize_pulse_durations,
    parity_correction,
    parity_operator,
    preset_detunings,
    run_iterations,
    target_state,
)


def ground(shape):
    g = np.zeros((shape.n_osc_levels,) * 2, dtype=complex)
    g[0, 0] = 1
    return g


def all_up(config):
    ds = config.shape.spin_dim
    spins = np.zeros((ds, ds), dtype=complex)
    spins[0, 0] = 1
    return np.kron(spins, ground(config.shape))


def mixed(config):
    ds = config.shape.spin_dim
    return np.kron(np.eye(ds) / ds, ground(config.shape))


@pytest.fixture(scope="module")
def fig3a():
    header, rows, _ = run_preset("fig3a")
    return header, np.array(rows)


@pytest.fixture(scope="module")
def fig3b():
    header, rows, _ = run_preset("fig3b")
    return header, np.array(rows)


def test_criterion_1_two_spin_pumping():
    start = time.perf_counter()
    config = paul_trap_config(2)
    fit = optimize_pulse_durations(default_sequence(config), config)
    trace = run_iterations(all_up(config), fit.sequence, config)
    elapsed = time.perf_counter() - start
    f = trace.asymptotic_fidelity
    passed = f >= 1 - 1e-5 and elapsed < 60 and trace.converged
    record_criterion(1, passed, f"N=2 F={f:.10f} (need >= 1-1e-5), {elapsed:.1f}s (< 60s)")
    assert passed


def test_criterion_2_four_spin_pumping(n4_config):
    start = time.perf_counter()
    fit = optimize_pulse_durations(default_sequence(n4_config), n4_config)
    results = {}
    for name, rho0 in (("all_up", all_up(n4_config)), ("mixed", mixed(n4_config))):
        trace = run_iterations(rho0, fit.sequence, n4_config)
        assert trace.converged
        results[name] = trace.asymptotic_fidelity
    elapsed = time.perf_counter() - start
    passed = min(results.values()) >= 0.999 and elapsed < 600
    detail = ", ".join(f"{k} F={v:.8f}" for k, v in results.items())
    record_criterion(2, passed, f"N=4 n_max={n4_config.n_max} {detail} (need >= 0.999), "
                                f"{elapsed:.1f}s (< 600s)")
    assert passed


def test_criterion_3_duration_robustness(n4_config, n4_fit):
    seq = n4_fit.sequence
    base = 1 - asymptotic_fidelity(seq, n4_config)
    ratios = {s: (1 - asymptotic_fidelity(seq.scaled(s), n4_config)) / base for s in (0.7, 1.3)}
    passed = all(1 <= r <= 4 for r in ratios.values())
    detail = ", ".join(f"x{s}: {r:.3g}" for s, r in ratios.items())
    record_criterion(3, passed, f"infidelity ratios {detail} (need within [1, 4]); base {base:.3e}")
    assert passed


def test_criterion_4_parity_benefit(fig3b):
    header, rows = fig3b
    x, on, off = rows[:, 0], rows[:, header.index("fidelity_N4")], rows[:, header.index("fidelity_N4_no_parity")]
    good = np.flatnonzero((off <= 0.6) & (on >= 0.9))
    passed = good.size > 0
    if passed:
        k = good[0]
        detail = f"at 2*gamma_flip/g={x[k]:.4g}: with parity {on[k]:.4f}, without {off[k]:.4f}"
    else:
        detail = f"no grid point with F_off <= 0.6 and F_on >= 0.9 (max F_on {on.max():.4f})"
    record_criterion(4, passed, detail)
    assert passed


def test_criterion_5_degradation_ordering(fig3a, fig3b):
    ha, a = fig3a
    hb, b = fig3b
    checks = {}
    for name, data, header in (("nbar", a, ha), ("noise", b, hb)):
        for col in ("fidelity_N2", "fidelity_N4"):
            f = data[:, header.index(col)]
            checks[f"{name}:{col} monotone"] = bool(np.all(np.diff(f) <= 0))
        n2, n4 = data[:, header.index("fidelity_N2")], data[:, header.index("fidelity_N4")]
        checks[f"{name}: N4<=N2"] = bool(np.all(n4[1:] <= n2[1:]))
    passed = all(checks.values())
    failed = [k for k, ok in checks.items() if not ok]
    record_criterion(5, passed, "monotone and ordered on both grids" if passed else f"failed: {failed}")
    assert passed


def test_criterion_6_initial_state_independence(n4_config, n4_fit):
    shape = n4_config.shape
    values = []
    channel = build_sequence_channel(n4_fit.sequence, n4_config)
    for seed in range(5):
        rho0 = np.kron(haar_state(shape.spin_dim, seed), ground(shape))
        trace = run_iterations(rho0, n4_fit.sequence, n4_config, channel=channel)
        values.append(trace.asymptotic_fidelity)
    spread = max(values) - min(values)
    passed = spread < 1e-6
    record_criterion(6, passed, f"5 Haar seeds, F in [{min(values):.10f}, {max(values):.10f}], "
                                f"spread {spread:.2e} (< 1e-6)")
    assert passed


def _property_a(n4_config, n4_fit):
    rng = np.random.default_rng(0)
    worst_trace, worst_eig = 0.0, 0.0
    configs = [(paul_trap_config(2), None), (n4_config, None),
               (n4_config, NoiseConfig(2.5e-6, 2.5e-6))]
    for config, noise in configs:
        seq = n4_fit.sequence if config.n_spins == 4 else default_sequence(config)
        for pulse in seq.with_nbar(0.05).pulses:
            pmap = build_pulse_map(pulse, config, noise)
            for _ in range(100):
                rank = int(rng.integers(1, 4))
                out = pmap.apply(random_density(config.shape.total_dim, rng, rank))
                worst_trace = max(worst_trace, abs(np.trace(out) - 1))
                worst_eig = min(worst_eig, np.linalg.eigvalsh((out + out.conj().T) / 2).min())
    return worst_trace < 1e-9 and worst_eig >= -1e-8, f"(a) trace {worst_trace:.1e}, min eig {worst_eig:.1e}"


def _property_b():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 7))
        x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        jumps = [
            ((rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(d), float(rng.uniform(0, 0.3)))
            for _ in range(2)
        ]
        gen = LindbladGenerator((x + x.conj().T) / (2 * np.sqrt(d)), jumps)
        worst = max(worst, compare_integrators(random_density(d, rng), gen, float(rng.uniform(0.5, 5))))
    return worst < 1e-8, f"(b) integrator gap {worst:.1e}"


def _property_c():
    worst = 0.0
    for n in (2, 4):
        base = paul_trap_config(n)
        config = SystemConfig(n, base.couplings, (0.0,) * n, base.n_max)
        t = target_state(n).vector
        rho = np.kron(np.outer(t, t.conj()), ground(config.shape))
        for delta in preset_detunings(config):
            worst = max(worst, np.abs(lindblad_rhs(rho, coherent_generator(delta, config))).max())
        worst = max(worst, np.abs(lindblad_rhs(rho, dissipative_generator(0.1, 0.0, config))).max())
    return worst < 1e-12, f"(c) target rhs {worst:.1e}"


def _property_d():
    ok = True
    for n in (2, 4):
        t = target_state(n).vector
        ok &= np.allclose(parity_operator(n) @ t, t, atol=1e-15)
        shape = SpaceShape(n, 2)
        pi = embed_spin_space_op(parity_operator(n), shape)
        p_plus = (np.eye(shape.total_dim) + pi) / 2
        rho = p_plus @ random_density(shape.total_dim, np.random.default_rng(n)) @ p_plus
        rho /= np.trace(rho)
        ok &= np.allclose(parity_correction(rho, shape), rho, atol=1e-14)
    return bool(ok), "(d) parity"


def _property_e():
    worst = 0.0
    for n in (2, 3, 4):
        couplings = paul_trap_config(4).couplings[: n - 1]
        config = SystemConfig(n, couplings, (0.0,) * n, 0)
        h = np.real(np.diag(build_h_int(config)))
        for idx in range(2**n):
            s = [1 - 2 * b for b in config_bits(idx, n)]
            worst = max(worst, abs(h[idx] - sum(j * s[k] * s[k + 1] for k, j in enumerate(couplings))))
    return worst < 1e-15, f"(e) bond sums {worst:.1e}"


def _property_f(n4_config, n4_fit):
    shifts = []
    for config, seq, rho0 in (
        (paul_trap_config(2), None, all_up),
        (n4_config, n4_fit.sequence, mixed),
    ):
        if seq is None:
            seq = optimize_pulse_durations(default_sequence(config), config).sequence
        values = []
        for cfg in (config, config.with_n_max(config.n_max + 1)):
            values.append(run_iterations(rho0(cfg), seq, cfg).asymptotic_fidelity)
        shifts.append(abs(values[1] - values[0]))
    return max(shifts) < 1e-6, f"(f) n_max+1 shifts {shifts[0]:.1e}, {shifts[1]:.1e}"


def test_criterion_7_property_suite(n4_config, n4_fit):
    parts = [
        _property_a(n4_config, n4_fit),
        _property_b(),
        _property_c(),
        _property_d(),
        _property_e(),
        _property_f(n4_config, n4_fit),
    ]
    passed = all(ok for ok, _ in parts)
    record_criterion(7, passed, "; ".join(d + ("" if ok else " FAIL") for ok, d in parts))
    assert passed


def test_criterion_8_resonance_bookkeeping():
    worst = 0.0
    for n in (2, 4):
        config = paul_trap_config(n)
        deltas = [r.delta for r in resonance_table(config).rows if r.osc_change == 1 and r.coupling]
        for d in preset_detunings(config):
            worst = max(worst, min(abs(d - x) for x in deltas))
    j1, j2 = 0.05, 0.05 * np.sqrt(2)
    analytic = [-1 + 2 * (j1 + j2), -1 + 2 * j1, -1 - 2 * (j1 - j2), 1 - 2 * (j1 + j2), 1 - 2 * j1]
    worst = max(worst, np.max(np.abs(np.array(preset_detunings(paul_trap_config(4))) - analytic)))
    passed = worst <= 1e-12
    record_criterion(8, passed, f"max gap between preset and table detunings {worst:.1e} (<= 1e-12)")
    assert passed


# ---------------------------------------------------------------------------
# Example values quoted alongside the operations


@pytest.mark.xfail(reason="optimized N=4 schedule reaches 1-F = 5.6e-4", strict=True)
def test_fig2_final_infidelity_below_5e_4(n4_config, n4_fit):
    trace = run_iterations(mixed(n4_config), n4_fit.sequence, n4_config)
    assert 1 - trace.asymptotic_fidelity < 5e-4


@pytest.mark.xfail(reason="30% duration changes raise the infidelity by 6x and 100x", strict=True)
def test_duration_scale_at_most_doubles_infidelity(n4_config, n4_fit):
    seq = n4_fit.sequence
    base = 1 - asymptotic_fidelity(seq, n4_config)
    for s in (0.7, 1.3):
        assert 1 - asymptotic_fidelity(seq.scaled(s), n4_config) <= 2 * base
