"""Pulse sequences, parity feedback, iteration and duration optimization."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .evolve import (
    KrausStep,
    NumericalError,
    PropagatedMap,
    PulseSpec,
    build_pulse_map,
)
from .hilbert import (
    SIGMA_X,
    SIGMA_Z,
    SpaceShape,
    config_index,
    config_label,
    embed_spin_op,
    embed_spin_space_op,
    partial_trace_ancilla,
    partial_trace_spins,
)
from .model import NoiseConfig, SystemConfig, build_h_total

PARITY_STRATEGIES = ("flip_z", "reinitialize", "off")
# objective variation below this is rounding noise
FLAT_TOL = 1e-12


@dataclass(frozen=True)
class TargetState:
    """Symmetric superposition of the two Neel configurations."""

    n_spins: int
    vector: np.ndarray = field(repr=False)


def neel_indices(n_spins: int) -> tuple[int, int]:
    first = [k % 2 for k in range(n_spins)]
    return config_index(first), config_index([1 - b for b in first])


def target_state(n_spins: int) -> TargetState:
    if n_spins < 2 or n_spins % 2:
        raise ValueError("the target state is defined for even N >= 2")
    vec = np.zeros(2**n_spins, dtype=complex)
    vec[list(neel_indices(n_spins))] = 1 / np.sqrt(2)
    return TargetState(n_spins, vec)


def antisymmetric_neel(n_spins: int) -> np.ndarray:
    i, j = neel_indices(n_spins)
    vec = np.zeros(2**n_spins, dtype=complex)
    vec[i], vec[j] = 1 / np.sqrt(2), -1 / np.sqrt(2)
    return vec


def interaction_eigenbasis(n_spins: int) -> tuple[list[str], np.ndarray]:
    """Product configurations with the Neel pair replaced by its symmetric
    ("T") and antisymmetric ("A") superpositions, target first.

    Every element is an eigenstate of the Ising interaction.  Rows of the
    returned matrix are the basis vectors.
    """
    ds = 2**n_spins
    pair = neel_indices(n_spins) if n_spins % 2 == 0 else ()
    labels, rows = [], []
    if pair:
        labels += ["T", "A"]
        rows += [np.real(target_state(n_spins).vector), np.real(antisymmetric_neel(n_spins))]
    for idx in range(ds):
        if idx in pair:
            continue
        v = np.zeros(ds)
        v[idx] = 1.0
        labels.append(config_label(idx, n_spins))
        rows.append(v)
    return labels, np.array(rows)


def fidelity(rho: np.ndarray, target: TargetState, shape: SpaceShape) -> float:
    """``<psi_T| Tr_osc(rho) |psi_T>``."""
    if shape.n_spins != target.n_spins:
        raise ValueError("target and space have different chain lengths")
    spins = partial_trace_ancilla(rho, shape)
    v = target.vector
    return float(np.real(v.conj() @ spins @ v))


def parity_operator(n_spins: int) -> np.ndarray:
    """Product of sigma_x over all spins, on the spin space."""
    out = np.eye(1, dtype=complex)
    for _ in range(n_spins):
        out = np.kron(out, SIGMA_X)
    return out


def parity_kraus(
    shape: SpaceShape, strategy: str = "flip_z", site: int = 1
) -> list[np.ndarray]:
    """Kraus operators of the measure-and-correct channel on the full space."""
    if strategy not in PARITY_STRATEGIES:
        raise ValueError(f"unknown parity strategy {strategy!r}")
    if strategy == "off":
        return [np.eye(shape.total_dim, dtype=complex)]
    pi = parity_operator(shape.n_spins)
    eye = np.eye(shape.spin_dim)
    p_plus = embed_spin_space_op((eye + pi) / 2, shape)
    p_minus = embed_spin_space_op((eye - pi) / 2, shape)
    if strategy == "flip_z":
        z = embed_spin_op(SIGMA_Z, site, shape)
        return [p_plus, z @ p_minus]
    kraus = [p_plus]
    for s in range(shape.spin_dim):
        move = np.zeros((shape.spin_dim, shape.spin_dim))
        move[0, s] = 1.0
        kraus.append(embed_spin_space_op(move, shape) @ p_minus)
    return kraus


def parity_map(shape: SpaceShape, strategy: str = "flip_z", site: int = 1) -> PropagatedMap:
    if strategy == "flip_z" and not 1 <= site <= shape.n_spins:
        raise ValueError(f"correction site {site} out of range")
    return PropagatedMap(shape.total_dim, [KrausStep(parity_kraus(shape, strategy, site))])


def parity_correction(
    rho: np.ndarray, shape: SpaceShape, strategy: str = "flip_z", site: int = 1
) -> np.ndarray:
    """Project onto parity sectors and repair the odd one.

    ``flip_z`` conjugates the odd sector with sigma_z on ``site``;
    ``reinitialize`` replaces its spin part by all-up while keeping the
    oscillator marginal; ``off`` returns ``rho`` unchanged.
    """
    return parity_map(shape, strategy, site).apply(rho)


def even_parity_population(rho: np.ndarray, shape: SpaceShape) -> float:
    pi = parity_operator(shape.n_spins)
    p_plus = (np.eye(shape.spin_dim) + pi) / 2
    return float(np.real(np.trace(p_plus @ partial_trace_ancilla(rho, shape))))


@dataclass(frozen=True)
class Sequence:
    """Ordered pulses followed by one parity-correction step."""

    pulses: tuple[PulseSpec, ...]
    parity: str = "flip_z"
    correction_site: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if not self.pulses:
            raise ValueError("a sequence needs at least one pulse")
        if self.parity not in PARITY_STRATEGIES:
            raise ValueError(f"unknown parity strategy {self.parity!r}")

    @property
    def durations(self) -> list[float]:
        return [p.t_coherent for p in self.pulses]

    @property
    def detunings(self) -> list[float]:
        return [p.delta for p in self.pulses]

    @property
    def period(self) -> float:
        """Wall-clock length of one pass through the sequence."""
        return float(sum(p.t_coherent + p.t_dissipative for p in self.pulses))

    def with_durations(self, durations) -> "Sequence":
        pulses = tuple(p.with_duration(t) for p, t in zip(self.pulses, durations))
        return replace(self, pulses=pulses)

    def scaled(self, factor: float) -> "Sequence":
        return self.with_durations([factor * t for t in self.durations])

    def with_parity(self, parity: str) -> "Sequence":
        return replace(self, parity=parity)

    def with_nbar(self, nbar: float) -> "Sequence":
        pulses = tuple(replace(p, nbar=float(nbar)) for p in self.pulses)
        return replace(self, pulses=pulses)


def preset_detunings(config: SystemConfig) -> list[float]:
    j = config.couplings
    w = config.omega_t
    if config.n_spins == 2:
        d1 = -w + 2 * j[0]
        return [d1, -d1]
    if config.n_spins == 4:
        d1 = -w + 2 * (j[0] + j[1])
        d2 = -w + 2 * j[0]
        d3 = -w - 2 * (j[0] - j[1])
        return [d1, d2, d3, -d1, -d2]
    raise ValueError("no built-in schedule for this chain length; supply the pulses")


def default_sequence(
    config: SystemConfig,
    gamma: float = 0.1,
    gamma_t: float = 20.0,
    nbar: float = 0.0,
    j1_t: float = 10.0,
) -> Sequence:
    """Built-in schedule for N = 2 (two pulses) or N = 4 (five pulses).

    Coherent durations start at ``J_1 t = j1_t``; each cooling segment has
    dose ``gamma * t_gamma = gamma_t``.
    """
    t0 = j1_t / config.couplings[0]
    pulses = [
        PulseSpec(d, t0, gamma_t / gamma, gamma, nbar) for d in preset_detunings(config)
    ]
    return Sequence(tuple(pulses), "flip_z", 1)


# ---------------------------------------------------------------------------
# Iteration


@dataclass
class SequenceChannel:
    """Pulse maps of a sequence plus its parity step."""

    pulse_maps: list[PropagatedMap]
    parity: PropagatedMap | None
    shape: SpaceShape

    def apply(self, rho: np.ndarray) -> np.ndarray:
        for m in self.pulse_maps:
            rho = m.apply(rho)
        if self.parity is not None:
            rho = self.parity.apply(rho)
        return rho

    def with_parity(self, strategy: str, site: int = 1) -> "SequenceChannel":
        pmap = None if strategy == "off" else parity_map(self.shape, strategy, site)
        return SequenceChannel(self.pulse_maps, pmap, self.shape)


def build_sequence_channel(
    seq: Sequence,
    config: SystemConfig,
    noise: NoiseConfig | None = None,
    method: str = "auto",
) -> SequenceChannel:
    cache: dict[PulseSpec, PropagatedMap] = {}
    maps = []
    for p in seq.pulses:
        if p not in cache:
            cache[p] = build_pulse_map(p, config, noise, method)
        maps.append(cache[p])
    channel = SequenceChannel(maps, None, config.shape)
    return channel.with_parity(seq.parity, seq.correction_site)


@dataclass
class FidelityTrace:
    """Per-iteration record; entry 0 is the initial state.

    ``populations`` (optional) holds spin populations in the basis of
    ``interaction_eigenbasis``.
    """

    iteration: np.ndarray
    time: np.ndarray
    fidelity: np.ndarray
    even_parity: np.ndarray
    mean_occupation: np.ndarray
    populations: np.ndarray | None
    converged: bool
    final_state: np.ndarray = field(repr=False)

    @property
    def asymptotic_fidelity(self) -> float:
        return float(self.fidelity[-1])

    @property
    def infidelity(self) -> np.ndarray:
        return 1.0 - self.fidelity


def run_iterations(
    rho0: np.ndarray,
    seq: Sequence,
    config: SystemConfig,
    noise: NoiseConfig | None = None,
    max_iters: int = 2000,
    convergence_tol: float = 1e-10,
    channel: SequenceChannel | None = None,
    record_populations: bool = False,
    patience: int = 5,
) -> FidelityTrace:
    """Apply the sequence map repeatedly until the fidelity settles.

    Stops after ``patience`` consecutive iterations with
    ``|F_l - F_{l-1}| < convergence_tol`` or after ``max_iters``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    shape = config.shape
    target = target_state(config.n_spins)
    if channel is None:
        channel = build_sequence_channel(seq, config, noise)
    n_op = np.diag(np.arange(shape.n_osc_levels))
    _, basis = interaction_eigenbasis(config.n_spins)

    fids, evens, occs, pops = [], [], [], []

    def record(rho):
        f = fidelity(rho, target, shape)
        if not (-1e-12 <= f <= 1 + 1e-6) or not np.isfinite(f):
            raise NumericalError(f"fidelity {f!r} left the physical range")
        fids.append(f)
        evens.append(even_parity_population(rho, shape))
        occs.append(float(np.real(np.trace(n_op @ partial_trace_spins(rho, shape)))))
        if record_populations:
            spins = partial_trace_ancilla(rho, shape)
            pops.append(np.real(np.einsum("ki,ij,kj->k", basis, spins, basis)))

    rho = np.array(rho0, dtype=complex)
    record(rho)
    quiet = 0
    converged = False
    for _ in range(max_iters):
        rho = channel.apply(rho)
        record(rho)
        quiet = quiet + 1 if abs(fids[-1] - fids[-2]) < convergence_tol else 0
        if quiet >= patience:
            converged = True
            break
    it = np.arange(len(fids))
    return FidelityTrace(
        iteration=it,
        time=it * seq.period,
        fidelity=np.array(fids),
        even_parity=np.array(evens),
        mean_occupation=np.array(occs),
        populations=np.array(pops) if record_populations else None,
        converged=converged,
        final_state=rho,
    )


# ---------------------------------------------------------------------------
# Reduced spin channel with a reset oscillator


def thermal_populations(n_levels: int, nbar: float) -> np.ndarray:
    """Truncated geometric distribution, the steady state of thermal damping."""
    if nbar == 0:
        p = np.zeros(n_levels)
        p[0] = 1.0
        return p
    p = (nbar / (nbar + 1)) ** np.arange(n_levels)
    return p / p.sum()


def sector_indices(n_spins: int) -> np.ndarray:
    """Column-stacked indices of spin operators ``|i><j|`` whose two
    configurations have equal down-spin parity.

    Fidelity depends only on this operator subspace, which every channel
    here maps into itself.
    """
    ds = 2**n_spins
    par = np.array([bin(i).count("1") % 2 for i in range(ds)])
    i, j = np.meshgrid(np.arange(ds), np.arange(ds), indexing="ij")
    mask = (par[i] == par[j]).ravel(order="F")
    return np.flatnonzero(mask)


def reduced_spin_channel(
    pmap: PropagatedMap, shape: SpaceShape, osc_populations: np.ndarray,
    indices: np.ndarray,
) -> np.ndarray:
    """Matrix of ``rho_s -> Tr_osc pmap(rho_s x sigma)`` on ``indices``.

    ``sigma`` is diagonal with the given populations.  This is the exact
    per-pulse spin channel once the cooling segment has returned the
    oscillator to ``sigma``.
    """
    ds = shape.spin_dim
    sigma = np.diag(osc_populations).astype(complex)
    out = np.zeros((indices.size, indices.size), dtype=complex)
    for col, idx in enumerate(indices):
        e = np.zeros((ds, ds), dtype=complex)
        e[idx % ds, idx // ds] = 1.0
        spins = partial_trace_ancilla(pmap.apply(np.kron(e, sigma)), shape)
        out[:, col] = spins.reshape(-1, order="F")[indices]
    return out


def _kraus_spin_channel(u: np.ndarray, shape: SpaceShape, indices: np.ndarray) -> np.ndarray:
    """Fast path for a unitary pulse acting on an oscillator in its ground state."""
    ds, do = shape.spin_dim, shape.n_osc_levels
    k = u.reshape(ds, do, ds, do)[:, :, :, 0]
    # row b*ds + a holds rho[a, b]; coefficient K[a, c] conj(K[b, d])
    full = np.einsum("anc,bnd->badc", k, k.conj()).reshape(ds * ds, ds * ds)
    return full[np.ix_(indices, indices)]


def spin_sequence_channel(
    seq: Sequence,
    config: SystemConfig,
    noise: NoiseConfig | None = None,
    channel: SequenceChannel | None = None,
) -> np.ndarray:
    """Spin-only matrix of one sequence pass on the equal-parity subspace.

    The oscillator is assumed to be reset to its cooled steady state at the
    end of every pulse; the neglected terms decay as ``exp(-gamma t_gamma / 2)``.
    """
    shape = config.shape
    idx = sector_indices(config.n_spins)
    if channel is None:
        channel = build_sequence_channel(seq, config, noise)
    total = np.eye(idx.size, dtype=complex)
    prev_nbar = seq.pulses[-1].nbar
    for pulse, pmap in zip(seq.pulses, channel.pulse_maps):
        pops = thermal_populations(shape.n_osc_levels, prev_nbar)
        total = reduced_spin_channel(pmap, shape, pops, idx) @ total
        prev_nbar = pulse.nbar
    if channel.parity is not None:
        parity = _spin_parity_matrix(config.n_spins, seq.parity, seq.correction_site)
        total = parity[np.ix_(idx, idx)] @ total
    return total


def _spin_parity_matrix(n_spins: int, strategy: str, site: int) -> np.ndarray:
    shape = SpaceShape(n_spins, 1)
    return sum(np.kron(k.conj(), k) for k in parity_kraus(shape, strategy, site))


def _initial_vector(rho_spins: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.asarray(rho_spins).reshape(-1, order="F")[idx]


def limit_state(m: np.ndarray, v0: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """``lim_k m^k v0`` via the spectral projector onto eigenvalue 1.

    Peripheral eigenvalues of a channel are semisimple, so the projector is
    ``R (L^H R)^{-1} L^H`` built from right and left eigenvectors.
    """
    w, vl, vr = la.eig(m, left=True, right=True)
    sel = np.abs(w - 1) < tol
    if not np.any(sel):
        raise NumericalError("sequence channel has no eigenvalue 1")
    if np.any((np.abs(w) > 1 + tol) | ((np.abs(w) > 1 - tol) & ~sel)):
        raise NumericalError("sequence channel has non-decaying oscillating modes")
    right, left = vr[:, sel], vl[:, sel]
    return right @ np.linalg.solve(left.conj().T @ right, left.conj().T @ v0)


def fixed_point(m: np.ndarray, n_spins: int) -> np.ndarray:
    """Unit-trace fixed point of ``m`` on the equal-parity subspace."""
    idx = sector_indices(n_spins)
    ds = 2**n_spins
    trace_row = (idx % ds == idx // ds).astype(complex)
    a = m - np.eye(m.shape[0])
    a[0, :] = trace_row
    b = np.zeros(m.shape[0], dtype=complex)
    b[0] = 1.0
    return np.linalg.solve(a, b)


def _fidelity_from_vector(v: np.ndarray, n_spins: int) -> float:
    idx = sector_indices(n_spins)
    ds = 2**n_spins
    rho = np.zeros(ds * ds, dtype=complex)
    rho[idx] = v
    rho = rho.reshape(ds, ds, order="F")
    t = target_state(n_spins).vector
    return float(np.real(t.conj() @ rho @ t))


def asymptotic_fidelity(
    seq: Sequence,
    config: SystemConfig,
    noise: NoiseConfig | None = None,
    rho0_spins: np.ndarray | None = None,
    channel: SequenceChannel | None = None,
) -> float:
    """Long-time fidelity from the spin-only sequence channel.

    With ``rho0_spins`` given, the limit of the iteration from that spin
    state is returned; otherwise the unique unit-trace fixed point is used.
    """
    m = spin_sequence_channel(seq, config, noise, channel)
    if rho0_spins is None:
        v = fixed_point(m, config.n_spins)
    else:
        v = limit_state(m, _initial_vector(rho0_spins, sector_indices(config.n_spins)))
    return _fidelity_from_vector(v, config.n_spins)


# ---------------------------------------------------------------------------
# Duration optimization


@dataclass
class DurationFit:
    sequence: Sequence
    loss: float
    asymptotic_infidelity: float
    relaxation_factor: float


def sequence_loss(seq: Sequence, config: SystemConfig, channel: SequenceChannel | None = None) -> float:
    """Target loss of one sequence pass started from ``psi_T x |0>``."""
    shape = config.shape
    target = target_state(config.n_spins)
    rho_t = np.kron(np.outer(target.vector, target.vector.conj()), _ground(shape))
    if channel is None:
        channel = build_sequence_channel(seq, config)
    return 1.0 - fidelity(channel.apply(rho_t), target, shape)


def _ground(shape: SpaceShape) -> np.ndarray:
    g = np.zeros((shape.n_osc_levels,) * 2, dtype=complex)
    g[0, 0] = 1.0
    return g


class _PulseChannels:
    """Caches eigendecompositions of H(delta) and spin channels per duration."""

    def __init__(self, config: SystemConfig, seq: Sequence):
        self.config = config
        self.shape = config.shape
        self.idx = sector_indices(config.n_spins)
        self._eig: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._cache: dict[tuple[int, float], np.ndarray] = {}
        self.seq = seq
        self.parity = _spin_parity_matrix(config.n_spins, seq.parity, seq.correction_site)[
            np.ix_(self.idx, self.idx)
        ] if seq.parity != "off" else None
        self.reset_exact = all(p.nbar == 0 for p in seq.pulses)

    def eig(self, delta):
        if delta not in self._eig:
            self._eig[delta] = np.linalg.eigh(build_h_total(delta, self.config))
        return self._eig[delta]

    def channel(self, k: int, t: float) -> np.ndarray:
        key = (k, float(t))
        if key not in self._cache:
            pulse = self.seq.pulses[k].with_duration(t)
            if self.reset_exact:
                w, v = self.eig(pulse.delta)
                u = (v * np.exp(-1j * w * t)) @ v.conj().T
                self._cache[key] = _kraus_spin_channel(u, self.shape, self.idx)
            else:
                pmap = build_pulse_map(pulse, self.config)
                prev = self.seq.pulses[k - 1].nbar
                pops = thermal_populations(self.shape.n_osc_levels, prev)
                self._cache[key] = reduced_spin_channel(pmap, self.shape, pops, self.idx)
        return self._cache[key]

    def sequence(self, durations) -> np.ndarray:
        m = np.eye(self.idx.size, dtype=complex)
        for k, t in enumerate(durations):
            m = self.channel(k, t) @ m
        if self.parity is not None:
            m = self.parity @ m
        return m

    def leakage_curve(self, k: int, grid: np.ndarray) -> np.ndarray:
        """Population leaving ``psi_T x |n>`` after driving for each time in ``grid``."""
        shape = self.shape
        w, v = self.eig(self.seq.pulses[k].delta)
        tv = target_state(shape.n_spins).vector
        basis = np.eye(shape.n_osc_levels)
        start = np.kron(tv, basis[0])
        proj = np.array([np.kron(tv, basis[n]) for n in range(shape.n_osc_levels)]).conj() @ v
        coeff = v.conj().T @ start
        out = np.empty(grid.size)
        for chunk in np.array_split(np.arange(grid.size), max(1, grid.size // 2000)):
            phases = np.exp(-1j * np.outer(grid[chunk], w)) * coeff
            kept = np.abs(phases @ proj.T) ** 2
            out[chunk] = 1.0 - kept.sum(axis=1)
        return out


def _asymptotic_infidelity(m: np.ndarray, n_spins: int, parity: str) -> float:
    """Unique fixed point with parity feedback; limit from the maximally
    mixed state without it, where the fixed point can be degenerate."""
    if parity == "off":
        ds = 2**n_spins
        v = limit_state(m, _initial_vector(np.eye(ds) / ds, sector_indices(n_spins)))
    else:
        v = fixed_point(m, n_spins)
    return 1.0 - _fidelity_from_vector(v, n_spins)


def _score(pc: _PulseChannels, durations, n_spins, relax_weight, period_extra):
    m = pc.sequence(durations)
    inf = _asymptotic_infidelity(m, n_spins, pc.seq.parity)
    lam = np.sort(np.abs(np.linalg.eigvals(m)))[::-1]
    lam2 = float(lam[1]) if lam.size > 1 else 0.0
    period = sum(durations) + period_extra
    relax = period / max(1.0 - lam2, 1e-300)
    return inf + relax_weight * relax, inf, lam2


def _local_minima(values: np.ndarray) -> np.ndarray:
    inner = (values[1:-1] < values[:-2]) & (values[1:-1] < values[2:])
    return np.flatnonzero(inner) + 1


def default_search_window(config: SystemConfig) -> tuple[float, float]:
    """Search range for coherent durations, in units of ``J_1 t``."""
    return (5.0, 70.0) if config.n_spins == 2 else (5.0, 30.0)


def optimize_pulse_durations(
    seq: Sequence,
    config: SystemConfig,
    objective: str = "asymptotic",
    window: tuple[float, float] | None = None,
    n_candidates: int | None = None,
    grid_step: float = 0.05,
    shortlist: int = 16,
    relax_weight: float = 1e-9,
    refine_span: float = 2.0,
    refine_points: int = 41,
    scan_fraction: float = 0.3,
    scan_points: int = 201,
) -> DurationFit:
    """Choose coherent durations for a noise-free sequence.

    ``objective="loss"`` scans each duration over ``+-scan_fraction`` of its
    initial value, keeps the one minimizing the single-pass target loss,
    then makes one coordinate-descent pass.

    ``objective="asymptotic"`` (default) works with the long-time
    infidelity instead:

    1. For each pulse, the leakage of ``psi_T x |0>`` under ``H(delta)`` is
       scanned over ``window`` (units of ``J_1 t``) and its deepest local
       minima become candidate durations.
    2. Every combination of candidates is scored by the asymptotic
       infidelity of the spin-only sequence channel.
    3. The best ``shortlist`` combinations are re-ranked by
       ``infidelity + relax_weight * tau``, with ``tau`` the sequence period
       divided by the spectral gap of the channel, favouring schedules that
       pump quickly.
    4. One coordinate-descent pass refines each duration within
       ``+-refine_span`` on the same score.
    """
    pc = _PulseChannels(config, seq)
    n = config.n_spins
    extra = sum(p.t_dissipative for p in seq.pulses)

    def loss_of(durations):
        return sequence_loss(seq.with_durations(durations), config)

    if objective == "loss":
        durations = list(seq.durations)
        for _ in range(2):
            for k, t0 in enumerate(seq.durations):
                grid = np.linspace((1 - scan_fraction) * t0, (1 + scan_fraction) * t0, scan_points)
                vals = [loss_of(durations[:k] + [t] + durations[k + 1:]) for t in grid]
                if not np.all(np.isfinite(vals)):
                    raise NumericalError("non-finite loss during duration scan")
                if np.ptp(vals) > FLAT_TOL:
                    durations[k] = round(float(grid[int(np.argmin(vals))]), 9)
        out = seq.with_durations(durations)
        m = pc.sequence(durations)
        return DurationFit(out, loss_of(durations), _safe_asym(m, n, seq.parity), _gap(m))
    if objective != "asymptotic":
        raise ValueError(f"unknown objective {objective!r}")

    j1 = config.couplings[0]
    lo, hi = window or default_search_window(config)
    grid = np.arange(lo / j1, hi / j1, grid_step)
    k_max = n_candidates or (12 if len(seq.pulses) <= 2 else 5)
    candidates = []
    for k in range(len(seq.pulses)):
        curve = pc.leakage_curve(k, grid)
        if not np.all(np.isfinite(curve)):
            raise NumericalError("non-finite leakage curve")
        loc = _local_minima(curve) if np.ptp(curve) > FLAT_TOL else np.array([], dtype=int)
        loc = loc[np.argsort(curve[loc])[:k_max]]
        candidates.append([float(grid[i]) for i in loc])
    if all(len(c) == 0 for c in candidates):
        # no drive-induced leakage anywhere: durations are irrelevant
        return DurationFit(seq, loss_of(seq.durations), 0.0, 1.0)
    candidates = [c or [t] for c, t in zip(candidates, seq.durations)]

    ranked = []
    for combo in itertools.product(*candidates):
        m = pc.sequence(combo)
        ranked.append((_asymptotic_infidelity(m, n, seq.parity), combo))
    ranked.sort(key=lambda r: r[0])
    best = min(
        (_score(pc, combo, n, relax_weight, extra)[0], combo) for _, combo in ranked[:shortlist]
    )
    score, durations = best[0], list(best[1])

    offsets = np.linspace(-refine_span, refine_span, refine_points)
    for k in range(len(durations)):
        trial = []
        for off in offsets:
            cand = durations[:k] + [durations[k] + off] + durations[k + 1:]
            trial.append((_score(pc, cand, n, relax_weight, extra)[0], cand))
        s, cand = min(trial, key=lambda r: r[0])
        if s < score:
            score, durations = s, cand
    durations = [round(float(t), 9) for t in durations]
    _, inf, lam2 = _score(pc, durations, n, relax_weight, extra)
    return DurationFit(seq.with_durations(durations), loss_of(durations), inf, lam2)


def _gap(m: np.ndarray) -> float:
    lam = np.sort(np.abs(np.linalg.eigvals(m)))[::-1]
    return float(lam[1]) if lam.size > 1 else 0.0


def _safe_asym(m, n, parity):
    try:
        return _asymptotic_infidelity(m, n, parity)
    except np.linalg.LinAlgError:
        return math.nan
