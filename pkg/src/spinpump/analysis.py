"""Spectral bookkeeping of the chain and effective rate extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import least_squares, nnls

from .hilbert import config_bits, config_label
from .model import SystemConfig
from .protocol import interaction_eigenbasis


@dataclass(frozen=True)
class LevelEntry:
    label: str
    energy: float
    magnetization: int
    parity: int


@dataclass(frozen=True)
class LevelDiagram:
    """Ising energies of all product configurations.

    ``parity`` is ``(-1)**(number of down spins)``.
    """

    entries: tuple[LevelEntry, ...]

    def energies(self) -> np.ndarray:
        return np.array([e.energy for e in self.entries])


def bond_energy(bits: list[int], couplings) -> float:
    s = [1 - 2 * b for b in bits]
    return float(sum(j * s[k] * s[k + 1] for k, j in enumerate(couplings)))


def level_diagram(config: SystemConfig) -> LevelDiagram:
    n = config.n_spins
    entries = []
    for idx in range(2**n):
        bits = config_bits(idx, n)
        downs = sum(bits)
        entries.append(
            LevelEntry(config_label(idx, n), bond_energy(bits, config.couplings), n - 2 * downs,
                       1 - 2 * (downs % 2))
        )
    return LevelDiagram(tuple(entries))


@dataclass(frozen=True)
class ResonanceRow:
    initial: str
    final: str
    sites: tuple[int, ...]
    osc_change: int
    delta: float
    coupling: float
    matches: tuple[int, ...]


@dataclass(frozen=True)
class ResonanceTable:
    rows: tuple[ResonanceRow, ...]
    window: float

    def matched(self) -> list[ResonanceRow]:
        return [r for r in self.rows if r.matches]


def _spin_states(config: SystemConfig):
    labels, basis = interaction_eigenbasis(config.n_spins)
    return list(zip(labels, basis))


def _diag_ops(config: SystemConfig):
    n = config.n_spins
    ds = 2**n
    sz = []
    sx = []
    for site in range(n):
        bits = np.array([config_bits(i, n)[site] for i in range(ds)])
        sz.append(1 - 2 * bits)
        flip = np.arange(ds) ^ (1 << (n - 1 - site))
        m = np.zeros((ds, ds))
        m[flip, np.arange(ds)] = 1.0
        sx.append(m)
    hint = sum(j * sz[k] * sz[k + 1] for k, j in enumerate(config.couplings))
    return np.diag(hint), np.diag(sum(sz)), sx


def resonance_table(
    config: SystemConfig, detunings=(), window: float | None = None
) -> ResonanceTable:
    """Detunings at which single-flip sideband transitions become resonant.

    For a pair of ``H_int`` eigenstates ``n -> m`` with the oscillator going
    ``0 -> 1`` (``osc_change=+1``) or ``1 -> 0`` (``-1``), the detuning
    solves ``E_n - delta M_n / 2 = E_m - delta M_m / 2 + osc_change``.
    Pairs connected by some single-site ``sigma^x_j`` are listed; ``sites``
    are those spins and ``coupling`` is the total first-order element of
    ``sum_j g_j sigma^x_j``.  A zero ``coupling`` marks a dark transition
    whose site amplitudes cancel.
    """
    if window is None:
        window = 4 * max(abs(g) for g in config.rabi)
    hint, mag, sx = _diag_ops(config)
    states = _spin_states(config)
    detunings = list(detunings)
    rows = []
    for ln, vn in states:
        en, mn = vn @ hint @ vn, vn @ mag @ vn
        for lm, vm in states:
            if lm == ln:
                continue
            em, mm = vm @ hint @ vm, vm @ mag @ vm
            if abs(mm - mn) < 1e-12:
                continue
            amps = [g * (vm @ op @ vn) for g, op in zip(config.rabi, sx)]
            sites = tuple(k + 1 for k, a in enumerate(amps) if abs(a) > 1e-15)
            coupling = float(sum(amps))
            if not sites:
                continue
            for change in (1, -1):
                delta = 2 * (em - en + change * config.omega_t) / (mm - mn)
                matches = tuple(
                    k for k, d in enumerate(detunings) if abs(d - delta) <= window
                )
                rows.append(ResonanceRow(ln, lm, sites, change, float(delta), coupling, matches))
    return ResonanceTable(tuple(rows), float(window))


def reachability(config: SystemConfig, detunings, parity: bool = True) -> dict[str, bool]:
    """Whether each configuration has a driven path into the target.

    Edges are resonant ``0 -> 1`` sideband transitions with nonzero coupling
    matched by one of ``detunings``; the emitted quantum is then removed by
    cooling, making the step irreversible.  The antisymmetric Neel state
    counts as connected because parity correction maps it to the target.
    With ``parity`` set, every configuration is also linked to its
    all-flipped partner, which the correction step populates with weight 1/2.
    """
    table = resonance_table(config, detunings)
    graph: dict[str, set[str]] = {}
    for r in table.rows:
        if r.osc_change == 1 and r.matches and abs(r.coupling) > 0:
            graph.setdefault(r.initial, set()).add(r.final)
    labels = [lab for lab, _ in _spin_states(config)]
    if parity:
        swap = str.maketrans("ud", "du")
        for lab in labels:
            if lab not in ("T", "A"):
                graph.setdefault(lab, set()).add(lab.translate(swap))
    good = {"T", "A"}
    changed = True
    while changed:
        changed = False
        for lab in labels:
            if lab not in good and graph.get(lab, set()) & good:
                good.add(lab)
                changed = True
    return {lab: lab in good for lab in labels}


@dataclass
class RateFit:
    """Fitted rates per sequence pass.

    ``gamma_matrix[n, m]`` is the rate from state ``n`` to state ``m``.
    """

    gamma_matrix: np.ndarray
    labels: list[str]
    residual: float
    identified: np.ndarray

    @property
    def loss_rates(self) -> np.ndarray:
        return self.gamma_matrix.sum(axis=1)

    @property
    def gamma_t(self) -> float:
        return float(self.loss_rates[self.labels.index("T")] if "T" in self.labels else self.loss_rates[0])

    @property
    def generator(self) -> np.ndarray:
        """Column generator ``dp/dl = G p``."""
        g = self.gamma_matrix.T.copy()
        np.fill_diagonal(g, 0.0)
        return g - np.diag(g.sum(axis=0))

    def min_other_loss_rate(self) -> float:
        """Smallest loss rate among non-target states that the data populate."""
        t = self.labels.index("T") if "T" in self.labels else 0
        keep = [k for k in range(len(self.labels)) if k != t and self.identified[k]]
        return float(self.loss_rates[keep].min())

    def stationary(self) -> np.ndarray:
        w, v = np.linalg.eig(self.generator)
        p = np.real(v[:, np.argmin(np.abs(w))])
        return p / p.sum()


def _pairs(trajectories):
    xs, ys = [], []
    for traj in trajectories:
        traj = np.asarray(traj, dtype=float)
        xs.append(traj[:-1])
        ys.append(traj[1:])
    return np.vstack(xs), np.vstack(ys)


def fit_rates(
    populations, labels: list[str] | None = None, min_steps: int = 10,
    identify_tol: float = 1e-6,
) -> RateFit:
    """Fit a Markov rate generator to populations sampled once per pass.

    ``populations`` is one trajectory of shape ``(n_samples, n_states)`` or
    a list of them.  The model is ``p_{l+1} = expm(G) p_l`` with
    nonnegative transfer rates.  A linear nonnegative least-squares fit of
    the first-order model ``p_{l+1} - p_l = G p_l`` seeds a bounded
    nonlinear refinement.
    """
    arr = populations
    trajectories = [arr] if np.ndim(arr) == 2 else list(arr)
    x, y = _pairs(trajectories)
    if x.shape[0] < min_steps:
        raise ValueError(f"need at least {min_steps} transitions, got {x.shape[0]}")
    n = x.shape[1]
    labels = labels or [str(k) for k in range(n)]
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]

    design = np.zeros((x.shape[0] * n, len(pairs)))
    for col, (a, b) in enumerate(pairs):
        block = np.zeros((x.shape[0], n))
        block[:, b] += x[:, a]
        block[:, a] -= x[:, a]
        design[:, col] = block.ravel()
    seed, _ = nnls(design, (y - x).ravel())

    def generator(theta):
        g = np.zeros((n, n))
        for (a, b), r in zip(pairs, theta):
            g[b, a] = r
        return g - np.diag(g.sum(axis=0))

    def resid(theta):
        return (x @ la.expm(generator(theta)).T - y).ravel()

    fit = least_squares(resid, seed, bounds=(0.0, np.inf), x_scale="jac", xtol=1e-14,
                        ftol=1e-14, gtol=1e-14)
    gamma = np.zeros((n, n))
    for (a, b), r in zip(pairs, fit.x):
        gamma[a, b] = r
    identified = x.max(axis=0) > identify_tol
    return RateFit(gamma, list(labels), float(np.sqrt(np.mean(fit.fun**2))), identified)
