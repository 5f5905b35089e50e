"""Hamiltonians and Lindblad generators for a driven Ising chain coupled to
a damped oscillator.

Units: hbar = 1 and the trap frequency omega_t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    SpaceShape,
    annihilation,
    embed_osc_op,
    embed_spin_op,
    number_operator,
)

JumpList = list[tuple[np.ndarray, float]]


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of the chain.

    Parameters
    ----------
    n_spins : int
        Chain length N.
    couplings : tuple of float
        Ising couplings J_1..J_{N-1}, all positive.
    rabi : tuple of float
        Spin-oscillator couplings g_1..g_N.
    n_max : int
        Highest retained oscillator Fock level.
    omega_t : float
        Oscillator frequency; fixed to 1 as the unit of frequency.
    """

    n_spins: int
    couplings: tuple[float, ...]
    rabi: tuple[float, ...]
    n_max: int = 3
    omega_t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(float(j) for j in self.couplings))
        object.__setattr__(self, "rabi", tuple(float(g) for g in self.rabi))
        if self.n_spins < 2:
            raise ValueError("the chain needs at least 2 spins")
        if len(self.couplings) != self.n_spins - 1:
            raise ValueError(
                f"expected {self.n_spins - 1} couplings, got {len(self.couplings)}"
            )
        if len(self.rabi) != self.n_spins:
            raise ValueError(f"expected {self.n_spins} Rabi couplings, got {len(self.rabi)}")
        if any(not j > 0 for j in self.couplings):
            raise ValueError("couplings J_j must be positive")
        if self.n_max < 0:
            raise ValueError("n_max must be non-negative")
        if self.omega_t != 1.0:
            raise ValueError("omega_t is the unit of frequency and must equal 1")

    @property
    def shape(self) -> SpaceShape:
        return SpaceShape(self.n_spins, self.n_max + 1)

    def with_n_max(self, n_max: int) -> "SystemConfig":
        return SystemConfig(self.n_spins, self.couplings, self.rabi, n_max, self.omega_t)


@dataclass(frozen=True)
class NoiseConfig:
    """Spin decoherence rates.

    ``apply_during_dissipative_segment`` extends the noise to the cooling
    segment; by default it acts only during coherent driving.
    """

    gamma_flip: float = 0.0
    gamma_deph: float = 0.0
    apply_during_dissipative_segment: bool = False

    def __post_init__(self):
        if self.gamma_flip < 0 or self.gamma_deph < 0:
            raise ValueError("noise rates must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.gamma_flip == 0 and self.gamma_deph == 0


@dataclass(frozen=True)
class LindbladGenerator:
    """Hamiltonian plus weighted jump operators."""

    hamiltonian: np.ndarray
    jumps: JumpList = field(default_factory=list)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("Hamiltonian must be square")
        scale = max(1.0, np.max(np.abs(h)))
        if np.max(np.abs(h - h.conj().T)) > 1e-12 * scale:
            raise ValueError("Hamiltonian is not Hermitian")
        for op, rate in self.jumps:
            if np.shape(op) != h.shape:
                raise ValueError("jump operator dimension mismatch")
            if rate < 0:
                raise ValueError("jump rates must be non-negative")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def paul_trap_config(
    n_spins: int, j1: float = 0.05, g: float = 5e-3, n_max: int = 3
) -> SystemConfig:
    """Chain with couplings symmetric about the centre and growing inwards.

    N = 2 uses ``[J1]`` and N = 4 uses ``[J1, sqrt(2) J1, J1]``.
    """
    if n_spins == 2:
        couplings = (j1,)
    elif n_spins == 4:
        couplings = (j1, np.sqrt(2) * j1, j1)
    else:
        raise ValueError("built-in couplings exist only for N = 2 and N = 4")
    return SystemConfig(n_spins, couplings, (g,) * n_spins, n_max)


def is_paul_trap_profile(config: SystemConfig) -> bool:
    """Check ``J_{N-i} = J_i`` and strict growth towards the centre."""
    j = np.array(config.couplings)
    if not np.allclose(j, j[::-1], rtol=1e-12, atol=0):
        return False
    half = len(j) // 2
    return bool(np.all(np.diff(j[: half + 1]) > 0)) if half > 0 else True


def spin_operators(config: SystemConfig, local: np.ndarray) -> list[np.ndarray]:
    shape = config.shape
    return [embed_spin_op(local, j, shape) for j in range(1, config.n_spins + 1)]


def build_h_int(config: SystemConfig) -> np.ndarray:
    """Nearest-neighbour Ising interaction ``sum_j J_j sz_j sz_{j+1}``."""
    sz = spin_operators(config, SIGMA_Z)
    h = np.zeros((config.shape.total_dim,) * 2, dtype=complex)
    for j, jj in enumerate(config.couplings):
        h += jj * sz[j] @ sz[j + 1]
    return h


def magnetization(config: SystemConfig) -> np.ndarray:
    return sum(spin_operators(config, SIGMA_Z))


def build_h0(delta: float, config: SystemConfig) -> np.ndarray:
    """Detuning term ``-delta * sum_j sz_j / 2``."""
    return -0.5 * delta * magnetization(config)


def build_drive(config: SystemConfig) -> np.ndarray:
    """Spin-oscillator coupling ``sum_j g_j sx_j (a + a^dag)``."""
    a = embed_osc_op(annihilation(config.n_max + 1), config.shape)
    sx = spin_operators(config, SIGMA_X)
    coupling = sum(g * op for g, op in zip(config.rabi, sx))
    return coupling @ (a + a.conj().T)


def build_h_osc(config: SystemConfig) -> np.ndarray:
    return config.omega_t * embed_osc_op(number_operator(config.n_max + 1), config.shape)


def build_h_total(delta: float, config: SystemConfig) -> np.ndarray:
    """Full Hamiltonian at detuning ``delta``, counter-rotating terms kept."""
    return build_h_int(config) + build_h0(delta, config) + build_drive(config) + build_h_osc(config)


def cooling_jumps(gamma: float, nbar: float, config: SystemConfig) -> JumpList:
    """Thermal damping of the oscillator: ``(a, gamma (nbar+1))``, ``(a^dag, gamma nbar)``.

    The heating term is omitted when ``nbar == 0``.
    """
    if gamma < 0 or nbar < 0:
        raise ValueError("gamma and nbar must be non-negative")
    a = embed_osc_op(annihilation(config.n_max + 1), config.shape)
    jumps = [(a, gamma * (nbar + 1))]
    if nbar > 0:
        jumps.append((a.conj().T.copy(), gamma * nbar))
    return jumps


def noise_jumps(noise: NoiseConfig, config: SystemConfig) -> JumpList:
    """Per-site spin flips (both directions) and dephasing; zero rates are dropped."""
    jumps: JumpList = []
    for j in range(1, config.n_spins + 1):
        if noise.gamma_flip > 0:
            jumps.append((embed_spin_op(SIGMA_MINUS, j, config.shape), noise.gamma_flip))
            jumps.append((embed_spin_op(SIGMA_PLUS, j, config.shape), noise.gamma_flip))
        if noise.gamma_deph > 0:
            jumps.append((embed_spin_op(SIGMA_Z, j, config.shape), noise.gamma_deph))
    return jumps


def coherent_generator(
    delta: float, config: SystemConfig, noise: NoiseConfig | None = None
) -> LindbladGenerator:
    noise = noise or NoiseConfig()
    return LindbladGenerator(build_h_total(delta, config), noise_jumps(noise, config))


def dissipative_generator(
    gamma: float, nbar: float, config: SystemConfig, noise: NoiseConfig | None = None
) -> LindbladGenerator:
    jumps = cooling_jumps(gamma, nbar, config)
    if noise is not None and noise.apply_during_dissipative_segment:
        jumps = jumps + noise_jumps(noise, config)
    h = np.zeros((config.shape.total_dim,) * 2, dtype=complex)
    return LindbladGenerator(h, jumps)


def dissipator(rho: np.ndarray, op: np.ndarray) -> np.ndarray:
    """``X rho X^dag - (X^dag X rho + rho X^dag X) / 2``."""
    xd = op.conj().T
    xdx = xd @ op
    return op @ rho @ xd - 0.5 * (xdx @ rho + rho @ xdx)


def lindblad_rhs(rho: np.ndarray, gen: LindbladGenerator) -> np.ndarray:
    """Time derivative of ``rho`` under ``gen``."""
    rho = np.asarray(rho)
    if rho.shape != gen.hamiltonian.shape:
        raise ValueError("state and generator dimensions differ")
    h = gen.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for op, rate in gen.jumps:
        if rate:
            out = out + rate * dissipator(rho, op)
    return out


def excitation_parity(config: SystemConfig) -> np.ndarray:
    """Diagonal of ``(-1)^(number of down spins + oscillator quanta)``.

    Every generator built here commutes with this Z2 charge, and the noise
    jumps and the cooling jumps each change it by a fixed sign, so the
    operator-space sectors it defines are never mixed.
    """
    shape = config.shape
    downs = np.array([bin(i).count("1") for i in range(shape.spin_dim)])
    quanta = np.arange(shape.n_osc_levels)
    total = downs[:, None] + quanta[None, :]
    return (1 - 2 * (total % 2)).ravel()


def reflection_permutation(config: SystemConfig) -> np.ndarray:
    """Basis permutation mapping spin site j to site N + 1 - j."""
    shape = config.shape
    n = config.n_spins
    spin_perm = np.array([int(format(i, f"0{n}b")[::-1], 2) for i in range(shape.spin_dim)])
    no = shape.n_osc_levels
    return (spin_perm[:, None] * no + np.arange(no)[None, :]).ravel()
