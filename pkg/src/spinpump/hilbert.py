"""Composite Hilbert space of a spin chain and one truncated oscillator.

Ordering convention: spin 1 is the leftmost (slowest-varying) tensor
factor, the oscillator is the last factor.  Spin basis index 0 is up,
index 1 is down, so ``sigma_z = diag(1, -1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# lowering operator |down><up|
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


@dataclass(frozen=True)
class SpaceShape:
    """Dimensions of the spin-chain plus oscillator space.

    Parameters
    ----------
    n_spins : int
        Number of spins N.
    n_osc_levels : int
        Oscillator truncation dimension, ``n_max + 1``.
    """

    n_spins: int
    n_osc_levels: int

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValueError(f"n_spins must be a positive integer, got {self.n_spins}")
        if int(self.n_osc_levels) != self.n_osc_levels or self.n_osc_levels < 1:
            raise ValueError(
                f"n_osc_levels must be a positive integer, got {self.n_osc_levels}"
            )

    @property
    def spin_dim(self) -> int:
        return 2**self.n_spins

    @property
    def n_max(self) -> int:
        return self.n_osc_levels - 1

    @property
    def total_dim(self) -> int:
        return self.spin_dim * self.n_osc_levels

    @property
    def local_dims(self) -> tuple[int, ...]:
        return (2,) * self.n_spins + (self.n_osc_levels,)


def annihilation(n_levels: int) -> np.ndarray:
    """Truncated annihilation operator with ``a[n-1, n] = sqrt(n)``."""
    return np.diag(np.sqrt(np.arange(1, n_levels)), k=1).astype(complex)


def number_operator(n_levels: int) -> np.ndarray:
    return np.diag(np.arange(n_levels)).astype(complex)


def embed_spin_op(local: np.ndarray, site: int, shape: SpaceShape) -> np.ndarray:
    """Embed a single-spin operator acting on ``site`` (1-based).

    Returns ``I x ... x local x ... x I x I_osc``.
    """
    local = np.asarray(local)
    if local.shape != (2, 2):
        raise ValueError(f"local spin operator must be 2x2, got {local.shape}")
    if not 1 <= site <= shape.n_spins:
        raise ValueError(f"site {site} out of range 1..{shape.n_spins}")
    left = np.eye(2 ** (site - 1))
    right = np.eye(2 ** (shape.n_spins - site) * shape.n_osc_levels)
    return np.kron(np.kron(left, local), right).astype(complex)


def embed_osc_op(local: np.ndarray, shape: SpaceShape) -> np.ndarray:
    """Embed an oscillator operator as ``I_spins x local``."""
    local = np.asarray(local)
    d = shape.n_osc_levels
    if local.shape != (d, d):
        raise ValueError(f"oscillator operator must be {d}x{d}, got {local.shape}")
    return np.kron(np.eye(shape.spin_dim), local).astype(complex)


def embed_spin_space_op(op: np.ndarray, shape: SpaceShape) -> np.ndarray:
    """Embed an operator on the full spin register as ``op x I_osc``."""
    op = np.asarray(op)
    if op.shape != (shape.spin_dim, shape.spin_dim):
        raise ValueError(f"spin-space operator must be {shape.spin_dim}-dimensional")
    return np.kron(op, np.eye(shape.n_osc_levels)).astype(complex)


def partial_trace_ancilla(rho: np.ndarray, shape: SpaceShape) -> np.ndarray:
    """Trace out the oscillator, returning the reduced spin state."""
    rho = np.asarray(rho)
    if rho.shape != (shape.total_dim, shape.total_dim):
        raise ValueError(
            f"expected a {shape.total_dim}x{shape.total_dim} matrix, got {rho.shape}"
        )
    ds, do = shape.spin_dim, shape.n_osc_levels
    return np.einsum("iaja->ij", rho.reshape(ds, do, ds, do))


def partial_trace_spins(rho: np.ndarray, shape: SpaceShape) -> np.ndarray:
    """Trace out the spins, returning the oscillator state."""
    ds, do = shape.spin_dim, shape.n_osc_levels
    return np.einsum("iaib->ab", np.asarray(rho).reshape(ds, do, ds, do))


def product_state(spins: str | list[int], n: int, shape: SpaceShape) -> np.ndarray:
    """State vector for a spin configuration and oscillator Fock level.

    ``spins`` is a string such as ``"udud"`` or a list of 0 (up) / 1 (down).
    """
    bits = spin_bits(spins)
    if len(bits) != shape.n_spins:
        raise ValueError("configuration length does not match n_spins")
    if not 0 <= n < shape.n_osc_levels:
        raise ValueError(f"Fock level {n} outside truncation")
    vec = np.zeros(shape.total_dim, dtype=complex)
    vec[config_index(bits) * shape.n_osc_levels + n] = 1.0
    return vec


def spin_bits(spins: str | list[int]) -> list[int]:
    if isinstance(spins, str):
        table = {"u": 0, "d": 1, "0": 0, "1": 1}
        try:
            return [table[c] for c in spins.lower()]
        except KeyError as exc:
            raise ValueError(f"bad spin label {spins!r}") from exc
    return [int(b) for b in spins]


def config_index(bits: list[int]) -> int:
    idx = 0
    for b in bits:
        idx = 2 * idx + b
    return idx


def config_bits(index: int, n_spins: int) -> list[int]:
    return [(index >> (n_spins - 1 - k)) & 1 for k in range(n_spins)]


def config_label(index: int, n_spins: int) -> str:
    return "".join("ud"[b] for b in config_bits(index, n_spins))


def check_density_matrix(
    rho: np.ndarray, shape: SpaceShape | None = None, tol: float = 1e-10,
    pos_tol: float = 1e-8,
) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid density matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if shape is not None and rho.shape[0] != shape.total_dim:
        raise ValueError("density matrix does not match space shape")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"trace {np.trace(rho).real:.3e} differs from 1")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -pos_tol:
        raise ValueError("density matrix has negative eigenvalues")
