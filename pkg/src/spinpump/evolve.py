"""Propagation of density matrices and the two-segment pulse map.

Vectorization stacks columns: ``vec(rho)[i + d*j] = rho[i, j]``.  With this
convention ``vec(A rho B) = (B^T kron A) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .hilbert import SpaceShape, annihilation
from .model import (
    LindbladGenerator,
    NoiseConfig,
    SystemConfig,
    dissipative_generator,
    coherent_generator,
    reflection_permutation,
)

RK_TOL = 1e-10
TRACE_DRIFT_TOL = 1e-8
MAX_EXPM_DIM = 64


class NumericalError(RuntimeError):
    """Raised when an integration cannot meet its accuracy guarantees."""


@dataclass(frozen=True)
class PulseSpec:
    """One pulse: coherent drive at ``delta`` for ``t_coherent``, then cooling
    at rate ``gamma`` towards occupation ``nbar`` for ``t_dissipative``."""

    delta: float
    t_coherent: float
    t_dissipative: float = 200.0
    gamma: float = 0.1
    nbar: float = 0.0

    def __post_init__(self):
        for name in ("delta", "t_coherent", "t_dissipative", "gamma", "nbar"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.t_coherent < 0 or self.t_dissipative < 0:
            raise ValueError("durations must be non-negative")
        if self.gamma < 0 or self.nbar < 0:
            raise ValueError("gamma and nbar must be non-negative")

    def with_duration(self, t: float) -> "PulseSpec":
        return PulseSpec(self.delta, float(t), self.t_dissipative, self.gamma, self.nbar)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(d, d, order="F")


def liouvillian_sparse(gen: LindbladGenerator) -> sp.csr_matrix:
    """Sparse superoperator of ``gen`` in the column-stacking convention."""
    h = sp.csr_matrix(gen.hamiltonian)
    eye = sp.identity(gen.dim, dtype=complex, format="csr")
    out = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for op, rate in gen.jumps:
        if not rate:
            continue
        x = sp.csr_matrix(op)
        xdx = (x.conj().T @ x).tocsr()
        out = out + rate * (
            sp.kron(x.conj(), x) - 0.5 * sp.kron(eye, xdx) - 0.5 * sp.kron(xdx.T, eye)
        )
    return sp.csr_matrix(out)


def liouvillian(gen: LindbladGenerator) -> np.ndarray:
    """Dense ``dim^2 x dim^2`` superoperator of ``gen``."""
    return liouvillian_sparse(gen).toarray()


# ---------------------------------------------------------------------------
# Runge-Kutta route


def _rhs_factory(gen: LindbladGenerator):
    h_eff = gen.hamiltonian.astype(complex)
    terms = []
    for op, rate in gen.jumps:
        if rate:
            h_eff = h_eff - 0.5j * rate * (op.conj().T @ op)
            terms.append((op, op.conj().T, rate))
    h_eff_dag = h_eff.conj().T

    def rhs(rho):
        out = -1j * (h_eff @ rho - rho @ h_eff_dag)
        for x, xd, rate in terms:
            out += rate * (x @ rho @ xd)
        return out

    return rhs


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def propagate_rk(
    rho: np.ndarray,
    gen: LindbladGenerator,
    t: float,
    tol: float = RK_TOL,
    max_steps: int = 200_000,
) -> np.ndarray:
    """Classical RK4 with step-doubling error control.

    A step of size ``h`` is accepted when the doubling error estimate is
    below ``tol * h``; the accepted value is Richardson-extrapolated.
    """
    f = _rhs_factory(gen)
    y = np.array(rho, dtype=complex)
    if t == 0:
        return y
    scale = np.linalg.norm(gen.hamiltonian, 2) + sum(
        r * np.linalg.norm(op, 2) ** 2 for op, r in gen.jumps
    )
    h = min(t, 0.1 / max(scale, 1e-12))
    elapsed = 0.0
    steps = 0
    while elapsed < t:
        h = min(h, t - elapsed)
        full = _rk4_step(f, y, h)
        half = _rk4_step(f, _rk4_step(f, y, 0.5 * h), 0.5 * h)
        err = np.max(np.abs(half - full)) / 15.0
        if err <= tol * h:
            y = half + (half - full) / 15.0
            elapsed += h
        factor = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * (tol * h / err) ** 0.25))
        h *= factor
        steps += 1
        if steps > max_steps:
            raise NumericalError(f"RK step budget exhausted at t={elapsed:.6g} of {t:.6g}")
        if h < 1e-14 * max(t, 1.0):
            raise NumericalError("RK step size underflow")
    return y


# ---------------------------------------------------------------------------
# Exponential route with block reduction


def _reflection_transform(perm: np.ndarray) -> sp.csr_matrix:
    """Real orthogonal matrix whose columns are (anti)symmetric combinations
    under an involutive index permutation."""
    n = perm.size
    rows, cols, vals = [], [], []
    col = 0
    anti = []
    r = 1 / np.sqrt(2)
    for i in range(n):
        j = perm[i]
        if j == i:
            rows.append(i); cols.append(col); vals.append(1.0)
            col += 1
        elif i < j:
            rows += [i, j]; cols += [col, col]; vals += [r, r]
            col += 1
            anti.append((i, j))
    for i, j in anti:
        rows += [i, j]; cols += [col, col]; vals += [r, -r]
        col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class BlockExponential:
    """``expm(L t)`` computed block by block.

    ``L`` is optionally rotated into the symmetric/antisymmetric basis of an
    index involution it commutes with, then split into the connected
    components of its sparsity graph.  Blocks are exponentiated only when a
    vector with support on them is first applied.
    """

    def __init__(self, lsup: sp.spmatrix, t: float, involution: np.ndarray | None = None,
                 drop_tol: float = 1e-14):
        lsup = sp.csr_matrix(lsup)
        self.n = lsup.shape[0]
        self.t = float(t)
        self.transform = None
        if involution is not None:
            q = _reflection_transform(involution)
            lsup = sp.csr_matrix(q.T @ lsup @ q)
            self.transform = q
        scale = abs(lsup).max() if lsup.nnz else 0.0
        lsup.data[np.abs(lsup.data) <= drop_tol * scale] = 0
        lsup.eliminate_zeros()
        self._lsup = lsup
        pattern = sp.csr_matrix((np.ones(lsup.nnz), lsup.indices, lsup.indptr), shape=lsup.shape)
        n_comp, labels = connected_components(pattern, directed=False)
        self.blocks = [np.flatnonzero(labels == c) for c in range(n_comp)]
        self._exp: dict[int, np.ndarray] = {}

    def block_exp(self, k: int) -> np.ndarray:
        if k not in self._exp:
            idx = self.blocks[k]
            sub = self._lsup[idx][:, idx].toarray()
            self._exp[k] = la.expm(sub * self.t) if self.t else np.eye(idx.size, dtype=complex)
        return self._exp[k]

    def apply(self, v: np.ndarray) -> np.ndarray:
        w = self.transform.T @ v if self.transform is not None else np.asarray(v)
        out = np.zeros(self.n, dtype=complex)
        for k, idx in enumerate(self.blocks):
            x = w[idx]
            if np.any(x != 0):
                out[idx] = self.block_exp(k) @ x
        return self.transform @ out if self.transform is not None else out

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=complex)
        for k, idx in enumerate(self.blocks):
            out[np.ix_(idx, idx)] = self.block_exp(k)
        if self.transform is not None:
            q = self.transform
            out = (q @ sp.csr_matrix(out) @ q.T).toarray()
        return out


def _invariant_under(lsup: sp.spmatrix, perm: np.ndarray, rtol: float = 1e-13) -> bool:
    lsup = sp.csr_matrix(lsup)
    diff = lsup[perm][:, perm] - lsup
    scale = abs(lsup).max() if lsup.nnz else 1.0
    return diff.nnz == 0 or abs(diff).max() <= rtol * scale


def superop_involution(perm: np.ndarray) -> np.ndarray:
    """Lift a Hilbert-space permutation to column-stacked operator space."""
    d = perm.size
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    target = perm[i] + d * perm[j]
    out = np.empty(d * d, dtype=int)
    out[(i + d * j).ravel()] = target.ravel()
    return out


def propagate_expm(rho: np.ndarray, gen: LindbladGenerator, t: float) -> np.ndarray:
    if t == 0:
        return np.array(rho, dtype=complex)
    expo = BlockExponential(liouvillian_sparse(gen), t)
    return unvec(expo.apply(vec(rho)))


def _check_trace(before: np.ndarray, after: np.ndarray) -> None:
    drift = abs(np.trace(after) - np.trace(before))
    if drift > TRACE_DRIFT_TOL:
        raise NumericalError(f"trace drift {drift:.3e} exceeds {TRACE_DRIFT_TOL:g}")


def propagate(
    rho: np.ndarray, gen: LindbladGenerator, t: float, method: str = "auto"
) -> np.ndarray:
    """Evolve ``rho`` for time ``t`` under ``gen``.

    ``method`` is ``"expm"`` (exact exponential of the superoperator),
    ``"rk"`` (adaptive RK4) or ``"auto"``, which exponentiates up to
    Hilbert dimension 64 and integrates above it.
    """
    if t < 0:
        raise ValueError("duration must be non-negative")
    rho = np.asarray(rho)
    if rho.shape != gen.hamiltonian.shape:
        raise ValueError("state and generator dimensions differ")
    if method == "auto":
        method = "expm" if gen.dim <= MAX_EXPM_DIM else "rk"
    if method == "expm":
        out = propagate_expm(rho, gen, t)
    elif method == "rk":
        out = propagate_rk(rho, gen, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    _check_trace(rho, out)
    return out


def compare_integrators(rho: np.ndarray, gen: LindbladGenerator, t: float) -> float:
    """Max-norm gap between the RK route and ``scipy.linalg.expm`` of the
    assembled superoperator."""
    if gen.dim**2 > 5000:
        raise ValueError("dimension too large for a dense superoperator exponential")
    reference = unvec(la.expm(liouvillian(gen) * t) @ vec(rho))
    return float(np.max(np.abs(propagate(rho, gen, t, method="rk") - reference)))


# ---------------------------------------------------------------------------
# Channel steps


class UnitaryStep:
    def __init__(self, u: np.ndarray):
        self.u = u

    def apply(self, rho):
        return self.u @ rho @ self.u.conj().T

    def superoperator(self):
        return np.kron(self.u.conj(), self.u)


class KrausStep:
    def __init__(self, kraus: list[np.ndarray]):
        self.kraus = kraus

    def apply(self, rho):
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def superoperator(self):
        return sum(np.kron(k.conj(), k) for k in self.kraus)


class AncillaStep:
    """Channel acting on the oscillator factor only, given as a 4-index
    tensor ``E[a, b, k, l]`` mapping ``rho_osc[k, l]`` to ``rho_osc[a, b]``."""

    def __init__(self, tensor: np.ndarray, shape: SpaceShape):
        self.tensor = tensor
        self.shape = shape

    def apply(self, rho):
        ds, do = self.shape.spin_dim, self.shape.n_osc_levels
        r = rho.reshape(ds, do, ds, do)
        return np.einsum("ikjl,abkl->iajb", r, self.tensor).reshape(rho.shape)

    def superoperator(self):
        return _columns(self.apply, self.shape.total_dim)


class ExponentialStep:
    def __init__(self, expo: BlockExponential):
        self.expo = expo

    def apply(self, rho):
        return unvec(self.expo.apply(vec(rho)))

    def superoperator(self):
        return self.expo.dense()


class IntegratorStep:
    def __init__(self, gen: LindbladGenerator, t: float):
        self.gen = gen
        self.t = t

    def apply(self, rho):
        return propagate_rk(rho, self.gen, self.t)

    def superoperator(self):
        return _columns(self.apply, self.gen.dim)


def _columns(apply, dim: int) -> np.ndarray:
    out = np.empty((dim * dim, dim * dim), dtype=complex)
    basis = np.zeros((dim, dim), dtype=complex)
    for col in range(dim * dim):
        i, j = col % dim, col // dim
        basis[i, j] = 1
        out[:, col] = vec(apply(basis))
        basis[i, j] = 0
    return out


@dataclass
class PropagatedMap:
    """A quantum channel stored as an ordered list of factored steps.

    ``apply`` runs the steps in order.  ``superoperator`` assembles the full
    ``dim^2 x dim^2`` matrix on first access.
    """

    dim: int
    steps: list = field(default_factory=list)
    pulse: PulseSpec | None = None

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.asarray(rho, dtype=complex)
        for step in self.steps:
            out = step.apply(out)
        return out

    def __call__(self, rho):
        return self.apply(rho)

    @cached_property
    def superoperator(self) -> np.ndarray:
        out = np.eye(self.dim * self.dim, dtype=complex)
        for step in self.steps:
            out = step.superoperator() @ out
        return out

    def then(self, other: "PropagatedMap") -> "PropagatedMap":
        """Channel applying ``self`` first and ``other`` second."""
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return PropagatedMap(self.dim, self.steps + other.steps)


def compose(maps: list[PropagatedMap]) -> PropagatedMap:
    out = PropagatedMap(maps[0].dim)
    for m in maps:
        out = out.then(m)
    return out


def unitary_from_hamiltonian(h: np.ndarray, t: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def ancilla_cooling_tensor(n_levels: int, gamma_t: float, nbar: float) -> np.ndarray:
    """Oscillator-only damping channel for a total dose ``gamma * t``."""
    a = annihilation(n_levels)
    eye = np.eye(n_levels)

    def diss(x):
        xdx = x.conj().T @ x
        return np.kron(x.conj(), x) - 0.5 * np.kron(eye, xdx) - 0.5 * np.kron(xdx.T, eye)

    lsup = (nbar + 1) * diss(a)
    if nbar > 0:
        lsup = lsup + nbar * diss(a.conj().T)
    return la.expm(lsup * gamma_t).reshape((n_levels,) * 4, order="F")


def _symmetry_for(config: SystemConfig, lsup: sp.spmatrix) -> np.ndarray | None:
    perm = reflection_permutation(config)
    if np.array_equal(perm, np.arange(perm.size)):
        return None
    sperm = superop_involution(perm)
    return sperm if _invariant_under(lsup, sperm) else None


def build_pulse_map(
    pulse: PulseSpec,
    config: SystemConfig,
    noise: NoiseConfig | None = None,
    method: str = "auto",
) -> PropagatedMap:
    """Channel for one pulse: coherent segment followed by cooling.

    Noise-free coherent segments are stored as a unitary, a cooling-only
    dissipative segment as an oscillator channel; any segment with spin
    noise is exponentiated on the full operator space in symmetry blocks.
    ``method="rk"`` integrates noisy segments instead.
    """
    noise = noise or NoiseConfig()
    shape = config.shape
    steps = []
    if method == "auto":
        method = "expm" if shape.total_dim <= MAX_EXPM_DIM else "rk"
    if pulse.t_coherent > 0:
        gen = coherent_generator(pulse.delta, config, noise)
        if noise.is_zero:
            steps.append(UnitaryStep(unitary_from_hamiltonian(gen.hamiltonian, pulse.t_coherent)))
        else:
            steps.append(_noisy_step(gen, pulse.t_coherent, config, method))
    if pulse.t_dissipative > 0 and pulse.gamma > 0:
        if noise.apply_during_dissipative_segment and not noise.is_zero:
            gen = dissipative_generator(pulse.gamma, pulse.nbar, config, noise)
            steps.append(_noisy_step(gen, pulse.t_dissipative, config, method))
        else:
            tensor = ancilla_cooling_tensor(
                shape.n_osc_levels, pulse.gamma * pulse.t_dissipative, pulse.nbar
            )
            steps.append(AncillaStep(tensor, shape))
    return PropagatedMap(shape.total_dim, steps, pulse)


def _noisy_step(gen, t, config, method):
    if method == "rk":
        return IntegratorStep(gen, t)
    lsup = liouvillian_sparse(gen)
    return ExponentialStep(BlockExponential(lsup, t, _symmetry_for(config, lsup)))
