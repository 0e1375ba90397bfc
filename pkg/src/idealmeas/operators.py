"""
Dense operator algebra on finite tensor-product Hilbert spaces.

Operators, density operators and state vectors are plain complex numpy
arrays.  The system factor S is always the leftmost Kronecker factor.
Spectral functions go through Hermitian eigendecompositions; no series
expansions are used anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
NEGATIVE_EIG_TOL = 1e-10
DEGENERACY_TOL = 1e-9


class DensityError(ValueError):
    """Raised when an operator fails the density-operator invariants."""


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def hermiticity_defect(a: np.ndarray) -> float:
    if a.ndim == 2 and a.shape[0] == a.shape[1] and is_diagonal(a):
        return 2.0 * float(np.max(np.abs(np.imag(np.diagonal(a))))) if a.size else 0.0
    return max_abs(a - dagger(a))


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return a.ndim == 2 and a.shape[0] == a.shape[1] and hermiticity_defect(a) <= tol


def is_diagonal(a: np.ndarray) -> bool:
    """Exact test for a diagonal matrix (no off-diagonal entry is nonzero)."""
    n = a.shape[0]
    if n <= 1:
        return True
    # a strided view over the off-diagonal entries avoids an n*n temporary
    flat = a.reshape(-1)
    off = flat[1:].reshape(n - 1, n + 1)[:, :-1]
    return not np.any(off)


def square(a, name: str = "operator") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def ket(amplitudes) -> np.ndarray:
    """Normalized state vector; raises on zero norm."""
    v = np.asarray(amplitudes, dtype=complex).reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / norm


def projector(psi: np.ndarray) -> np.ndarray:
    """|psi><psi| for a (normalized) vector."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product a ⊗ b with `a` as the leftmost (system) factor."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def partial_trace(D: np.ndarray, dims: tuple[int, int], keep: str = "S") -> np.ndarray:
    """
    Reduced density operator of a bipartite state.

    Parameters
    ----------
    D : ndarray
        Operator on the d_S * d_A dimensional joint space.
    dims : (int, int)
        Factor dimensions (d_S, d_A).
    keep : {"S", "A"}
        Which factor survives: "S" returns tr_A D, "A" returns tr_S D.
    """
    d_s, d_a = dims
    D = np.asarray(D, dtype=complex)
    if D.shape != (d_s * d_a, d_s * d_a):
        raise ValueError(f"operator of shape {D.shape} does not match dims {dims}")
    t = D.reshape(d_s, d_a, d_s, d_a)
    if keep.upper() == "S":
        return np.einsum("iaja->ij", t)
    if keep.upper() == "A":
        return np.einsum("iaib->ab", t)
    raise ValueError(f"keep must be 'S' or 'A', got {keep!r}")


class Propagator:
    """
    Unitary propagator e^{-iHt} built from a single eigendecomposition of H.

    Diagonal generators skip the decomposition entirely; `vectors` is then
    None and stands for the identity.  hbar = 1.
    """

    def __init__(self, H: np.ndarray, check: bool = True):
        H = square(H, "Hamiltonian")
        if check and not is_hermitian(H):
            raise ValueError(f"Hamiltonian is not Hermitian (defect {hermiticity_defect(H):.3e})")
        self.dim = H.shape[0]
        if is_diagonal(H):
            self.energies = np.real(np.diagonal(H)).copy()
            self.vectors = None
        else:
            self.energies, self.vectors = np.linalg.eigh(H)

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.energies * t)

    def to_eigenbasis(self, O: np.ndarray) -> np.ndarray:
        if self.vectors is None:
            return np.asarray(O, dtype=complex)
        return dagger(self.vectors) @ O @ self.vectors

    def from_eigenbasis(self, O: np.ndarray) -> np.ndarray:
        if self.vectors is None:
            return O
        return self.vectors @ O @ dagger(self.vectors)

    def unitary(self, t: float) -> np.ndarray:
        ph = self.phases(t)
        if self.vectors is None:
            return np.diag(ph)
        return (self.vectors * ph) @ dagger(self.vectors)

    def evolve(self, O: np.ndarray, t: float) -> np.ndarray:
        """e^{-iHt} O e^{+iHt}."""
        ph = self.phases(t)
        X = self.to_eigenbasis(O)
        return self.from_eigenbasis(ph[:, None] * X * ph.conj()[None, :])

    def evolve_vector(self, psi: np.ndarray, t: float) -> np.ndarray:
        ph = self.phases(t)
        if self.vectors is None:
            return ph * psi
        return self.vectors @ (ph * (dagger(self.vectors) @ psi))


def evolve_unitary(O: np.ndarray, H: np.ndarray, t: float) -> np.ndarray:
    """Heisenberg-picture-free evolution e^{-iHt} O e^{iHt} (hbar = 1)."""
    return Propagator(H).evolve(square(O), t)


def _eigvalsh_checked(D: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(square(D, "density operator"))
    if w[0] < -NEGATIVE_EIG_TOL:
        raise DensityError(f"negative eigenvalue {w[0]:.3e} beyond tolerance")
    return w


def von_neumann_entropy(D: np.ndarray) -> float:
    """-tr D ln D in nats, with 0 ln 0 = 0."""
    w = _eigvalsh_checked(D)
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


def trace_distance(A: np.ndarray, B: np.ndarray) -> float:
    """(1/2) * sum of singular values of A - B."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = A - B
    if is_diagonal(diff):
        return 0.5 * float(np.sum(np.abs(np.diagonal(diff))))
    if is_hermitian(diff, 1e-10):
        s = np.abs(np.linalg.eigvalsh(0.5 * (diff + dagger(diff))))
    else:
        s = np.linalg.svd(diff, compute_uv=False)
    return 0.5 * float(np.sum(s))


@dataclass(frozen=True)
class DensityDiagnostics:
    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float
    passed: bool
    failures: tuple[str, ...] = field(default_factory=tuple)


def check_density(D: np.ndarray) -> DensityDiagnostics:
    """Report Hermiticity, normalization and positivity defects of D."""
    D = square(D, "density operator")
    herm = hermiticity_defect(D)
    tr_def = abs(complex(np.trace(D)) - 1.0)
    if is_diagonal(D):
        min_eig = float(np.min(np.real(np.diagonal(D))))
    else:
        min_eig = float(np.linalg.eigvalsh(0.5 * (D + dagger(D)))[0])
    failures = []
    if herm > HERMITIAN_TOL:
        failures.append("hermiticity")
    if tr_def > TRACE_TOL:
        failures.append("trace")
    if min_eig < -NEGATIVE_EIG_TOL:
        failures.append("negative eigenvalue")
    return DensityDiagnostics(herm, tr_def, min_eig, not failures, tuple(failures))


def require_density(D: np.ndarray, what: str = "state") -> np.ndarray:
    diag = check_density(D)
    if not diag.passed:
        raise DensityError(
            f"{what} is not a valid density operator: {', '.join(diag.failures)} "
            f"(hermiticity {diag.hermiticity_defect:.2e}, trace {diag.trace_defect:.2e}, "
            f"min eig {diag.min_eigenvalue:.2e})"
        )
    return np.asarray(D, dtype=complex)


def gibbs(H: np.ndarray, beta: float) -> np.ndarray:
    """Normalized exp(-beta H), spectrally shifted by the ground energy."""
    H = square(H, "Hamiltonian")
    if not is_hermitian(H):
        raise ValueError("Gibbs state requires a Hermitian generator")
    if is_diagonal(H):
        e = np.real(np.diagonal(H))
        w = np.exp(-beta * (e - e.min()))
        return np.diag(w / w.sum()).astype(complex)
    e, V = np.linalg.eigh(H)
    w = np.exp(-beta * (e - e[0]))
    return (V * (w / w.sum())) @ dagger(V)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """GUE-type Hermitian matrix with E|H_ij|^2 = scale^2 off the diagonal."""
    x = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    return scale * (x + dagger(x)) / np.sqrt(2)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density operator from a Ginibre matrix of the given rank."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ dagger(g)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary."""
    if dim == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(dim, random_state=rng)
