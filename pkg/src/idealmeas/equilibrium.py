"""
Gibbsian equilibrium forms of S + A.

The maximum-entropy state under expectation constraints <C_k> = c_k has
the form exp(-sum_k lam_k C_k) / Z.  The multipliers are found by a
globalized Newton method on the convex function

    g(lam) = ln Z(lam) + sum_k lam_k c_k,

whose minimum equals the constrained maximum entropy.  ``dual_objective``
returns -g, so that its gradient is the residual vector <C_k> - c_k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import operators as ops
from .models import ApparatusSpec, MeasurementModel

WEIGHT_CUTOFF = 1e-12


class InfeasibleTargetError(ValueError):
    """A constraint target lies outside the open spectral range of its observable."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: np.ndarray, iterations: int):
        super().__init__(f"{message} (max residual {np.max(np.abs(residual)):.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def canonical_sector_state(H_A: np.ndarray, h_i: np.ndarray, beta: float) -> np.ndarray:
    """R_i^h ∝ exp[-beta (H_A + h_i)]."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return ops.gibbs(ops.square(H_A) + ops.square(h_i), beta)


def microcanonical_state(apparatus: ApparatusSpec, sector: int) -> np.ndarray:
    """Uniform mixture over the G_k levels of sector k, zero elsewhere."""
    if not 0 <= sector < apparatus.n_sectors:
        raise IndexError(f"apparatus has no sector {sector}")
    mask = apparatus.sector_mask(sector)
    return np.diag(mask / mask.sum()).astype(complex)


def sector_leakage(state: np.ndarray, apparatus: ApparatusSpec, sector: int) -> float:
    """Weight of an apparatus state outside the given sector."""
    return float(1.0 - np.real(np.diagonal(state))[apparatus.sector_mask(sector)].sum())


@dataclass(frozen=True, eq=False)
class MaxEntProblem:
    constraints: tuple[np.ndarray, ...]
    targets: tuple[float, ...]

    def __post_init__(self):
        if len(self.constraints) != len(self.targets) or not self.constraints:
            raise ValueError("need one target per constraint observable")
        cons = tuple(ops.square(c, "constraint") for c in self.constraints)
        if any(not ops.is_hermitian(c) for c in cons):
            raise ValueError("constraint observables must be Hermitian")
        object.__setattr__(self, "constraints", cons)
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))

    @classmethod
    def energy(cls, H: np.ndarray, E: float) -> "MaxEntProblem":
        return cls((H,), (E,))

    @property
    def dim(self) -> int:
        return self.constraints[0].shape[0]


@dataclass(frozen=True)
class MaxEntSolution:
    state: np.ndarray
    multipliers: np.ndarray
    residual: np.ndarray
    iterations: int
    entropy: float


class _Gibbs:
    """exp(-K)/Z with K = sum lam_k C_k, evaluated once per multiplier vector."""

    def __init__(self, problem: MaxEntProblem, lam: np.ndarray):
        K = sum(l * c for l, c in zip(lam, problem.constraints))
        e, V = np.linalg.eigh(0.5 * (K + ops.dagger(K)))
        w = np.exp(-(e - e[0]))
        z = w.sum()
        self.energies = e
        self.vectors = V
        self.p = w / z
        self.log_z = float(np.log(z) - e[0])
        self.cons_eig = [ops.dagger(V) @ c @ V for c in problem.constraints]
        self.means = np.array([float(np.real(np.sum(self.p * np.diagonal(c)))) for c in self.cons_eig])

    @property
    def state(self) -> np.ndarray:
        return (self.vectors * self.p) @ ops.dagger(self.vectors)

    def covariance(self) -> np.ndarray:
        """Hessian of ln Z: Kubo-Mori covariance of the constraint observables."""
        e, p = self.energies, self.p
        de = e[:, None] - e[None, :]
        close = np.abs(de) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            kernel = np.where(close, 0.5 * (p[:, None] + p[None, :]), -(p[:, None] - p[None, :]) / np.where(close, 1.0, de))
        n = len(self.cons_eig)
        H = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                val = np.real(np.sum(self.cons_eig[a] * self.cons_eig[b].T * kernel))
                H[a, b] = H[b, a] = val
        return H - np.outer(self.means, self.means)


def dual_objective(problem: MaxEntProblem, lam: Sequence[float]) -> float:
    """-(ln Z(lam) + lam . c); concave, maximized at the solution."""
    lam = np.asarray(lam, dtype=float)
    g = _Gibbs(problem, lam)
    return -(g.log_z + float(lam @ np.asarray(problem.targets)))


def dual_gradient(problem: MaxEntProblem, lam: Sequence[float]) -> np.ndarray:
    """Residual vector <C_k>_lam - c_k, the gradient of ``dual_objective``."""
    g = _Gibbs(problem, np.asarray(lam, dtype=float))
    return g.means - np.asarray(problem.targets)


def check_feasible(problem: MaxEntProblem) -> None:
    for k, (c, t) in enumerate(zip(problem.constraints, problem.targets)):
        w = np.linalg.eigvalsh(c)
        if w[-1] - w[0] <= ops.DEGENERACY_TOL:
            if abs(t - w[0]) > 1e-10:
                raise InfeasibleTargetError(f"constraint {k} is constant {w[0]:.6g}, target {t:.6g}")
            continue
        if not w[0] < t < w[-1]:
            raise InfeasibleTargetError(
                f"target {t:.6g} of constraint {k} outside the open spectral range ({w[0]:.6g}, {w[-1]:.6g})")


def max_ent_solve(problem: MaxEntProblem, tol: float = 1e-11, max_iter: int = 200,
                  initial: Sequence[float] | None = None) -> MaxEntSolution:
    """
    Maximum-entropy state meeting every constraint to ``tol``.

    Raises InfeasibleTargetError for a target outside an observable's
    spectral range and ConvergenceError when Newton stalls.
    """
    check_feasible(problem)
    targets = np.asarray(problem.targets)
    lam = np.zeros(len(targets)) if initial is None else np.asarray(initial, dtype=float).copy()
    g = _Gibbs(problem, lam)
    value = g.log_z + lam @ targets
    for it in range(max_iter + 1):
        residual = g.means - targets
        if np.max(np.abs(residual)) <= tol:
            return MaxEntSolution(g.state, lam, residual, it, value)
        if it == max_iter:
            break
        hess = g.covariance()
        # gradient of the convex objective is -residual; lstsq handles redundant constraints
        step = np.linalg.lstsq(hess, residual, rcond=1e-12)[0]
        slope = -float(residual @ step)
        t = 1.0
        while True:
            trial_lam = lam + t * step
            trial = _Gibbs(problem, trial_lam)
            trial_value = trial.log_z + trial_lam @ targets
            slack = 1e-14 * max(1.0, abs(value))
            if trial_value <= value + 1e-4 * t * slope + slack or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10 and trial_value > value + slack:
            raise ConvergenceError("line search failed", residual, it)
        lam, g, value = trial_lam, trial, trial_value
    raise ConvergenceError("Newton iteration did not converge", g.means - targets, max_iter)


def block_observable_basis(projector: np.ndarray) -> list[np.ndarray]:
    """Hermitian basis of the operators Pi M Pi acting inside one block."""
    w, V = np.linalg.eigh(projector)
    cols = V[:, w > 0.5]
    r = cols.shape[1]
    basis = []
    for a in range(r):
        for b in range(a, r):
            if a == b:
                m = np.zeros((r, r), dtype=complex)
                m[a, a] = 1
                basis.append(m)
            else:
                m = np.zeros((r, r), dtype=complex)
                m[a, b] = m[b, a] = 1 / np.sqrt(2)
                basis.append(m)
                m = np.zeros((r, r), dtype=complex)
                m[a, b], m[b, a] = -1j / np.sqrt(2), 1j / np.sqrt(2)
                basis.append(m)
    return [cols @ m @ ops.dagger(cols) for m in basis]


def conserved_problem(model: MeasurementModel, D: np.ndarray, coupled: bool = True) -> MaxEntProblem:
    """
    Constraints for S + A: the energy and every block-diagonal observable
    y ⊗ I_A of S, with targets read off from the state D.
    """
    H = model.H_coupled if coupled else model.H_free
    eye_a = np.eye(model.d_A)
    cons = [H]
    for p in model.projectors.projectors:
        cons.extend(ops.tensor(y, eye_a) for y in block_observable_basis(p))
    targets = [float(np.real(np.trace(D @ c))) for c in cons]
    return MaxEntProblem(tuple(cons), tuple(targets))


@dataclass(frozen=True, eq=False)
class GibbsianForm:
    """sum_i q_i x_i ⊗ R_i with x_i supported in block i of the tested observable."""

    weights: tuple[float, ...]
    system_states: tuple[np.ndarray | None, ...]
    apparatus_states: tuple[np.ndarray, ...]
    flavor: str

    def __post_init__(self):
        q = np.asarray(self.weights, dtype=float)
        if np.any(q < -WEIGHT_CUTOFF) or abs(q.sum() - 1) > ops.TRACE_TOL:
            raise ValueError(f"weights must be non-negative and sum to one, got {q}")
        if not len(self.weights) == len(self.system_states) == len(self.apparatus_states):
            raise ValueError("weights, system states and apparatus states must align")
        for qi, x in zip(q, self.system_states):
            if x is None and qi > WEIGHT_CUTOFF:
                raise ValueError("a populated block needs a system state")

    def undefined_blocks(self) -> list[int]:
        return [i for i, x in enumerate(self.system_states) if x is None]

    def state(self) -> np.ndarray:
        terms = [q * ops.tensor(x, R) for q, x, R in zip(self.weights, self.system_states, self.apparatus_states)
                 if x is not None and q > 0]
        return sum(terms)


def sector_targets(model: MeasurementModel, flavor: str) -> tuple[np.ndarray, ...]:
    """Apparatus factor R_i per outcome: microcanonical R_i^mu or canonical R_i^h."""
    app = model.apparatus
    if flavor == "microcanonical":
        return tuple(microcanonical_state(app, k) for k in app.outcome_sectors)
    if flavor == "canonical":
        return tuple(canonical_sector_state(app.H_A, h, model.beta) for h in app.sources)
    raise ValueError(f"unknown flavor {flavor!r}")


def gibbsian_state(model: MeasurementModel, weights: Sequence[float], system_states: Sequence[np.ndarray],
                   flavor: str = "microcanonical") -> np.ndarray:
    form = GibbsianForm(tuple(float(q) for q in weights), tuple(system_states), sector_targets(model, flavor), flavor)
    return form.state()


def identify_equilibrium(D: np.ndarray, model: MeasurementModel,
                         flavor: str = "microcanonical") -> tuple[GibbsianForm, float]:
    """
    Fit D by sum_i q_i x_i ⊗ R_i.

    q_i x_i is the S-marginal of the (i, i) block (Pi_i ⊗ I) D (Pi_i ⊗ I);
    the residual is the trace distance between D and the fitted form.
    Blocks with q_i below 1e-12 get x_i = None.
    """
    D = ops.require_density(D, "state to identify")
    eye_a = np.eye(model.d_A)
    weights, xs = [], []
    for p in model.projectors.projectors:
        P = ops.tensor(p, eye_a)
        block = ops.partial_trace(P @ D @ P, model.dims, keep="S")
        q = float(np.real(np.trace(block)))
        weights.append(max(q, 0.0))
        xs.append(block / q if q > WEIGHT_CUTOFF else None)
    total = sum(weights)
    weights = [q / total for q in weights]
    form = GibbsianForm(tuple(weights), tuple(xs), sector_targets(model, flavor), flavor)
    return form, ops.trace_distance(D, form.state())
