"""
Subensembles of runs and their relaxation.

After the full-ensemble state has reached sum_i p_i |s_i><s_i| ⊗ R_i^mu,
every pure component of an admissible split of it lies in the correlated
subspace spanned by |s_i> ⊗ |A_i, eta>.  Such a component,
sum_{i,eta} U(i, eta) |s_i> ⊗ |A_i, eta>, then evolves under H_A alone.

At finite G "relaxation" means convergence of time averages, not of the
instantaneous state; every metric here should be read that way.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import operators as ops
from .equilibrium import microcanonical_state
from .models import MeasurementModel
from .rng import substream

LEAKAGE_TOL = 1e-10


class UnsupportedModelError(ValueError):
    """The subensemble analysis needs non-degenerate s_i and one pointer sector per outcome."""


@dataclass(frozen=True, eq=False)
class CorrelatedSubspace:
    """Span of |s_i> ⊗ |A_i, eta>; ``basis`` holds these kets as columns."""

    basis: np.ndarray
    offsets: tuple[int, ...]
    sizes: tuple[int, ...]

    @classmethod
    def from_model(cls, model: MeasurementModel) -> "CorrelatedSubspace":
        _require_supported(model)
        app = model.apparatus
        cols = []
        offsets, sizes = [], []
        for i in range(model.n_out):
            s_i = model.projectors.eigenvector(i)
            sl = app.sector_slice(app.outcome_sectors[i])
            offsets.append(len(cols))
            sizes.append(sl.stop - sl.start)
            for a in range(sl.start, sl.stop):
                e = np.zeros(model.d_A, dtype=complex)
                e[a] = 1.0
                cols.append(np.kron(s_i, e))
        return cls(np.array(cols).T, tuple(offsets), tuple(sizes))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ ops.dagger(self.basis)

    def coordinates(self, psi: np.ndarray) -> np.ndarray:
        return ops.dagger(self.basis) @ psi

    def leakage(self, psi: np.ndarray) -> float:
        """<psi|(I - P)|psi>, evaluated as the squared norm of the rejected part."""
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        rest = psi - self.basis @ self.coordinates(psi)
        return float(np.real(np.vdot(rest, rest)))


def _require_supported(model: MeasurementModel) -> None:
    if not model.projectors.nondegenerate:
        raise UnsupportedModelError("degenerate eigenvalues of the tested observable are not supported")
    if not model.apparatus.distinguishes_outcomes:
        raise UnsupportedModelError("apparatus does not assign a separate pointer sector to each outcome")


@dataclass(frozen=True, eq=False)
class SubensembleSpec:
    """Correlated pure state with amplitudes U(i, eta), weight k and run count N."""

    amplitudes: tuple[np.ndarray, ...]
    weight: float = 1.0
    runs: int = 1
    t_split: float = 0.0

    def __post_init__(self):
        amps = tuple(np.asarray(u, dtype=complex).reshape(-1) for u in self.amplitudes)
        norm2 = sum(float(np.real(np.vdot(u, u))) for u in amps)
        if abs(norm2 - 1.0) > 1e-12:
            raise ValueError(f"amplitudes must be normalized, sum |U|^2 = {norm2!r}")
        if not 0 < self.weight <= 1:
            raise ValueError("weight k must lie in (0, 1]")
        if self.runs < 1:
            raise ValueError("run count must be positive")
        object.__setattr__(self, "amplitudes", amps)

    def vector(self, subspace: CorrelatedSubspace) -> np.ndarray:
        return subspace.basis @ np.concatenate(self.amplitudes)

    @classmethod
    def from_vector(cls, psi: np.ndarray, subspace: CorrelatedSubspace, weight: float = 1.0,
                    runs: int = 1, t_split: float = 0.0) -> "SubensembleSpec":
        leak = subspace.leakage(psi)
        if leak > LEAKAGE_TOL:
            raise ValueError(f"state leaks {leak:.3e} outside the correlated subspace")
        c = subspace.coordinates(psi)
        c = c / np.linalg.norm(c)
        amps = tuple(c[o:o + g] for o, g in zip(subspace.offsets, subspace.sizes))
        return cls(amps, weight, runs, t_split)


def random_correlated_pure(model: MeasurementModel, seed: int) -> SubensembleSpec:
    """Amplitudes uniform on the unit sphere of the correlated subspace."""
    _require_supported(model)
    sizes = [model.apparatus.sector_sizes[k] for k in model.apparatus.outcome_sectors]
    rng = substream(seed, "subensemble", "amplitudes")
    z = rng.standard_normal(sum(sizes)) + 1j * rng.standard_normal(sum(sizes))
    z /= np.linalg.norm(z)
    amps = tuple(np.split(z, np.cumsum(sizes)[:-1]))
    return SubensembleSpec(amps, t_split=model.schedule.t_split)


def localized_correlated_pure(model: MeasurementModel, weights: Sequence[float], level: int = 0) -> SubensembleSpec:
    """All amplitude of outcome i on the single level eta = ``level``, with |U|^2 = q_i."""
    _require_supported(model)
    q = np.asarray(weights, dtype=float)
    amps = []
    for i, k in enumerate(model.apparatus.outcome_sectors):
        u = np.zeros(model.apparatus.sector_sizes[k], dtype=complex)
        u[level] = np.sqrt(q[i])
        amps.append(u)
    return SubensembleSpec(tuple(amps), t_split=model.schedule.t_split)


def weights_from_amplitudes(spec: SubensembleSpec) -> np.ndarray:
    """q_i = sum_eta |U(i, eta)|^2."""
    return np.array([float(np.real(np.vdot(u, u))) for u in spec.amplitudes])


@dataclass(frozen=True)
class SplitResult:
    admissible: bool
    min_eigenvalue: float

    def __bool__(self) -> bool:
        return self.admissible


def admissible_split(D: np.ndarray, D_sub: np.ndarray, k: float) -> SplitResult:
    """Whether D - k D_sub is non-negative, i.e. a complementary state exists."""
    if not 0 < k < 1:
        raise ValueError(f"k must lie in (0, 1), got {k}")
    D = ops.square(D)
    D_sub = ops.square(D_sub)
    if D.shape != D_sub.shape:
        raise ValueError("dimension mismatch")
    rest = D - k * D_sub
    w = np.linalg.eigvalsh(0.5 * (rest + ops.dagger(rest)))
    return SplitResult(bool(w[0] >= -ops.NEGATIVE_EIG_TOL), float(w[0]))


@dataclass(frozen=True)
class ConfinementReport:
    leakage: float
    split: SplitResult
    passed: bool


def support_projection_check(state, subspace: CorrelatedSubspace, D: np.ndarray,
                             k: float = 1e-6) -> ConfinementReport:
    """
    Leakage of a pure candidate outside the correlated subspace, together
    with the admissibility of splitting it off D with weight k.  Passes iff
    an admissible candidate is confined (leakage <= 1e-10).
    """
    psi = state.vector(subspace) if isinstance(state, SubensembleSpec) else np.asarray(state, dtype=complex)
    leak = subspace.leakage(psi)
    split = admissible_split(D, ops.projector(psi), k)
    return ConfinementReport(leak, split, (not split.admissible) or leak <= LEAKAGE_TOL)


class Component(NamedTuple):
    weight: float
    vector: np.ndarray


def sample_admissible_decomposition(D: np.ndarray, m: int, seed: int,
                                    mixing: str = "haar", tol: float = 1e-12) -> list[Component]:
    """
    Split D into m weighted pure states.

    With D = sum_b lam_b |e_b><e_b| (rank r <= m) and an m x m unitary V,
    the unnormalized components sum_b V_ab sqrt(lam_b) |e_b> recombine to D
    for any V.  ``mixing="identity"`` (m = r) returns the eigendecomposition.
    """
    D = ops.require_density(D, "state to decompose")
    lam, E = np.linalg.eigh(D)
    keep = lam > tol
    lam, E = lam[keep], E[:, keep]
    r = len(lam)
    if m < r:
        raise ValueError(f"a rank-{r} state needs at least {r} pure components, got m = {m}")
    if mixing == "identity":
        if m != r:
            raise ValueError("identity mixing requires m equal to the rank")
        V = np.eye(r, dtype=complex)
    elif mixing == "haar":
        V = ops.haar_unitary(m, substream(seed, "decomposition", m))[:, :r]
    else:
        raise ValueError(f"unknown mixing {mixing!r}")
    tilde = (E * np.sqrt(lam)) @ V.T
    out = []
    for a in range(m):
        v = tilde[:, a]
        w = float(np.real(np.vdot(v, v)))
        if w > 0:
            out.append(Component(w, v / np.sqrt(w)))
    return out


def correlated_equilibrium(model: MeasurementModel, weights: Sequence[float] | None = None) -> np.ndarray:
    """sum_i q_i |s_i><s_i| ⊗ R_i^mu; Born weights of r0 when ``weights`` is None."""
    _require_supported(model)
    if weights is None:
        weights = [float(np.real(np.trace(p @ model.system.r0))) for p in model.projectors.projectors]
    app = model.apparatus
    return sum(q * ops.tensor(p, microcanonical_state(app, k))
               for q, p, k in zip(weights, model.projectors.projectors, app.outcome_sectors))


def mispaired_state(model: MeasurementModel, mix: float = 0.5) -> np.ndarray:
    """sqrt(1-mix) |s_0, A_0, 0> + sqrt(mix) |s_0, A_1, 0>: pairs s_0 with the wrong pointer sector."""
    _require_supported(model)
    app = model.apparatus
    s0 = model.projectors.eigenvector(0)
    good = np.zeros(model.d_A, dtype=complex)
    bad = np.zeros(model.d_A, dtype=complex)
    good[app.sector_slice(app.outcome_sectors[0]).start] = 1
    bad[app.sector_slice(app.outcome_sectors[1]).start] = 1
    return np.kron(s0, np.sqrt(1 - mix) * good + np.sqrt(mix) * bad)


# evolution after the split ----------------------------------------------------

_free: "weakref.WeakKeyDictionary[MeasurementModel, ops.Propagator]" = weakref.WeakKeyDictionary()


def _free_propagator(model: MeasurementModel) -> ops.Propagator:
    p = _free.get(model)
    if p is None:
        p = _free[model] = ops.Propagator(model.apparatus.H_A)
    return p


def _apparatus_vectors(spec: SubensembleSpec, model: MeasurementModel) -> np.ndarray:
    """Columns phi_i in the apparatus space with Psi = sum_i |s_i> ⊗ phi_i."""
    app = model.apparatus
    phi = np.zeros((model.d_A, model.n_out), dtype=complex)
    for i, k in enumerate(app.outcome_sectors):
        phi[app.sector_slice(k), i] = spec.amplitudes[i]
    return phi


def _joint(phi: np.ndarray, model: MeasurementModel) -> np.ndarray:
    return sum(np.kron(model.projectors.eigenvector(i), phi[:, i]) for i in range(model.n_out))


@dataclass(frozen=True)
class SubensembleSnapshot:
    t: float
    state: np.ndarray
    weights: np.ndarray
    leakage: float
    intersector_norm: float
    matched_coherence: float
    population_spread: np.ndarray


def evolve_subensemble(spec: SubensembleSpec, model: MeasurementModel, t: float) -> SubensembleSnapshot:
    """
    D_sub(t) = |Psi(t)><Psi(t)| with Psi evolved by I ⊗ H_A from t_split.

    Metrics: sector populations (the weights q_i), Frobenius norm of the
    inter-sector blocks, the largest matched-level coherence
    |sum_eta U(i,eta,t)^* U(j,eta,t)| and, per outcome, the spread
    max - min of the normalized populations |U(i,eta,t)|^2 / q_i.
    """
    _require_supported(model)
    if t < spec.t_split:
        raise ValueError(f"t = {t} precedes the split time {spec.t_split}")
    prop = _free_propagator(model)
    phi = _apparatus_vectors(spec, model)
    phi_t = np.column_stack([prop.evolve_vector(phi[:, i], t - spec.t_split) for i in range(model.n_out)])
    psi = _joint(phi_t, model)
    app = model.apparatus
    n = model.n_out
    blocks = [phi_t[app.sector_slice(k)] for k in app.outcome_sectors]
    weights = np.array([float(np.sum(np.abs(phi_t[app.sector_slice(k), i]) ** 2))
                        for i, k in enumerate(app.outcome_sectors)])
    norms = np.linalg.norm(phi_t, axis=0)
    inter = float(np.sqrt(sum((norms[i] * norms[j]) ** 2 for i in range(n) for j in range(n) if i != j)))
    matched = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            gi, gj = blocks[i][:, i], blocks[j][:, j]
            g = min(len(gi), len(gj))
            matched = max(matched, abs(np.vdot(gi[:g], gj[:g])))
    spread = np.array([_spread(blocks[i][:, i]) for i in range(n)])
    sub = CorrelatedSubspace.from_model(model)
    return SubensembleSnapshot(t, ops.projector(psi), weights, sub.leakage(psi), inter, float(matched), spread)


def _spread(u: np.ndarray) -> float:
    pop = np.abs(u) ** 2
    total = pop.sum()
    if total <= 1e-12:
        return float("nan")
    pop = pop / total
    return float(pop.max() - pop.min())


@dataclass(frozen=True)
class TimeAverage:
    window: tuple[float, float]
    numerical: np.ndarray
    diagonal: np.ndarray
    target: np.ndarray
    distance: float
    diagonal_distance: float
    agreement: float
    bound: float
    population_distance: float
    population_spread: np.ndarray
    cross_sector_norm: float
    cross_sector_bound: float


def _dephasing_mask(energies: np.ndarray, tol: float = ops.DEGENERACY_TOL) -> np.ndarray:
    return np.abs(energies[:, None] - energies[None, :]) <= tol


def time_averaged_state(spec: SubensembleSpec, model: MeasurementModel, window: tuple[float, float],
                        n_grid: int = 2001) -> TimeAverage:
    """
    Time average of D_sub over ``window`` computed two ways.

    ``numerical`` averages the evolved state over a uniform grid;
    ``diagonal`` is the infinite-time diagonal ensemble in the eigenbasis
    of I ⊗ H_A (levels closer than 1e-9 grouped).  Both are compared with
    sum_i q_i |s_i><s_i| ⊗ R_i^mu.  ``bound`` = 2 / (min level gap * window
    length) is the expected order of their disagreement; ``population_*``
    look only at the diagonal in the |s_i> ⊗ |A, eta> basis.

    ``cross_sector_norm`` is the largest Frobenius norm of an i != j block
    of the grid average; ``cross_sector_bound`` its dephasing estimate
    sqrt(q_i q_j) * min(1, 2 / (Delta * window length)), with Delta the
    smallest level spacing between the two sectors.
    """
    _require_supported(model)
    ta, tb = window
    if not spec.t_split <= ta < tb:
        raise ValueError("window must start at or after t_split and have positive length")
    prop = _free_propagator(model)
    phi = _apparatus_vectors(spec, model)
    n = model.n_out
    s = [model.projectors.eigenvector(i) for i in range(n)]

    times = np.linspace(ta, tb, n_grid) - spec.t_split
    ph = np.exp(-1j * np.outer(times, prop.energies))
    coeff = phi if prop.vectors is None else ops.dagger(prop.vectors) @ phi
    avg_eig = {}
    for i in range(n):
        for j in range(n):
            # mean_t (ph c_i)(ph c_j)^dagger
            avg_eig[i, j] = ((ph * coeff[:, i]).T @ (ph * coeff[:, j]).conj()) / n_grid
    mask = _dephasing_mask(prop.energies)
    numerical = np.zeros((model.dim, model.dim), dtype=complex)
    diagonal = np.zeros_like(numerical)
    for i in range(n):
        for j in range(n):
            ss = np.outer(s[i], s[j].conj())
            numerical += ops.tensor(ss, prop.from_eigenbasis(avg_eig[i, j]))
            diag_block = np.outer(coeff[:, i], coeff[:, j].conj()) * mask
            diagonal += ops.tensor(ss, prop.from_eigenbasis(diag_block))

    q = weights_from_amplitudes(spec)
    target = correlated_equilibrium(model, q)
    e = np.unique(np.round(prop.energies / ops.DEGENERACY_TOL)) * ops.DEGENERACY_TOL
    gap = float(np.min(np.diff(e))) if len(e) > 1 else np.inf
    bound = 2.0 / (gap * (tb - ta)) if np.isfinite(gap) else 0.0
    pop_dist = 0.5 * float(np.sum(np.abs(np.real(np.diagonal(numerical)) - np.real(np.diagonal(target)))))
    app = model.apparatus
    spread = []
    for i, k in enumerate(app.outcome_sectors):
        pops = np.real(np.diagonal(avg_eig[i, i] if prop.vectors is None
                                   else prop.from_eigenbasis(avg_eig[i, i])))[app.sector_slice(k)]
        spread.append(float((pops.max() - pops.min()) / pops.sum()) if pops.sum() > 1e-12 else float("nan"))
    cross, cross_bound = 0.0, 0.0
    supports = [np.abs(coeff[:, i]) > 1e-10 for i in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            cross = max(cross, float(np.linalg.norm(avg_eig[i, j])))
            ei, ej = prop.energies[supports[i]], prop.energies[supports[j]]
            if len(ei) and len(ej):
                delta = float(np.min(np.abs(ei[:, None] - ej[None, :])))
                factor = 1.0 if delta <= ops.DEGENERACY_TOL else min(1.0, 2.0 / (delta * (tb - ta)))
                cross_bound = max(cross_bound, float(np.sqrt(q[i] * q[j])) * factor)
    return TimeAverage(
        window=(float(ta), float(tb)),
        numerical=numerical,
        diagonal=diagonal,
        target=target,
        distance=ops.trace_distance(numerical, target),
        diagonal_distance=ops.trace_distance(diagonal, target),
        agreement=ops.trace_distance(numerical, diagonal),
        bound=bound,
        population_distance=pop_dist,
        population_spread=np.array(spread),
        cross_sector_norm=cross,
        cross_sector_bound=cross_bound,
    )
