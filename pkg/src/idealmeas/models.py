"""
Tested-system and apparatus specifications and the ideal coupling.

A measurement model couples a tested system S to a sectored apparatus A
through ``H_SA = sum_i Pi_i ⊗ h_i``.  Apparatus basis states are ordered
sector by sector, so sector k occupies a contiguous index range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import operators as ops
from .rng import substream

MAX_DEPHASING_UNITS = 14
FULL_CHECK_MAX_DIM = 2048


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Eigenvalues s_i of the tested observable and their eigenprojectors."""

    values: tuple[float, ...]
    projectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.values) != len(self.projectors) or not self.values:
            raise ValueError("need one projector per eigenvalue, and at least one")
        projs = tuple(ops.square(p, "projector") for p in self.projectors)
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "values", tuple(float(s) for s in self.values))
        d = projs[0].shape[0]
        if any(p.shape != (d, d) for p in projs):
            raise ValueError("projectors have inconsistent dimensions")
        for a, pa in enumerate(projs):
            for b, pb in enumerate(projs):
                expected = pa if a == b else np.zeros_like(pa)
                if ops.max_abs(pa @ pb - expected) > ops.HERMITIAN_TOL:
                    raise ValueError(f"projectors {a}, {b} violate Pi_i Pi_j = delta_ij Pi_i")
        if ops.max_abs(sum(projs) - np.eye(d)) > ops.HERMITIAN_TOL:
            raise ValueError("projectors do not resolve the identity")
        vals = np.array(self.values)
        if len(vals) > 1 and np.min(np.abs(vals[:, None] - vals[None, :])[~np.eye(len(vals), dtype=bool)]) <= ops.DEGENERACY_TOL:
            raise ValueError("eigenvalues s_i must be pairwise distinct")

    @classmethod
    def from_observable(cls, s: np.ndarray, tol: float = ops.DEGENERACY_TOL) -> "ProjectorFamily":
        """Group the spectrum of a Hermitian observable into eigenprojectors."""
        s = ops.square(s, "observable")
        if not ops.is_hermitian(s):
            raise ValueError("observable must be Hermitian")
        w, V = np.linalg.eigh(s)
        groups: list[list[int]] = []
        for k in range(len(w)):
            if groups and abs(w[k] - w[groups[-1][0]]) <= tol:
                groups[-1].append(k)
            else:
                groups.append([k])
        values = tuple(float(np.mean(w[g])) for g in groups)
        projs = tuple(V[:, g] @ ops.dagger(V[:, g]) for g in groups)
        return cls(values, projs)

    @classmethod
    def diagonal(cls, levels: Sequence[float]) -> "ProjectorFamily":
        """Projectors of the diagonal observable diag(levels), in order of first appearance."""
        levels = [float(x) for x in levels]
        values: list[float] = []
        for x in levels:
            if not any(abs(x - v) <= ops.DEGENERACY_TOL for v in values):
                values.append(x)
        projs = [np.diag([1.0 if abs(x - v) <= ops.DEGENERACY_TOL else 0.0 for x in levels]).astype(complex)
                 for v in values]
        return cls(tuple(values), tuple(projs))

    @property
    def n_out(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(int(round(np.trace(p).real)) for p in self.projectors)

    @property
    def nondegenerate(self) -> bool:
        return all(r == 1 for r in self.ranks)

    def observable(self) -> np.ndarray:
        return sum(s * p for s, p in zip(self.values, self.projectors))

    def eigenvector(self, i: int) -> np.ndarray:
        """|s_i> for a rank-one projector (phase fixed by the largest component)."""
        if self.ranks[i] != 1:
            raise ValueError(f"projector {i} has rank {self.ranks[i]}, no unique eigenvector")
        p = self.projectors[i]
        k = int(np.argmax(np.real(np.diagonal(p))))
        return p[:, k] / np.sqrt(p[k, k].real)


@dataclass(frozen=True, eq=False)
class TestedSystemSpec:
    __test__ = False  # not a pytest class

    H_S: np.ndarray
    r0: np.ndarray
    projectors: ProjectorFamily

    def __post_init__(self):
        H = ops.square(self.H_S, "H_S")
        r0 = ops.require_density(self.r0, "r0")
        if not ops.is_hermitian(H):
            raise ValueError("H_S must be Hermitian")
        d = self.projectors.dim
        if H.shape != (d, d) or r0.shape != (d, d):
            raise ValueError("H_S, r0 and projectors must share the system dimension")
        for i, p in enumerate(self.projectors.projectors):
            if ops.max_abs(ops.commutator(H, p)) > ops.HERMITIAN_TOL:
                raise ValueError(f"H_S mixes the eigenspaces of the tested observable (projector {i})")
        object.__setattr__(self, "H_S", H)
        object.__setattr__(self, "r0", r0)

    @property
    def d_S(self) -> int:
        return self.projectors.dim

    @property
    def commutator_defect(self) -> float:
        return ops.max_abs(ops.commutator(self.H_S, self.r0))


@dataclass(frozen=True, eq=False)
class ApparatusSpec:
    """
    Sectored apparatus: sector k holds ``sector_sizes[k]`` levels |A_k, eta>
    with pointer value ``pointer_values[k]``.  Outcome i of the tested
    observable drives the apparatus towards ``outcome_sectors[i]``.
    """

    sector_sizes: tuple[int, ...]
    pointer_values: tuple[float, ...]
    outcome_sectors: tuple[int, ...]
    H_A: np.ndarray
    sources: tuple[np.ndarray, ...]
    kind: str = "custom"
    pointer_gap: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = tuple(int(g) for g in self.sector_sizes)
        if not sizes or any(g < 1 for g in sizes):
            raise ValueError("every sector needs at least one level")
        if len(self.pointer_values) != len(sizes):
            raise ValueError("one pointer value per sector")
        if any(not 0 <= k < len(sizes) for k in self.outcome_sectors):
            raise ValueError("outcome mapped to a nonexistent sector")
        if len(self.sources) != len(self.outcome_sectors):
            raise ValueError("one source h_i per outcome")
        d = sum(sizes)
        H = ops.square(self.H_A, "H_A")
        if H.shape != (d, d):
            raise ValueError(f"H_A has shape {H.shape}, expected ({d}, {d})")
        if not ops.is_hermitian(H):
            raise ValueError("H_A must be Hermitian")
        srcs = tuple(ops.square(h, "source") for h in self.sources)
        for i, h in enumerate(srcs):
            if h.shape != (d, d):
                raise ValueError(f"source {i} has wrong shape {h.shape}")
            if not ops.is_hermitian(h):
                raise ValueError(f"source {i} is not Hermitian")
        vals = np.array(self.pointer_values, dtype=float)
        if self.pointer_gap <= 0:
            raise ValueError("pointer gap must be positive")
        if len(vals) > 1:
            sep = np.abs(vals[:, None] - vals[None, :])[~np.eye(len(vals), dtype=bool)]
            if sep.min() < self.pointer_gap:
                raise ValueError(f"pointer values closer than the declared gap {self.pointer_gap}")
        object.__setattr__(self, "sector_sizes", sizes)
        object.__setattr__(self, "pointer_values", tuple(float(v) for v in vals))
        object.__setattr__(self, "outcome_sectors", tuple(int(k) for k in self.outcome_sectors))
        object.__setattr__(self, "H_A", H)
        object.__setattr__(self, "sources", srcs)

    @property
    def d_A(self) -> int:
        return sum(self.sector_sizes)

    @property
    def n_sectors(self) -> int:
        return len(self.sector_sizes)

    def sector_slice(self, k: int) -> slice:
        if not 0 <= k < self.n_sectors:
            raise IndexError(f"no sector {k}")
        start = sum(self.sector_sizes[:k])
        return slice(start, start + self.sector_sizes[k])

    def sector_mask(self, k: int) -> np.ndarray:
        mask = np.zeros(self.d_A, dtype=bool)
        mask[self.sector_slice(k)] = True
        return mask

    def sector_projector(self, k: int) -> np.ndarray:
        return np.diag(self.sector_mask(k).astype(complex))

    def pointer_diagonal(self) -> np.ndarray:
        return np.concatenate([np.full(g, a) for g, a in zip(self.sector_sizes, self.pointer_values)])

    @cached_property
    def A_hat(self) -> np.ndarray:
        return np.diag(self.pointer_diagonal().astype(complex))

    @property
    def distinguishes_outcomes(self) -> bool:
        return len(set(self.outcome_sectors)) == len(self.outcome_sectors)


def default_pointer_values(n_out: int) -> tuple[float, ...]:
    """Unit-gap pointer values centred on zero."""
    return tuple(float(k) - (n_out - 1) / 2 for k in range(n_out))


def build_coupling(projectors: ProjectorFamily, sources: Sequence[np.ndarray]) -> np.ndarray:
    """H_SA = sum_i Pi_i ⊗ h_i."""
    if len(sources) != projectors.n_out:
        raise ValueError(f"{projectors.n_out} projectors but {len(sources)} sources")
    d_a = ops.square(sources[0], "source").shape[0]
    out = np.zeros((projectors.dim * d_a, projectors.dim * d_a), dtype=complex)
    for i, (p, h) in enumerate(zip(projectors.projectors, sources)):
        h = ops.square(h, "source")
        if h.shape != (d_a, d_a):
            raise ValueError("sources must share the apparatus dimension")
        if not ops.is_hermitian(h):
            raise ValueError(f"source {i} is not Hermitian")
        out += ops.tensor(p, h)
    return out


def subunit_signs(M: int) -> np.ndarray:
    """Array (M, 2**M) of the +-1 diagonals of Z_m; subunit 0 is the most significant bit."""
    idx = np.arange(2**M)
    bits = (idx[None, :] >> (M - 1 - np.arange(M))[:, None]) & 1
    return 1.0 - 2.0 * bits


def make_dephasing_apparatus(n_out: int, M: int, couplings: Sequence[float],
                             pointer_values: Sequence[float] | None = None) -> ApparatusSpec:
    """
    M two-level subunits with H_A = 0 and sources h_i = c_i sum_m g_m Z_m.

    With R(0) = I / 2**M the off-diagonal block traces are
    prod_m cos((c_i - c_j) g_m t).  All outcomes share a single sector, so
    this apparatus decoheres but never registers.  The signs c_i default
    to n_out - 1 - 2i, i.e. the s values (+1, -1) of ``qubit_system``.
    """
    if M < 1:
        raise ValueError("need at least one subunit")
    if M > MAX_DEPHASING_UNITS:
        raise ValueError(f"M = {M} exceeds the desk-scale limit {MAX_DEPHASING_UNITS}")
    g = np.asarray(couplings, dtype=float)
    if g.shape != (M,):
        raise ValueError(f"need {M} couplings, got {g.shape}")
    c = np.asarray([n_out - 1 - 2 * i for i in range(n_out)] if pointer_values is None else pointer_values, dtype=float)
    if c.shape != (n_out,):
        raise ValueError("one pointer sign c_i per outcome")
    d = 2**M
    field_diag = g @ subunit_signs(M)
    sources = tuple(np.diag(ci * field_diag).astype(complex) for ci in c)
    return ApparatusSpec(
        sector_sizes=(d,),
        pointer_values=(0.0,),
        outcome_sectors=(0,) * n_out,
        H_A=np.zeros((d, d), dtype=complex),
        sources=sources,
        kind="dephasing",
        params={"M": M, "couplings": g.tolist(), "c": c.tolist()},
    )


def make_ergodic_apparatus(n_out: int, G: int, w: float, pointer_values: Sequence[float] | None = None,
                           seed: int = 0, lam: float | None = None, field_strength: float | None = None,
                           pointer_gap: float = 0.5) -> ApparatusSpec:
    """
    One G-level sector per outcome with an independent GUE block of
    semicircle radius 2w inside each sector (no inter-sector elements).

    Sources: h_i = -lam P_i + field * A_i * Xi, where P_i projects on sector
    i and Xi is a seeded random diagonal field; lam defaults to 5 w and the
    field strength to w.
    """
    if G < 2:
        raise ValueError("ergodic sectors need G >= 2")
    if w <= 0:
        raise ValueError("bandwidth w must be positive")
    lam = 5.0 * w if lam is None else float(lam)
    field_strength = w if field_strength is None else float(field_strength)
    A = default_pointer_values(n_out) if pointer_values is None else tuple(pointer_values)
    if len(A) != n_out:
        raise ValueError("one pointer value per outcome")
    d = n_out * G
    H_A = np.zeros((d, d), dtype=complex)
    for k in range(n_out):
        rng = substream(seed, "ergodic", "H_A", k)
        sl = slice(k * G, (k + 1) * G)
        H_A[sl, sl] = ops.random_hermitian(G, rng, scale=w / np.sqrt(G))
    xi = substream(seed, "ergodic", "field").standard_normal(d)
    sources = []
    for i in range(n_out):
        mask = np.zeros(d)
        mask[i * G:(i + 1) * G] = 1.0
        sources.append(np.diag(-lam * mask + field_strength * A[i] * xi).astype(complex))
    return ApparatusSpec(
        sector_sizes=(G,) * n_out,
        pointer_values=A,
        outcome_sectors=tuple(range(n_out)),
        H_A=H_A,
        sources=tuple(sources),
        kind="ergodic",
        pointer_gap=pointer_gap,
        params={"G": G, "w": w, "lam": lam, "field": field_strength, "seed": seed},
    )


def ready_state(apparatus: ApparatusSpec, fill: float = 0.5) -> np.ndarray:
    """
    Unbiased metastable initial apparatus state.

    Every sector gets equal weight; inside a sector the state is uniform
    over the first ceil(fill * G_k) levels, so it is mixed but not yet
    microcanonical.  fill = 1 gives the maximally mixed state.
    """
    if not 0 < fill <= 1:
        raise ValueError("fill must lie in (0, 1]")
    diag = np.zeros(apparatus.d_A)
    for k, g in enumerate(apparatus.sector_sizes):
        n = max(1, int(np.ceil(fill * g)))
        start = apparatus.sector_slice(k).start
        diag[start:start + n] = 1.0 / (n * apparatus.n_sectors)
    return np.diag(diag).astype(complex)


@dataclass(frozen=True)
class Schedule:
    t_off: float
    t_split: float
    t_f: float
    n_grid: int = 200

    def __post_init__(self):
        if not 0 < self.t_off <= self.t_split < self.t_f:
            raise ValueError(f"schedule must satisfy 0 < t_off <= t_split < t_f, got {self}")
        if self.n_grid < 2:
            raise ValueError("time grid needs at least two points")


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """
    S + A with H = H_S + H_A + H_SA while coupled (t < t_off) and
    H = H_S + H_A afterwards.  ``coupling_override`` replaces the ideal
    coupling built from the parts; it exists to probe non-ideal couplings.
    """

    system: TestedSystemSpec
    apparatus: ApparatusSpec
    R0: np.ndarray
    schedule: Schedule
    beta: float = 1.0
    seed: int = 0
    coupling_override: np.ndarray | None = None

    def __post_init__(self):
        if self.system.projectors.n_out != len(self.apparatus.sources):
            raise ValueError("number of outcomes differs between system and apparatus")
        R0 = ops.require_density(self.R0, "R0")
        if R0.shape != (self.d_A, self.d_A):
            raise ValueError("R0 does not live on the apparatus space")
        object.__setattr__(self, "R0", R0)
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.coupling_override is not None:
            c = ops.square(self.coupling_override, "coupling")
            if c.shape != (self.dim, self.dim) or not ops.is_hermitian(c):
                raise ValueError("coupling override must be Hermitian on the joint space")
            object.__setattr__(self, "coupling_override", c)

    @property
    def d_S(self) -> int:
        return self.system.d_S

    @property
    def d_A(self) -> int:
        return self.apparatus.d_A

    @property
    def dims(self) -> tuple[int, int]:
        return (self.d_S, self.d_A)

    @property
    def dim(self) -> int:
        return self.d_S * self.d_A

    @property
    def n_out(self) -> int:
        return self.system.projectors.n_out

    @property
    def projectors(self) -> ProjectorFamily:
        return self.system.projectors

    @cached_property
    def H_SA(self) -> np.ndarray:
        if self.coupling_override is not None:
            return self.coupling_override
        return build_coupling(self.projectors, self.apparatus.sources)

    @cached_property
    def H_free(self) -> np.ndarray:
        return ops.tensor(self.system.H_S, np.eye(self.d_A)) + ops.tensor(np.eye(self.d_S), self.apparatus.H_A)

    @cached_property
    def H_coupled(self) -> np.ndarray:
        return self.H_free + self.H_SA

    @property
    def D0(self) -> np.ndarray:
        return ops.tensor(self.system.r0, self.R0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float


@dataclass(frozen=True)
class IdealityReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_ideality(model: MeasurementModel, tol: float = ops.HERMITIAN_TOL) -> IdealityReport:
    """
    Check the structural conditions of an ideal measurement:

    * ``coupling``: H commutes with every Pi_i ⊗ I_A;
    * ``initial_state``: [H_S, r0] = 0;
    * ``sector_conservation``: [A_hat, H_A] = 0.
    """
    P = model.projectors.projectors
    if model.coupling_override is not None or model.dim <= FULL_CHECK_MAX_DIM:
        H = model.H_coupled
        eye_a = np.eye(model.d_A)
        defect_a = max(ops.max_abs(ops.commutator(H, ops.tensor(p, eye_a))) for p in P)
    else:
        # max |entry| of X ⊗ Y is max|X| * max|Y|; bound the sum term by term
        h_max = [ops.max_abs(h) for h in model.apparatus.sources]
        defect_a = max(
            ops.max_abs(ops.commutator(model.system.H_S, pk))
            + sum(ops.max_abs(ops.commutator(pj, pk)) * hj for pj, hj in zip(P, h_max))
            for pk in P
        )
    app = model.apparatus
    A_diag = app.pointer_diagonal()
    # [diag(a), H]_mn = (a_m - a_n) H_mn
    defect_c = ops.max_abs((A_diag[:, None] - A_diag[None, :]) * app.H_A)
    return IdealityReport((
        CheckResult("coupling", defect_a <= tol, defect_a, tol),
        CheckResult("initial_state", model.system.commutator_defect <= tol, model.system.commutator_defect, tol),
        CheckResult("sector_conservation", defect_c <= tol, defect_c, tol),
    ))


# convenience constructors -------------------------------------------------

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def plus_x() -> np.ndarray:
    return ops.projector(ops.ket([1, 1]))


def qubit_system(r0: np.ndarray, H_S: np.ndarray | None = None) -> TestedSystemSpec:
    """Qubit measured in the sigma_z basis, s = (+1, -1)."""
    H_S = np.zeros((2, 2), dtype=complex) if H_S is None else H_S
    return TestedSystemSpec(H_S, r0, ProjectorFamily.diagonal([1.0, -1.0]))


def make_random_model(seed: int, G: int = 4, n_out: int = 2, t_off: float = 7.0,
                      t_split: float = 8.0, t_f: float = 20.0, sector_mixing: float = 0.0) -> MeasurementModel:
    """
    Small fully random ideal model: qubit-like S with H_S = 0 and a random
    r0, sector-block-diagonal random H_A, unrestricted random sources h_i
    and a random R(0).  ``sector_mixing`` > 0 adds eps (X ⊗ V) with X
    off-diagonal in the s basis, breaking the ideal coupling on purpose.
    """
    d_S = n_out
    rng = substream(seed, "random_model")
    d_A = n_out * G
    H_A = np.zeros((d_A, d_A), dtype=complex)
    for k in range(n_out):
        sl = slice(k * G, (k + 1) * G)
        H_A[sl, sl] = ops.random_hermitian(G, rng)
    sources = tuple(ops.random_hermitian(d_A, rng) for _ in range(n_out))
    app = ApparatusSpec((G,) * n_out, default_pointer_values(n_out), tuple(range(n_out)), H_A, sources,
                        kind="random", params={"G": G, "seed": seed})
    system = TestedSystemSpec(np.zeros((d_S, d_S), dtype=complex), ops.random_density(d_S, rng),
                              ProjectorFamily.diagonal([float(n_out - 1 - 2 * k) for k in range(n_out)]))
    R0 = ops.random_density(d_A, rng)
    override = None
    if sector_mixing > 0:
        X = np.ones((d_S, d_S), dtype=complex) - np.eye(d_S)
        V = ops.random_hermitian(d_A, substream(seed, "inject", "mixing"))
        override = build_coupling(system.projectors, sources) + sector_mixing * ops.tensor(X, V)
    return MeasurementModel(system, app, R0, Schedule(t_off, t_split, t_f), seed=seed, coupling_override=override)
