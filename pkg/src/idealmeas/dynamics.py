"""
Full-ensemble dynamics through the apparatus blocks R_ij(t).

For an ideal coupling and [H_S, r0] = 0 the joint state stays of the form

    D(t) = sum_ij (Pi_i r0 Pi_j) ⊗ R_ij(t),
    R_ij(t) = e^{-i(H_A + h_i)t} R(0) e^{+i(H_A + h_j)t}     (t <= t_off),

after which both sides are generated by H_A alone.  Everything is
evaluated in closed form from one eigendecomposition per generator; there
is no time stepping.  ``oracle_full_evolution`` evolves the joint state
directly under the full Hamiltonian and serves as the independent check.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from .equilibrium import microcanonical_state, sector_targets
from .models import FULL_CHECK_MAX_DIM, MeasurementModel, ProjectorFamily

ORACLE_MAX_DIM = 4096
REGISTRATION_MAX_DIM = 1024


@dataclass(frozen=True, eq=False)
class BlockState:
    """
    Coefficients C_ij = Pi_i r0 Pi_j with their apparatus blocks R_ij(t).

    ``H_S`` is only needed when r0 does not commute with it: H_S ⊗ I
    commutes with the whole Hamiltonian, so it rotates the coefficients
    independently of the blocks (see ``coefficients``).
    """

    C: tuple[tuple[np.ndarray, ...], ...]
    R: tuple[tuple[np.ndarray, ...], ...]
    t: float = 0.0
    H_S: np.ndarray | None = None

    def coefficients(self) -> tuple[tuple[np.ndarray, ...], ...]:
        """e^{-i H_S t} C_ij e^{+i H_S t}; equal to C when [H_S, r0] = 0."""
        if self.H_S is None or self.t == 0 or not np.any(self.H_S):
            return self.C
        U = ops.Propagator(self.H_S, check=False).unitary(self.t)
        Ud = ops.dagger(U)
        return tuple(tuple(U @ c @ Ud for c in row) for row in self.C)

    @property
    def n_out(self) -> int:
        return len(self.C)

    @property
    def dims(self) -> tuple[int, int]:
        return self.C[0][0].shape[0], self.R[0][0].shape[0]

    def pairing_defect(self) -> float:
        """max |R_ij - R_ji^dagger| over all pairs."""
        n = self.n_out
        return max(ops.max_abs(self.R[i][j] - ops.dagger(self.R[j][i])) for i in range(n) for j in range(n))


def init_blocks(r0: np.ndarray, R0: np.ndarray, projectors: ProjectorFamily) -> BlockState:
    r0 = ops.square(r0, "r0")
    R0 = ops.square(R0, "R0")
    if r0.shape[0] != projectors.dim:
        raise ValueError("r0 and projectors have different dimensions")
    P = projectors.projectors
    n = len(P)
    C = tuple(tuple(P[i] @ r0 @ P[j] for j in range(n)) for i in range(n))
    R = tuple(tuple(R0.copy() for _ in range(n)) for _ in range(n))
    return BlockState(C, R, 0.0)


class BlockPropagator:
    """
    Cached eigendecompositions of H_A + h_i (one per outcome) and of H_A,
    shared by every pair, time and metric of one model.
    """

    def __init__(self, model: MeasurementModel):
        app = model.apparatus
        # no reference to the model itself: it is the key of a weak cache
        self.R0 = model.R0
        self.t_off = model.schedule.t_off
        self.coupled = [ops.Propagator(app.H_A + h, check=False) for h in app.sources]
        self.free = ops.Propagator(app.H_A, check=False)
        self._x0: dict[tuple[int, int], np.ndarray] = {}
        self._switch: dict[tuple[int, int], np.ndarray] = {}

    def _initial_eig(self, i: int, j: int) -> np.ndarray:
        """V_i^dagger R(0) V_j."""
        key = (i, j)
        if key not in self._x0:
            Vi, Vj = self.coupled[i].vectors, self.coupled[j].vectors
            X = self.R0
            if Vi is not None:
                X = ops.dagger(Vi) @ X
            if Vj is not None:
                X = X @ Vj
            self._x0[key] = X
        return self._x0[key]

    def _coupled_block(self, i: int, j: int, t: float) -> np.ndarray:
        pi, pj = self.coupled[i], self.coupled[j]
        Y = pi.phases(t)[:, None] * self._initial_eig(i, j) * pj.phases(t).conj()[None, :]
        if pi.vectors is not None:
            Y = pi.vectors @ Y
        if pj.vectors is not None:
            Y = Y @ ops.dagger(pj.vectors)
        return Y

    def _switch_eig(self, i: int, j: int) -> np.ndarray:
        """R_ij(t_off) in the eigenbasis of H_A."""
        key = (i, j)
        if key not in self._switch:
            self._switch[key] = self.free.to_eigenbasis(self._coupled_block(i, j, self.t_off))
        return self._switch[key]

    def block(self, i: int, j: int, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("negative time")
        if t <= self.t_off:
            return self._coupled_block(i, j, t)
        ph = self.free.phases(t - self.t_off)
        return self.free.from_eigenbasis(ph[:, None] * self._switch_eig(i, j) * ph.conj()[None, :])

    def trace_series(self, i: int, j: int, times, op: np.ndarray | None = None) -> np.ndarray:
        """tr(op R_ij(t)) for every t, without materializing the blocks when avoidable."""
        times = np.asarray(times, dtype=float)
        out = np.empty(len(times), dtype=complex)
        op_diag = op is None or ops.is_diagonal(op)
        before = times <= self.t_off
        if before.any():
            pi, pj = self.coupled[i], self.coupled[j]
            out[before] = self._series(pi, pj, self._initial_eig(i, j), times[before], op, op_diag)
        if (~before).any():
            out[~before] = self._series(self.free, self.free, self._switch_eig(i, j),
                                        times[~before] - self.t_off, op, op_diag)
        return out

    @staticmethod
    def _series(pl: ops.Propagator, pr: ops.Propagator, X: np.ndarray, times, op, op_diag) -> np.ndarray:
        # tr(op V_l phl X phr^* V_r^dag) = sum_nm phl_n X_nm phr_m^* W_mn, W = V_r^dag op V_l
        phl = np.exp(-1j * np.outer(times, pl.energies))
        phr = np.exp(1j * np.outer(times, pr.energies))
        if pl.vectors is None and pr.vectors is None and op_diag:
            w = np.ones(X.shape[0]) if op is None else np.diagonal(op)
            return (phl * phr) @ (np.diagonal(X) * w)
        W = op if op is not None else np.eye(X.shape[0], dtype=complex)
        if pl.vectors is not None:
            W = W @ pl.vectors
        if pr.vectors is not None:
            W = ops.dagger(pr.vectors) @ W
        K = X * W.T
        return np.einsum("tn,nm,tm->t", phl, K, phr)


_propagators: "weakref.WeakKeyDictionary[MeasurementModel, BlockPropagator]" = weakref.WeakKeyDictionary()


def block_propagator(model: MeasurementModel) -> BlockPropagator:
    prop = _propagators.get(model)
    if prop is None:
        prop = _propagators[model] = BlockPropagator(model)
    return prop


def propagate(state: BlockState, model: MeasurementModel, t: float) -> BlockState:
    """
    Advance every block from ``state.t`` to ``t`` (closed form).

    A state at t = 0 with R_ij = R(0) reuses the cached initial-state
    representation; other states are composed segment by segment across
    the switch-off time.
    """
    if t < state.t:
        raise ValueError(f"cannot propagate backwards from {state.t} to {t}")
    n = state.n_out
    prop = block_propagator(model)
    if state.t == 0 and all(np.array_equal(state.R[i][j], model.R0) for i in range(n) for j in range(n)):
        R = tuple(tuple(prop.block(i, j, t) for j in range(n)) for i in range(n))
        return BlockState(state.C, R, t, model.system.H_S)
    blocks = [[state.R[i][j] for j in range(n)] for i in range(n)]
    s = state.t
    t_off = model.schedule.t_off
    if s < t_off:
        dt = min(t, t_off) - s
        U = [p.unitary(dt) for p in prop.coupled]
        blocks = [[U[i] @ blocks[i][j] @ ops.dagger(U[j]) for j in range(n)] for i in range(n)]
        s = min(t, t_off)
    if t > s:
        U = prop.free.unitary(t - s)
        blocks = [[U @ b @ ops.dagger(U) for b in row] for row in blocks]
    return BlockState(state.C, tuple(tuple(row) for row in blocks), t, model.system.H_S)


def assemble_full(state: BlockState, check: bool = True) -> np.ndarray:
    """D(t) = sum_ij C_ij ⊗ R_ij(t); raises DensityError if the result is not a state."""
    n = state.n_out
    C = state.coefficients()
    D = sum(ops.tensor(C[i][j], state.R[i][j]) for i in range(n) for j in range(n))
    if check:
        ops.require_density(D, f"assembled state at t={state.t}")
    return D


class _Oracle:
    def __init__(self, model: MeasurementModel):
        self.on = ops.Propagator(model.H_coupled)
        self.off = ops.Propagator(model.H_free)


_oracles: "weakref.WeakKeyDictionary[MeasurementModel, _Oracle]" = weakref.WeakKeyDictionary()


def oracle_full_evolution(model: MeasurementModel, t: float) -> np.ndarray:
    """Brute-force e^{-iHt} D(0) e^{iHt} on the joint space, piecewise across t_off."""
    if model.dim > ORACLE_MAX_DIM:
        raise ValueError(f"joint dimension {model.dim} exceeds the oracle limit {ORACLE_MAX_DIM}")
    orc = _oracles.get(model)
    if orc is None:
        orc = _oracles[model] = _Oracle(model)
    t_off = model.schedule.t_off
    D = orc.on.evolve(model.D0, min(t, t_off))
    if t > t_off:
        D = orc.off.evolve(D, t - t_off)
    return D


@dataclass(frozen=True)
class PairCoherence:
    pair: tuple[int, int]
    abs_trace: float
    pointer_coherence: float
    s_coherence: float


def coherence_metrics(state: BlockState, model: MeasurementModel) -> dict[tuple[int, int], PairCoherence]:
    """Off-diagonal (i < j) block metrics: |tr R_ij|, |tr A R_ij| and the S-coherence norm."""
    out = {}
    n = state.n_out
    A = model.apparatus.pointer_diagonal()
    for i in range(n):
        for j in range(i + 1, n):
            R = state.R[i][j]
            tr = complex(np.trace(R))
            ptr = complex(np.sum(A * np.diagonal(R)))
            smax = float(np.linalg.norm(state.C[i][j], 2)) * abs(tr)
            out[(i, j)] = PairCoherence((i, j), abs(tr), abs(ptr), smax)
    return out


@dataclass(frozen=True)
class SectorRegistration:
    outcome: int
    distance: float
    conditional_distance: float
    sector_weight: float
    pointer_expectation: float
    pointer_value: float


def registration_metrics(state: BlockState, model: MeasurementModel,
                         targets=None) -> list[SectorRegistration]:
    """
    Compare each diagonal block R_ii with its target apparatus state.

    ``distance`` uses R_ii as is; ``conditional_distance`` first restricts
    R_ii to the pointer sector of outcome i and renormalizes it (the
    apparatus state given that the pointer reads A_i).
    """
    app = model.apparatus
    if targets is None:
        targets = sector_targets(model, "microcanonical")
    elif hasattr(targets, "apparatus_states"):
        targets = targets.apparatus_states
    A = app.pointer_diagonal()
    out = []
    for i in range(state.n_out):
        R = state.R[i][i]
        k = app.outcome_sectors[i]
        mask = app.sector_mask(k)
        weight = float(np.real(np.diagonal(R))[mask].sum())
        if weight > 1e-12:
            cond = np.zeros_like(R)
            cond[np.ix_(mask, mask)] = R[np.ix_(mask, mask)] / weight
            cond_dist = ops.trace_distance(cond, targets[i])
        else:
            cond_dist = float("nan")
        out.append(SectorRegistration(
            outcome=i,
            distance=ops.trace_distance(R, targets[i]),
            conditional_distance=cond_dist,
            sector_weight=weight,
            pointer_expectation=float(np.real(np.sum(A * np.diagonal(R)))),
            pointer_value=app.pointer_values[k],
        ))
    return out


def born_weights(r0: np.ndarray, projectors: ProjectorFamily) -> np.ndarray:
    return np.array([float(np.real(np.trace(p @ r0))) for p in projectors.projectors])


def reduced_system_state(state: BlockState) -> np.ndarray:
    """r(t) = sum_ij C_ij tr R_ij(t)."""
    n = state.n_out
    C = state.coefficients()
    return sum(C[i][j] * np.trace(state.R[i][j]) for i in range(n) for j in range(n))


@dataclass(frozen=True)
class FinalStateReport:
    residual: float
    reduced_residual: float
    registration_residual: float
    full_residual: float | None
    weight_deviation: float
    coherence_leftover: float
    born: tuple[float, ...]


def final_state_check(state: BlockState, model: MeasurementModel) -> FinalStateReport:
    """
    Compare the propagated state with sum_i p_i r_i ⊗ R_i^mu.

    ``reduced_residual`` is the trace distance of the S marginal from
    sum_i p_i r_i (what truncation must achieve), ``registration_residual``
    the Born-weighted distance of each R_ii from its microcanonical target.
    ``residual`` is their sum.  The trace distance on the whole joint space
    is reported as ``full_residual`` only up to a joint dimension of 2048.
    """
    r0 = model.system.r0
    p = born_weights(r0, model.projectors)
    n = state.n_out
    C = state.coefficients()
    r_target = sum(C[i][i] for i in range(n))
    reduced = ops.trace_distance(reduced_system_state(state), r_target)
    targets = sector_targets(model, "microcanonical")
    reg = sum(p[i] * ops.trace_distance(state.R[i][i], targets[i]) for i in range(n) if p[i] > 0)
    weight_dev = max(abs(np.trace(C[i][i]).real * np.trace(state.R[i][i]).real - p[i]) for i in range(n))
    leftovers = [abs(np.trace(state.R[i][j])) for i in range(n) for j in range(n) if i != j
                 and ops.max_abs(C[i][j]) > 0]
    full = None
    if model.dim <= FULL_CHECK_MAX_DIM:
        target = sum(ops.tensor(C[i][i], targets[i]) for i in range(n))
        full = ops.trace_distance(assemble_full(state, check=False), target)
    return FinalStateReport(
        residual=reduced + reg,
        reduced_residual=reduced,
        registration_residual=float(reg),
        full_residual=full,
        weight_deviation=float(weight_dev),
        coherence_leftover=float(max(leftovers, default=0.0)),
        born=tuple(float(x) for x in p),
    )


def final_state_report(model: MeasurementModel, t: float | None = None) -> FinalStateReport:
    """
    ``final_state_check`` for the state propagated from t = 0 to ``t``
    (default t_f), without materializing off-diagonal blocks.

    The S marginal comes from the block traces.  Diagonal blocks are
    formed only as diagonals when every generator and R(0) are diagonal,
    which keeps large dephasing apparatuses cheap.
    """
    t = model.schedule.t_f if t is None else float(t)
    prop = block_propagator(model)
    n = model.n_out
    r0 = model.system.r0
    P = model.projectors.projectors
    C = [[P[i] @ r0 @ P[j] for j in range(n)] for i in range(n)]
    if model.system.H_S is not None and np.any(model.system.H_S) and t > 0:
        U = ops.Propagator(model.system.H_S, check=False).unitary(t)
        C = [[U @ c @ ops.dagger(U) for c in row] for row in C]
    traces = [[complex(prop.trace_series(i, j, [t])[0]) for j in range(n)] for i in range(n)]
    p = born_weights(r0, model.projectors)
    reduced = ops.trace_distance(sum(C[i][j] * traces[i][j] for i in range(n) for j in range(n)),
                                 sum(C[i][i] for i in range(n)))
    targets = sector_targets(model, "microcanonical")
    diagonal = (all(q.vectors is None for q in prop.coupled) and prop.free.vectors is None
                and ops.is_diagonal(model.R0))
    reg = 0.0
    for i in range(n):
        if p[i] <= 0:
            continue
        if diagonal:
            # diagonal generators commute with a diagonal R(0)
            reg += p[i] * 0.5 * float(np.sum(np.abs(np.diagonal(model.R0) - np.diagonal(targets[i]))))
        else:
            reg += p[i] * ops.trace_distance(prop.block(i, i, t), targets[i])
    weight_dev = max(abs(np.trace(C[i][i]).real * traces[i][i].real - p[i]) for i in range(n))
    leftovers = [abs(traces[i][j]) for i in range(n) for j in range(n) if i != j and ops.max_abs(C[i][j]) > 0]
    full = None
    if model.dim <= FULL_CHECK_MAX_DIM:
        full = final_state_check(propagate(init_blocks(r0, model.R0, model.projectors), model, t), model).full_residual
    return FinalStateReport(
        residual=reduced + float(reg),
        reduced_residual=reduced,
        registration_residual=float(reg),
        full_residual=full,
        weight_deviation=float(weight_dev),
        coherence_leftover=float(max(leftovers, default=0.0)),
        born=tuple(float(x) for x in p),
    )


# time grids and analytic references ----------------------------------------

def time_grid(t_f: float, n: int = 200, geometric_fraction: float = 0.3,
              t_min: float | None = None, t_switch: float | None = None) -> np.ndarray:
    """
    0, then geometric spacing from t_min to t_switch, then linear to t_f.

    Defaults: t_min = 1e-3 t_f, t_switch = 0.1 t_f, 30% of the points
    geometric.
    """
    if n < 2 or t_f <= 0:
        raise ValueError("need n >= 2 and t_f > 0")
    t_min = 1e-3 * t_f if t_min is None else t_min
    t_switch = 0.1 * t_f if t_switch is None else t_switch
    n_geo = int(round(geometric_fraction * (n - 1)))
    n_lin = n - 1 - n_geo
    if n_geo < 1 or n_lin < 1:
        return np.linspace(0.0, t_f, n)
    geo = np.geomspace(t_min, t_switch, n_geo, endpoint=False)
    lin = np.linspace(t_switch, t_f, n_lin)
    return np.concatenate([[0.0], geo, lin])


def uniform_grid(t_f: float, n: int) -> np.ndarray:
    return np.linspace(0.0, t_f, n)


def dephasing_factor(couplings, delta_c: float, times, t_off: float | None = None) -> np.ndarray:
    """prod_m cos(delta_c g_m t), frozen after t_off."""
    t = np.asarray(times, dtype=float)
    if t_off is not None:
        t = np.minimum(t, t_off)
    g = np.asarray(couplings, dtype=float)
    return np.prod(np.cos(delta_c * np.outer(t, g)), axis=1)


def coherence_plateau(R0: np.ndarray) -> float:
    """Random-phase estimate sqrt(tr R0^2) of the late-time |tr R_ij|."""
    if ops.is_diagonal(R0):
        return float(np.sqrt(np.sum(np.abs(np.diagonal(R0)) ** 2)))
    return float(np.sqrt(np.real(np.trace(R0 @ R0))))


def decay_time(times, values, level: float = np.exp(-1)) -> float | None:
    """First time |value| falls below ``level`` (linear interpolation), or None."""
    times = np.asarray(times, dtype=float)
    v = np.abs(np.asarray(values))
    below = np.nonzero(v < level)[0]
    if len(below) == 0:
        return None
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1, v0, v1 = times[k - 1], times[k], v[k - 1], v[k]
    return float(t0 + (v0 - level) * (t1 - t0) / (v0 - v1))


def gaussian_decay_fit(times, values, floor: float = 0.1) -> float | None:
    """Least-squares tau in |value| ≈ exp(-(t/tau)^2) over the points above ``floor``."""
    t = np.asarray(times, dtype=float)
    v = np.abs(np.asarray(values))
    k = 0
    while k < len(v) and v[k] > floor:
        k += 1
    t, v = t[1:k], v[1:k]
    if len(t) < 2:
        return None
    num = np.sum(t**4)
    den = -np.sum(t**2 * np.log(v))
    return float(np.sqrt(num / den)) if den > 0 else None


def default_t_split(times, coherence_max, plateau: float, t_off: float) -> float | None:
    """First grid time after t_off with every coherence below twice the plateau."""
    for t, c in zip(times, coherence_max):
        if t > t_off and c <= 2 * plateau:
            return float(t)
    return None


@dataclass
class DynamicsTrace:
    times: np.ndarray
    coherence: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    pointer_coherence: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    s_coherence: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    born_weights: np.ndarray | None = None
    registration: np.ndarray | None = None
    conditional_registration: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")


def run_dynamics(model: MeasurementModel, times, registration: bool | None = None) -> DynamicsTrace:
    """
    Coherence, weight and registration metrics along a time grid.

    Traces are evaluated through the cached eigen-representation, so large
    dephasing apparatuses never materialize their blocks.  Registration
    distances need the diagonal blocks and default to on for d_A <= 1024.
    """
    times = np.asarray(times, dtype=float)
    prop = block_propagator(model)
    n = model.n_out
    P = model.projectors.projectors
    r0 = model.system.r0
    C = [[P[i] @ r0 @ P[j] for j in range(n)] for i in range(n)]
    A = model.apparatus.A_hat
    trace = DynamicsTrace(times)
    for i in range(n):
        for j in range(i + 1, n):
            tr = prop.trace_series(i, j, times)
            trace.coherence[(i, j)] = np.abs(tr)
            trace.pointer_coherence[(i, j)] = np.abs(prop.trace_series(i, j, times, A))
            trace.s_coherence[(i, j)] = np.linalg.norm(C[i][j], 2) * np.abs(tr)
    trace.born_weights = np.stack(
        [np.trace(C[i][i]).real * prop.trace_series(i, i, times).real for i in range(n)], axis=1)
    if registration is None:
        registration = model.d_A <= REGISTRATION_MAX_DIM
    if registration:
        targets = [microcanonical_state(model.apparatus, k) for k in model.apparatus.outcome_sectors]
        reg = np.empty((len(times), n))
        cond = np.empty((len(times), n))
        init = init_blocks(r0, model.R0, model.projectors)
        for a, t in enumerate(times):
            st = BlockState(init.C, tuple(tuple(prop.block(i, j, t) if i == j else init.R[i][j]
                                                for j in range(n)) for i in range(n)), t)
            for m in registration_metrics(st, model, targets):
                reg[a, m.outcome] = m.distance
                cond[a, m.outcome] = m.conditional_distance
        trace.registration = reg
        trace.conditional_registration = cond
    return trace


@dataclass(frozen=True)
class AveragedRegistration:
    outcome: int
    window: tuple[float, float]
    distance: float
    diagonal_distance: float
    agreement: float


def time_averaged_registration(model: MeasurementModel, window: tuple[float, float],
                               n_grid: int = 2001) -> list[AveragedRegistration]:
    """
    Sector-conditional distance of the time-averaged R_ii to R_i^mu.

    The window must lie after t_off.  ``distance`` averages R_ii over a
    uniform grid; ``diagonal_distance`` uses the infinite-time diagonal
    ensemble in the eigenbasis of H_A (levels closer than 1e-9 grouped);
    ``agreement`` is the trace distance between the two averages.
    """
    ta, tb = window
    t_off = model.schedule.t_off
    if not t_off <= ta < tb:
        raise ValueError("averaging window must start after t_off and have positive length")
    prop = block_propagator(model)
    app = model.apparatus
    e = prop.free.energies
    ph = np.exp(-1j * np.outer(np.linspace(ta, tb, n_grid) - t_off, e))
    kernel = (ph.T @ ph.conj()) / n_grid
    mask = np.abs(e[:, None] - e[None, :]) <= ops.DEGENERACY_TOL
    out = []
    for i in range(model.n_out):
        Z = prop._switch_eig(i, i)
        k = app.outcome_sectors[i]
        target = microcanonical_state(app, k)
        avg = prop.free.from_eigenbasis(Z * kernel)
        diag = prop.free.from_eigenbasis(Z * mask)
        out.append(AveragedRegistration(
            outcome=i,
            window=(float(ta), float(tb)),
            distance=_conditional_distance(avg, app.sector_mask(k), target),
            diagonal_distance=_conditional_distance(diag, app.sector_mask(k), target),
            agreement=ops.trace_distance(avg, diag),
        ))
    return out


def _conditional_distance(R: np.ndarray, mask: np.ndarray, target: np.ndarray) -> float:
    weight = float(np.real(np.diagonal(R))[mask].sum())
    if weight <= 1e-12:
        return float("nan")
    cond = np.zeros_like(R)
    cond[np.ix_(mask, mask)] = R[np.ix_(mask, mask)] / weight
    return ops.trace_distance(cond, target)
