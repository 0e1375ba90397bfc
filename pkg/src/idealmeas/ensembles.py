"""
Born probabilities, state reduction by selection, run sampling and the
hierarchic addition law for subensembles.

Subensemble weights are held as integer counts so that the addition law

    (N1 + N2) q_i = N1 q_i^(1) + N2 q_i^(2)

can be checked exactly; ``fractions.Fraction`` is used wherever a weight
has to be formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import operators as ops
from .models import MeasurementModel, ProjectorFamily
from .rng import substream

PROB_CUTOFF = 1e-12


class ZeroProbabilityError(ValueError):
    """Conditioning on an outcome or sector whose weight is below 1e-12."""


@dataclass(frozen=True)
class OutcomeDistribution:
    probabilities: tuple[float, ...]
    source: str = "analytic"
    counts: tuple[int, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if self.source == "analytic":
            if np.any(p < -PROB_CUTOFF) or abs(p.sum() - 1) > ops.TRACE_TOL:
                raise ValueError(f"not a probability vector: {p}")
        elif self.source == "empirical":
            if self.counts is None or len(self.counts) != len(p):
                raise ValueError("empirical distribution needs one count per outcome")
        else:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def n_out(self) -> int:
        return len(self.probabilities)

    @property
    def N(self) -> int | None:
        return None if self.counts is None else int(sum(self.counts))

    @classmethod
    def empirical(cls, counts: Sequence[int]) -> "OutcomeDistribution":
        counts = tuple(int(c) for c in counts)
        n = sum(counts)
        if n < 1 or min(counts) < 0:
            raise ValueError("counts must be non-negative with a positive total")
        return cls(tuple(c / n for c in counts), "empirical", counts)


def born_probabilities(r0: np.ndarray, projectors: ProjectorFamily) -> OutcomeDistribution:
    """p_i = tr(Pi_i r0)."""
    r0 = ops.require_density(r0, "r0")
    p = [float(np.real(np.trace(P @ r0))) for P in projectors.projectors]
    return OutcomeDistribution(tuple(max(x, 0.0) for x in p))


def luders_update(r0: np.ndarray, projectors: ProjectorFamily, i: int) -> np.ndarray:
    """r_i = Pi_i r0 Pi_i / p_i."""
    r0 = ops.require_density(r0, "r0")
    P = projectors.projectors[i]
    block = P @ r0 @ P
    p = float(np.real(np.trace(block)))
    if p <= PROB_CUTOFF:
        raise ZeroProbabilityError(f"outcome {i} has probability {p:.3e}")
    return block / p


def sector_weight(D_f: np.ndarray, model: MeasurementModel, i: int) -> float:
    app = model.apparatus
    mask = np.tile(app.sector_mask(app.outcome_sectors[i]), model.d_S)
    return float(np.real(np.diagonal(D_f))[mask].sum())


def select_outcome(D_f: np.ndarray, model: MeasurementModel, i: int) -> np.ndarray:
    """
    Condition the joint state on the pointer reading A_i:
    (I ⊗ P_i) D_f (I ⊗ P_i) / q_i with P_i the projector on sector i.
    """
    app = model.apparatus
    if not app.distinguishes_outcomes:
        raise ValueError("outcomes share a pointer sector; selection by pointer reading is undefined")
    D_f = ops.square(D_f, "D_f")
    mask = np.tile(app.sector_mask(app.outcome_sectors[i]), model.d_S)
    q = float(np.real(np.diagonal(D_f))[mask].sum())
    if q <= PROB_CUTOFF:
        raise ZeroProbabilityError(f"sector of outcome {i} has weight {q:.3e}")
    out = np.zeros_like(D_f)
    out[np.ix_(mask, mask)] = D_f[np.ix_(mask, mask)] / q
    return out


def sample_runs(dist: OutcomeDistribution, N: int, seed: int) -> np.ndarray:
    """Multinomial counts of N runs drawn from an analytic distribution."""
    if dist.source != "analytic":
        raise ValueError("runs are sampled from an analytic distribution")
    if N < 1:
        raise ValueError("need at least one run")
    p = np.clip(np.asarray(dist.probabilities, dtype=float), 0.0, None)
    return substream(seed, "runs").multinomial(int(N), p / p.sum())


def within_sigma(counts: Sequence[int], p: Sequence[float], n_sigma: float = 3.0) -> bool:
    """|count_i/N - p_i| <= n_sigma sqrt(p_i (1-p_i) / N) for every outcome."""
    counts = np.asarray(counts, dtype=float)
    p = np.asarray(p, dtype=float)
    n = counts.sum()
    dev = np.abs(counts / n - p)
    return bool(np.all(dev <= n_sigma * np.sqrt(p * (1 - p) / n) + 1e-15))


def merge_subensembles(nodes: Iterable[tuple[int, Sequence]]) -> tuple[int, tuple[Fraction, ...]]:
    """
    (N_total, q) with q_i = sum_r N_r q_i^(r) / sum_r N_r, exact.

    Weights may be Fractions, ints or floats; floats are converted to
    their exact binary value.
    """
    nodes = list(nodes)
    if not nodes:
        raise ValueError("nothing to merge")
    n_out = len(nodes[0][1])
    total = 0
    acc = [Fraction(0)] * n_out
    for N, q in nodes:
        if int(N) != N or N < 1:
            raise ValueError(f"run counts must be positive integers, got {N}")
        if len(q) != n_out:
            raise ValueError("all nodes need the same number of outcomes")
        qf = [Fraction(x) for x in q]
        if sum(qf) != 1 or min(qf) < 0:
            raise ValueError(f"weights {q} are not normalized")
        total += int(N)
        acc = [a + int(N) * x for a, x in zip(acc, qf)]
    return total, tuple(a / total for a in acc)


@dataclass(frozen=True)
class SubensembleNode:
    """A subensemble of N runs, counts[i] of which gave outcome i."""

    counts: tuple[int, ...]
    children: tuple["SubensembleNode", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "children", tuple(self.children))
        if sum(self.counts) < 1 or min(self.counts) < 0:
            raise ValueError("a subensemble needs non-negative counts and at least one run")

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def weights(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(c, self.N) for c in self.counts)

    def walk(self, path: tuple[int, ...] = ()):
        yield path, self
        for k, c in enumerate(self.children):
            yield from c.walk(path + (k,))

    def replace(self, path: Sequence[int], node: "SubensembleNode") -> "SubensembleNode":
        """Copy of the tree with the node at ``path`` swapped for ``node``."""
        if not path:
            return node
        k = path[0]
        kids = list(self.children)
        kids[k] = kids[k].replace(path[1:], node)
        return SubensembleNode(self.counts, tuple(kids))


def format_path(path: Sequence[int]) -> str:
    return "/".join(["root", *map(str, path)])


@dataclass(frozen=True)
class HierarchyReport:
    exact: bool
    failures: tuple[tuple[str, str], ...]
    n_nodes: int
    root_weights: tuple[Fraction, ...]
    born_consistent: bool | None = None
    max_z: float | None = None

    @property
    def passed(self) -> bool:
        return self.exact and self.born_consistent is not False


def hierarchy_audit(root: SubensembleNode, born: Sequence[float] | None = None,
                    n_sigma: float = 3.0) -> HierarchyReport:
    """
    Check the addition law at every internal node, exactly.

    With ``born`` given, the root frequencies are also compared with the
    Born probabilities within ``n_sigma`` multinomial standard deviations.
    """
    failures = []
    n_nodes = 0
    for path, node in root.walk():
        n_nodes += 1
        if not node.children:
            continue
        if any(len(c.counts) != len(node.counts) for c in node.children):
            failures.append((format_path(path), "children disagree on the number of outcomes"))
            continue
        N, q = merge_subensembles((c.N, c.weights) for c in node.children)
        if N != node.N:
            failures.append((format_path(path), f"run count {node.N} != sum of children {N}"))
        elif q != node.weights:
            failures.append((format_path(path), f"weights {node.weights} != merged children {q}"))
    born_ok, max_z = None, None
    if born is not None:
        p = np.asarray(born, dtype=float)
        freq = np.array([float(w) for w in root.weights])
        sd = np.sqrt(p * (1 - p) / root.N)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sd > 0, np.abs(freq - p) / np.where(sd > 0, sd, 1), np.where(freq == p, 0.0, np.inf))
        max_z = float(np.max(z))
        born_ok = bool(max_z <= n_sigma)
    return HierarchyReport(not failures, tuple(failures), n_nodes, root.weights, born_ok, max_z)


def outcome_partition(counts: Sequence[int]) -> SubensembleNode:
    """Root whose children are the pure outcome classes E_i."""
    counts = [int(c) for c in counts]
    n = len(counts)
    kids = tuple(SubensembleNode(tuple(c if j == i else 0 for j in range(n))) for i, c in enumerate(counts) if c > 0)
    return SubensembleNode(tuple(counts), kids)


def random_hierarchy(dist: OutcomeDistribution, N: int, seed: int, depth: int = 3,
                     max_children: int = 4) -> SubensembleNode:
    """
    Tree over N sampled runs: the runs are shuffled and cut at random
    points into 2..max_children subensembles, recursively, for ``depth``
    levels (root included).
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    counts = sample_runs(dist, N, seed)
    runs = np.repeat(np.arange(dist.n_out), counts)
    rng = substream(seed, "hierarchy")
    rng.shuffle(runs)
    return _build(runs, dist.n_out, depth, max_children, rng)


def _build(runs: np.ndarray, n_out: int, depth: int, max_children: int, rng) -> SubensembleNode:
    counts = tuple(int(c) for c in np.bincount(runs, minlength=n_out))
    if depth == 1 or len(runs) < 2:
        return SubensembleNode(counts)
    k = int(rng.integers(2, min(max_children, len(runs)) + 1))
    cuts = np.sort(rng.choice(np.arange(1, len(runs)), size=k - 1, replace=False))
    kids = tuple(_build(part, n_out, depth - 1, max_children, rng) for part in np.split(runs, cuts))
    return SubensembleNode(counts, kids)
