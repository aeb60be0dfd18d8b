"""Sequential Monte Carlo core: particle set, weighting, resampling, stepping.

Weights live in log space from likelihood evaluation until normalization;
a particle set exposed between steps always carries normalized linear
weights. Resampling is systematic, triggered when the effective sample size
drops below 0.95 P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tree import AncestryTree, ClusterAssignment, TreeMetrics

RESAMPLE_FRACTION = 0.95
WEIGHT_TOL = 1e-9


class FilterCollapseError(RuntimeError):
    """Every particle weight is zero; the caller decides how to recover."""


def wrap_angle(theta):
    """Wrap angles into [-pi, pi)."""
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class StateSE2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        self.theta = float(wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass
class Particle:
    state: StateSE2
    weight: float
    leaf: int


class ParticleSet:
    """P weighted SE(2) samples stored as arrays, plus tree-leaf handles."""

    def __init__(self, states: np.ndarray, weights: np.ndarray | None = None,
                 leaves: np.ndarray | None = None, normalized: bool = False):
        self.states = np.asarray(states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != 3:
            raise ValueError("states must have shape (P, 3)")
        p = self.states.shape[0]
        if weights is None:
            weights = np.full(p, 1.0 / p)
            normalized = True
        self.weights = np.asarray(weights, dtype=np.float64)
        self.leaves = None if leaves is None else np.asarray(leaves, dtype=np.int64)
        self.normalized = bool(normalized)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def particle(self, i: int) -> Particle:
        s = self.states[i]
        leaf = -1 if self.leaves is None else int(self.leaves[i])
        return Particle(StateSE2(s[0], s[1], s[2]), float(self.weights[i]), leaf)

    def positions(self) -> np.ndarray:
        return self.states[:, :2]


@dataclass
class ResampleOutcome:
    """Offspring assignment: parents[i] is the pre-resampling index copied
    into slot i of the new set."""

    parents: np.ndarray


def _check_normalized(weights: np.ndarray) -> None:
    total = float(np.sum(weights))
    if not math.isfinite(total) or abs(total - 1.0) > WEIGHT_TOL or np.any(weights < 0):
        raise ValueError(f"weights are not normalized (sum={total})")


def effective_sample_size(weights) -> float:
    """1 / sum(w^2) for normalized weights; P for uniform, 1 when degenerate."""
    weights = np.asarray(weights, dtype=np.float64)
    _check_normalized(weights)
    return 1.0 / float(np.sum(weights * weights))


def systematic_resample(weights, rng) -> ResampleOutcome:
    """Low-variance resampling with a single uniform offset in [0, 1/P).

    Every index i receives either floor(P w_i) or ceil(P w_i) offspring.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise ValueError("cannot resample an empty weight vector")
    _check_normalized(weights)
    p = weights.size
    points = (rng.random() + np.arange(p)) / p
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    parents = np.searchsorted(cum, points, side="right")
    return ResampleOutcome(np.minimum(parents, p - 1).astype(np.int64))


def normalize_weights(pset: ParticleSet) -> ParticleSet:
    """Divide weights by their sum in place; all-zero weights signal collapse."""
    total = float(np.sum(pset.weights))
    if total <= 0.0:
        raise FilterCollapseError("all particle weights are zero")
    pset.weights = pset.weights / total
    pset.normalized = True
    return pset


def weights_from_log(log_weights: np.ndarray) -> np.ndarray:
    """Normalized linear weights from log weights, stabilized by the max.

    Raises FilterCollapseError when every entry is -inf.
    """
    m = np.max(log_weights)
    if not math.isfinite(m):
        raise FilterCollapseError("all log weights are -inf")
    w = np.exp(log_weights - m)
    return w / np.sum(w)


@dataclass
class StepRecord:
    step: int
    neff: float
    resampled: bool
    collapsed: bool = False
    share_zero_groups: int = 0
    n_clusters: int = 0
    c0_size: int = 0
    tree: TreeMetrics | None = None
    parents: np.ndarray | None = None  # offspring sources when resampled


@dataclass
class Models:
    """Motion and measurement models used by the filter side.

    motion.sample(states, control, rng) -> new states (P, 3)
    measurement.log_likelihood(prev_states, states, observation) -> (P,)
    """

    motion: object
    measurement: object


class ParticleFilter:
    """One filter run: owns the particle set, the ancestry tree and the
    cluster assignment, and advances them one (control, observation) pair
    at a time under a pluggable diversity strategy."""

    def __init__(self, pset: ParticleSet, strategy, models: Models, rng,
                 k_minor: int | None = None, store_paths: bool = False):
        self.pset = pset
        self.strategy = strategy
        self.models = models
        self.rng = rng
        p = pset.size
        self.k_minor = max(1, int(k_minor if k_minor is not None else
                                  round(strategy.config.k_minor_frac * p)))
        if strategy.maintains_tree:
            self.tree = AncestryTree(p, store_paths=store_paths)
            self.pset.leaves = self.tree.leaf_handles.copy()
            if store_paths:
                self.tree.append_poses(pset.states)
            self.assignment = self.tree.extract_clusters(self.k_minor)
        else:
            self.tree = None
            self.assignment = ClusterAssignment(
                np.zeros(p, dtype=np.int32), [], self.k_minor)
        self.step_index = 0
        self.collapse_count = 0

    def step(self, control, observation) -> StepRecord:
        pset, rng = self.pset, self.rng
        p = pset.size
        prev_states = pset.states
        pset.states = self.models.motion.sample(prev_states, control, rng)
        if self.tree is not None and self.tree.store_paths:
            self.tree.append_poses(pset.states)
        self.step_index += 1
        record = StepRecord(step=self.step_index, neff=float(p), resampled=False)

        loglik = self.models.measurement.log_likelihood(prev_states, pset.states, observation)
        with np.errstate(divide="ignore"):
            logw = np.log(pset.weights) + loglik
        logw = self.strategy.adjust(logw, pset, self.assignment, rng, record)

        try:
            pset.weights = weights_from_log(logw)
        except FilterCollapseError:
            pset.weights = np.full(p, 1.0 / p)
            record.collapsed = True
            self.collapse_count += 1
        pset.normalized = True

        record.neff = effective_sample_size(pset.weights)
        if record.neff < RESAMPLE_FRACTION * p:
            self._resample(record)
            record.resampled = True
            pset.weights = np.full(p, 1.0 / p)

        record.n_clusters = self.assignment.n_clusters
        record.c0_size = int(np.sum(self.assignment.cluster_of == 0))
        return record

    def _resample(self, record: StepRecord) -> None:
        pset = self.pset
        if getattr(self.strategy, "custom_resampler", False):
            record.parents = self.strategy.resample(pset, self.rng)
            return
        outcome = systematic_resample(pset.weights, self.rng)
        record.parents = outcome.parents
        pset.states = pset.states[outcome.parents]
        if self.tree is not None:
            self.pset.leaves = self.tree.record_resample(outcome.parents, step=self.step_index)
            self.tree.prune_and_merge()
            self.assignment = self.tree.extract_clusters(self.k_minor)
            record.tree = self.tree.metrics(self.assignment)
