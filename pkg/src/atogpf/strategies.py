"""Diversity maintenance strategies: standard PF, ATOG-CDS, ATOG-FS, FDS, DR-SIR.

All weight adjustments run in log space inside the filter pipeline; the
module also exposes the linear-weight forms of the individual operations
(cds_adjust, fitness_share, fds_adjust) with the contracts the tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filter import ParticleSet, StepRecord, systematic_resample, wrap_angle
from .tree import ClusterAssignment, sample_tax_cluster


@dataclass
class DrSirConfig:
    l_start: float = 2.0   # maximum quadtree cell width
    l_min: float = 0.25    # subdivision limit on cell width
    alpha: int = 8         # bucket capacity before subdivision
    w_min: float = 0.0001  # minimum summed residual for a support particle


@dataclass
class StrategyConfig:
    lambda0: float = 2.0
    k_minor_frac: float = 0.05
    k_major_frac: float = 0.15
    tax_rate: float = 0.05
    fds_sample_frac: float = 0.2
    drsir: DrSirConfig = field(default_factory=DrSirConfig)

    def validate(self) -> None:
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        for name in ("k_minor_frac", "k_major_frac", "tax_rate", "fds_sample_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


# -- individual operations (linear weights) --------------------------------

def cds_adjust(weights, assignment: ClusterAssignment, lambda0: float):
    """Multiply the weight of every non-cluster (C0) particle by lambda0."""
    if lambda0 <= 0:
        raise ValueError(f"lambda0 must be positive, got {lambda0}")
    weights = np.asarray(weights, dtype=np.float64)
    return np.where(assignment.cluster_of == 0, lambda0 * weights, weights)


def _share_log(log_weights: np.ndarray, groups: np.ndarray, p: int):
    """Log-space fitness sharing: each group's total becomes |G|/P, members
    split it in proportion to their input weights. Groups whose weights all
    underflowed to zero split their total uniformly; their count is returned."""
    out = np.empty_like(log_weights)
    zero_groups = 0
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        lw = log_weights[idx]
        m = np.max(lw)
        share = math.log(idx.size) - math.log(p)
        if not math.isfinite(m):
            out[idx] = share - math.log(idx.size)
            zero_groups += 1
            continue
        lse = m + math.log(np.sum(np.exp(lw - m)))
        out[idx] = lw - lse + share
    return out, zero_groups


def fitness_share(weights, groups, p: int | None = None):
    """Renormalize weights so each sharing group sums to its population share.

    groups is an int label per particle (a ClusterAssignment's cluster_of,
    possibly with a tax label patched in). Within a group the relative order
    and ratios of the input weights are preserved exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    groups = np.asarray(groups)
    if p is None:
        p = weights.size
    with np.errstate(divide="ignore"):
        out, _ = _share_log(np.log(weights), groups, p)
    return np.exp(out)


def sharing_groups(assignment: ClusterAssignment) -> np.ndarray:
    """ATOG-FS sharing labels: minor cluster index (0 = C0), except that tax
    members leave their home group and share population-wide as one extra
    group."""
    groups = assignment.cluster_of.astype(np.int64).copy()
    if assignment.tax_members is not None:
        groups[assignment.tax_members] = assignment.n_clusters + 1
    return groups


def _fds_factors(states: np.ndarray, rng, k: int) -> np.ndarray:
    """Sum of planar distances from each particle to k+1 uniformly drawn
    peers (with replacement, self included per rand(0, P))."""
    p = states.shape[0]
    xy = states[:, :2]
    idx = rng.integers(0, p, size=(p, k + 1))
    diff = xy[:, None, :] - xy[idx]
    return np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2).sum(axis=1)


def fds_adjust(weights, states, rng, k: int | None = None):
    """Frequency-dependent selection: scale each weight by its summed
    distance to a random sample of peers (positions only)."""
    weights = np.asarray(weights, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    if k is None:
        k = int(0.2 * weights.size)
    return weights * _fds_factors(states, rng, k)


def atog_cds_adjust(weights, assignment: ClusterAssignment, config: StrategyConfig):
    """Standard PF weighting plus the C0 reward; no sharing."""
    return cds_adjust(weights, assignment, config.lambda0)


def atog_fs_adjust(weights, assignment: ClusterAssignment, config: StrategyConfig, rng):
    """Full pipeline: draw the tax group, share within groups, reward C0,
    renormalize."""
    assignment = sample_tax_cluster(assignment, rng, config.tax_rate)
    shared = fitness_share(weights, sharing_groups(assignment), weights.size)
    boosted = cds_adjust(shared, assignment, config.lambda0)
    return boosted / np.sum(boosted)


# -- DR-SIR quadtree -------------------------------------------------------

class QuadtreeBin:
    """Point-region quadtree cell: a square (center, half-width) with a
    bucket of (particle index, residual, x, y) entries, or four children."""

    __slots__ = ("cx", "cy", "half", "bucket", "children")

    def __init__(self, cx: float, cy: float, half: float):
        self.cx = cx
        self.cy = cy
        self.half = half
        self.bucket: list[tuple[int, float, float, float]] = []
        self.children = None

    def leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.children is None:
                yield node
            else:
                stack.extend(node.children)


class _Quadtree:
    """Forest of l_start-wide root cells aligned to the global grid. Cells
    split past the bucket capacity but never below the l_min width."""

    def __init__(self, cfg: DrSirConfig):
        self.cfg = cfg
        self.roots: dict[tuple[int, int], QuadtreeBin] = {}

    def insert(self, x: float, y: float, index: int, residual: float) -> None:
        width = self.cfg.l_start
        key = (math.floor(x / width), math.floor(y / width))
        root = self.roots.get(key)
        if root is None:
            root = QuadtreeBin((key[0] + 0.5) * width, (key[1] + 0.5) * width, width / 2.0)
            self.roots[key] = root
        node = root
        while node.children is not None:
            node = node.children[(x >= node.cx) * 2 + (y >= node.cy)]
        node.bucket.append((index, residual, x, y))
        # After a split only the fullest child can still exceed capacity.
        while len(node.bucket) > self.cfg.alpha and node.half > self.cfg.l_min / 2.0:
            q = node.half / 2.0
            node.children = [
                QuadtreeBin(node.cx - q, node.cy - q, q),
                QuadtreeBin(node.cx - q, node.cy + q, q),
                QuadtreeBin(node.cx + q, node.cy - q, q),
                QuadtreeBin(node.cx + q, node.cy + q, q),
            ]
            bucket, node.bucket = node.bucket, []
            for item in bucket:
                child = node.children[(item[2] >= node.cx) * 2 + (item[3] >= node.cy)]
                child.bucket.append(item)
            node = max(node.children, key=lambda c: len(c.bucket))

    def leaves(self):
        for root in self.roots.values():
            yield from root.leaves()


def drsir_resample(pset: ParticleSet, config: DrSirConfig, rng,
                   return_sources: bool = False):
    """Deterministic residual resampling with quadtree support particles.

    Copy particles come from the integer part of P w_i; residual weights are
    binned spatially and every leaf cell holding at least w_min of residual
    emits one support particle at its residual-weighted mean state. The
    result is padded by systematic resampling or cut by a uniform random
    subset so exactly P states come back (uniform weights).

    With return_sources each output row is also attributed to an input index
    (support particles to their cell's heaviest-residual member), which path
    reconstruction uses since support particles have no single parent.
    """
    states = pset.states
    weights = pset.weights
    p = pset.size
    scaled = p * weights
    counts = np.floor(scaled).astype(np.int64)
    residuals = scaled - counts
    parts = [np.repeat(states, counts, axis=0)]
    sources = [np.repeat(np.arange(p), counts)]

    tree = _Quadtree(config)
    xs, ys = states[:, 0], states[:, 1]
    for i in range(p):
        tree.insert(xs[i], ys[i], i, residuals[i])
    supports, support_src = [], []
    for leaf in tree.leaves():
        if not leaf.bucket:
            continue
        total = sum(item[1] for item in leaf.bucket)
        if total < config.w_min:
            continue
        idx = np.fromiter((item[0] for item in leaf.bucket), dtype=np.int64)
        r = np.fromiter((item[1] for item in leaf.bucket), dtype=np.float64)
        x = float(np.dot(r, states[idx, 0]) / total)
        y = float(np.dot(r, states[idx, 1]) / total)
        theta = math.atan2(float(np.dot(r, np.sin(states[idx, 2]))),
                           float(np.dot(r, np.cos(states[idx, 2]))))
        supports.append((x, y, wrap_angle(theta)))
        support_src.append(int(idx[np.argmax(r)]))
    if supports:
        parts.append(np.array(supports))
        sources.append(np.array(support_src, dtype=np.int64))
    new = np.concatenate(parts, axis=0)
    src = np.concatenate(sources)

    n = new.shape[0]
    if n < p:
        fill = systematic_resample(weights, rng).parents[: p - n]
        new = np.concatenate([new, states[fill]], axis=0)
        src = np.concatenate([src, fill])
    elif n > p:
        keep = np.sort(rng.choice(n, size=p, replace=False))
        new = new[keep]
        src = src[keep]
    if return_sources:
        return new, src
    return new


# -- strategy objects used by the filter ------------------------------------

class Strategy:
    name = "base"
    maintains_tree = True
    custom_resampler = False

    def __init__(self, config: StrategyConfig | None = None):
        self.config = config or StrategyConfig()
        self.config.validate()

    def adjust(self, log_weights, pset, assignment, rng, record: StepRecord):
        return log_weights


class StandardPF(Strategy):
    name = "pf"


class AtogCds(Strategy):
    name = "atog-cds"

    def adjust(self, log_weights, pset, assignment, rng, record):
        boost = math.log(self.config.lambda0)
        return np.where(assignment.cluster_of == 0, log_weights + boost, log_weights)


class AtogFs(Strategy):
    name = "atog-fs"

    def adjust(self, log_weights, pset, assignment, rng, record):
        assignment = sample_tax_cluster(assignment, rng, self.config.tax_rate)
        shared, zero_groups = _share_log(
            log_weights, sharing_groups(assignment), pset.size)
        record.share_zero_groups += zero_groups
        boost = math.log(self.config.lambda0)
        return np.where(assignment.cluster_of == 0, shared + boost, shared)


class Fds(Strategy):
    name = "fds"

    def adjust(self, log_weights, pset, assignment, rng, record):
        k = int(self.config.fds_sample_frac * pset.size)
        factors = _fds_factors(pset.states, rng, k)
        with np.errstate(divide="ignore"):
            return log_weights + np.log(factors)


class DrSir(Strategy):
    name = "drsir"
    maintains_tree = False
    custom_resampler = True

    def resample(self, pset: ParticleSet, rng) -> np.ndarray:
        pset.states, sources = drsir_resample(pset, self.config.drsir, rng,
                                              return_sources=True)
        return sources


STRATEGIES = {
    "pf": StandardPF,
    "fds": Fds,
    "drsir": DrSir,
    "atog-fs": AtogFs,
    "atog-cds": AtogCds,
}


def make_strategy(name: str, config: StrategyConfig | None = None) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")
    return cls(config)
