"""Ancestry tree maintenance and topology clustering.

The tree records parent/offspring relations created by resampling. Kept in
minimal form (dead branches removed, single-child chains merged) it never
exceeds 2P nodes, and clusters of approximately k particles can be read off
its subtree leaf counts in one linear pass.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field

import numpy as np

_SLOT_MASK = (1 << 32) - 1


class StaleHandleError(RuntimeError):
    """A node handle referenced a recycled arena slot."""


class TreeInvariantError(AssertionError):
    """A structural invariant of the minimal tree was violated."""


@dataclass
class ClusterAssignment:
    """Per-particle minor-cluster labels extracted at threshold k.

    cluster_of[i] is 1..n_R for particles under a cluster root and 0 for the
    non-cluster group C0. roots holds the cluster-root handles (index j-1 for
    cluster j). tax_members flags the randomly drawn inheritance-tax group.
    """

    cluster_of: np.ndarray
    roots: list[int]
    k: int
    tax_members: np.ndarray = field(default=None)

    @property
    def n_clusters(self) -> int:
        return len(self.roots)

    def with_tax(self, rng, rate: float = 0.05) -> "ClusterAssignment":
        return sample_tax_cluster(self, rng, rate)


def sample_tax_cluster(assignment: ClusterAssignment, rng, rate: float = 0.05) -> ClusterAssignment:
    """Flag each particle as a tax member independently with probability rate."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"tax rate must be in [0, 1], got {rate}")
    n = len(assignment.cluster_of)
    members = rng.random(n) < rate
    return ClusterAssignment(assignment.cluster_of, assignment.roots, assignment.k, members)


@dataclass
class TreeMetrics:
    height: int
    mean_leaf_depth: float
    node_count: int
    mean_branching: float
    minor_cluster_count: int
    mean_cluster_size: float


class AncestryTree:
    """Arena-backed genealogy tree with free-list slot recycling.

    Handles are ints packing (generation << 32 | slot); touching a handle
    whose slot has been recycled raises StaleHandleError. With store_paths
    enabled each node carries the pose history of its lineage segment as a
    flat (x, y, theta) array, and merging a single-child chain concatenates
    the histories, so full per-step paths survive under the 2P node bound.
    """

    def __init__(self, n_particles: int, store_paths: bool = False):
        if n_particles < 1:
            raise ValueError("particle count must be >= 1")
        self.P = int(n_particles)
        self.store_paths = bool(store_paths)
        self._parent: list[int] = []
        self._children: list[list[int]] = []
        self._alive: list[bool] = []
        self._gen: list[int] = []
        self._weight: list[int] = []
        self._cluster: list[int] = []
        self._path: list = []  # array('d') of x,y,theta triplets, or None
        self._path_t0: list[int] = []
        self._free: list[int] = []
        self.node_count = 0
        self.root = self._alloc(parent=-1, alive=False)
        root_slot = self.root & _SLOT_MASK
        leaves = []
        for _ in range(self.P):
            h = self._alloc(parent=root_slot, alive=True)
            self._children[root_slot].append(h & _SLOT_MASK)
            leaves.append(h)
        self.leaf_handles = np.array(leaves, dtype=np.int64)
        self.recompute_subtree_weights()

    # -- arena plumbing -------------------------------------------------

    def _alloc(self, parent: int, alive: bool) -> int:
        if self._free:
            slot = self._free.pop()
            self._gen[slot] += 1
        else:
            slot = len(self._parent)
            self._parent.append(-1)
            self._children.append([])
            self._alive.append(False)
            self._gen.append(1)
            self._weight.append(0)
            self._cluster.append(0)
            self._path.append(None)
            self._path_t0.append(0)
        self._parent[slot] = parent
        self._children[slot] = []
        self._alive[slot] = alive
        self._weight[slot] = 0
        self._cluster[slot] = 0
        if self.store_paths:
            self._path[slot] = array("d")
        self.node_count += 1
        return self._handle(slot)

    def _release(self, slot: int) -> None:
        self._gen[slot] += 1
        self._children[slot] = []
        self._alive[slot] = False
        self._path[slot] = None
        self._free.append(slot)
        self.node_count -= 1

    def _handle(self, slot: int) -> int:
        return (self._gen[slot] << 32) | slot

    def slot_of(self, handle: int) -> int:
        slot = handle & _SLOT_MASK
        if slot >= len(self._gen) or (handle >> 32) != self._gen[slot]:
            raise StaleHandleError(f"stale or invalid node handle {handle}")
        return slot

    # -- growth and maintenance ------------------------------------------

    def record_resample(self, parents: np.ndarray, step: int = 0) -> np.ndarray:
        """Grow one generation: offspring i becomes a fresh leaf under the
        current leaf of particle parents[i].

        parents indexes the pre-resampling particle set. Old leaves keep
        their slots but stop being alive leaves; ones without offspring die
        at the next prune_and_merge. Returns the new leaf handles.
        """
        parents = np.asarray(parents, dtype=np.int64)
        old = self.leaf_handles
        if parents.size != old.size:
            raise ValueError("offspring assignment length must equal particle count")
        if parents.min() < 0 or parents.max() >= old.size:
            raise ValueError("parent index out of range")
        old_slots = [self.slot_of(int(h)) for h in old]
        for slot in old_slots:
            if not self._alive[slot]:
                raise TreeInvariantError("leaf handle does not reference an alive leaf")
            self._alive[slot] = False
        new = np.empty(parents.size, dtype=np.int64)
        children = self._children
        for i, pidx in enumerate(parents):
            pslot = old_slots[pidx]
            h = self._alloc(parent=pslot, alive=True)
            children[pslot].append(h & _SLOT_MASK)
            if self.store_paths:
                self._path_t0[h & _SLOT_MASK] = step
            new[i] = h
        self.leaf_handles = new
        return new

    def prune_and_merge(self) -> None:
        """Restore minimal form: drop subtrees with no alive leaf, splice out
        single-child internal nodes (dummy root exempt), refresh subtree
        weights, and check the 2P node bound."""
        root = self.root & _SLOT_MASK
        parent, children, alive = self._parent, self._children, self._alive
        weight, path = self._weight, self._path
        spliced_to: dict[int, int] = {}
        stack = [(root, False)]
        while stack:
            slot, processed = stack.pop()
            if not processed:
                stack.append((slot, True))
                for c in children[slot]:
                    stack.append((c, False))
                continue
            kept = []
            w = 1 if alive[slot] else 0
            for c in children[slot]:
                c = spliced_to.get(c, c)
                if weight[c] > 0:
                    kept.append(c)
                    parent[c] = slot
                    w += weight[c]
                else:
                    self._release(c)
            weight[slot] = w
            children[slot] = kept
            if w == 0:
                continue  # parent releases this slot
            if slot != root and not alive[slot] and len(kept) == 1:
                heir = kept[0]
                if self.store_paths and path[slot]:
                    merged = array("d", path[slot])
                    merged.extend(path[heir])
                    path[heir] = merged
                    self._path_t0[heir] = self._path_t0[slot]
                spliced_to[slot] = heir
                children[slot] = []
                self._release(slot)
        if self.node_count > 2 * self.P:
            raise TreeInvariantError(f"node count {self.node_count} exceeds 2P = {2 * self.P}")

    def recompute_subtree_weights(self) -> None:
        """Set W(n) to the alive-leaf count of n's subtree (1 at alive leaves)."""
        root = self.root & _SLOT_MASK
        children, alive, weight = self._children, self._alive, self._weight
        stack = [(root, False)]
        while stack:
            slot, processed = stack.pop()
            if not processed:
                stack.append((slot, True))
                for c in children[slot]:
                    stack.append((c, False))
                continue
            w = 1 if alive[slot] else 0
            for c in children[slot]:
                w += weight[c]
            weight[slot] = w

    # -- clustering -------------------------------------------------------

    def find_cluster_roots(self, k: int) -> list[int]:
        """Handles of nodes with W >= k whose children all have W < k."""
        if k < 1:
            raise ValueError(f"cluster threshold k must be >= 1, got {k}")
        roots = []
        weight, children, gen = self._weight, self._children, self._gen
        root = self.root & _SLOT_MASK
        stack = [root]
        while stack:
            slot = stack.pop()
            if weight[slot] < k:
                continue  # no descendant can reach k either
            if all(weight[c] < k for c in children[slot]):
                roots.append((gen[slot] << 32) | slot)
            else:
                stack.extend(children[slot])
        roots.sort(key=lambda h: h & _SLOT_MASK)
        return roots

    def assign_clusters(self, roots: list[int], k: int) -> ClusterAssignment:
        """Label alive leaves under roots[j-1] with cluster j, everything else 0."""
        cluster = self._cluster
        children = self._children
        rslot = self.root & _SLOT_MASK
        stack = [rslot]
        while stack:
            slot = stack.pop()
            cluster[slot] = 0
            stack.extend(children[slot])
        for j, handle in enumerate(roots, start=1):
            top = self.slot_of(handle)
            stack = [top]
            while stack:
                slot = stack.pop()
                if cluster[slot] != 0:
                    raise TreeInvariantError("cluster roots overlap")
                cluster[slot] = j
                stack.extend(children[slot])
        cluster_of = np.fromiter(
            (cluster[h & _SLOT_MASK] for h in self.leaf_handles), dtype=np.int32, count=self.P
        )
        if len(roots) * k > self.P:
            raise TreeInvariantError("cluster count exceeds P/k")
        return ClusterAssignment(cluster_of, list(roots), k)

    def extract_clusters(self, k: int) -> ClusterAssignment:
        return self.assign_clusters(self.find_cluster_roots(k), k)

    # -- inspection ------------------------------------------------------

    def _depths(self) -> dict[int, int]:
        root = self.root & _SLOT_MASK
        depth = {root: 0}
        stack = [root]
        while stack:
            slot = stack.pop()
            d = depth[slot] + 1
            for c in self._children[slot]:
                depth[c] = d
                stack.append(c)
        return depth

    def metrics(self, assignment: ClusterAssignment | None = None) -> TreeMetrics:
        depth = self._depths()
        leaf_depths = [depth[self.slot_of(int(h))] for h in self.leaf_handles]
        branch_counts = [len(self._children[s]) for s in depth if self._children[s]]
        if assignment is not None and assignment.roots:
            sizes = [self._weight[self.slot_of(h)] for h in assignment.roots]
            n_minor = len(sizes)
            mean_size = float(np.mean(sizes))
        else:
            n_minor, mean_size = 0, 0.0
        return TreeMetrics(
            height=max(leaf_depths),
            mean_leaf_depth=float(np.mean(leaf_depths)),
            node_count=self.node_count,
            mean_branching=float(np.mean(branch_counts)) if branch_counts else 0.0,
            minor_cluster_count=n_minor,
            mean_cluster_size=mean_size,
        )

    def subtree_weight(self, handle: int) -> int:
        return self._weight[self.slot_of(handle)]

    def parent_of(self, handle: int) -> int | None:
        slot = self.slot_of(handle)
        if slot == (self.root & _SLOT_MASK):
            return None
        p = self._parent[slot]
        return (self._gen[p] << 32) | p

    def children_of(self, handle: int) -> list[int]:
        slot = self.slot_of(handle)
        return [(self._gen[c] << 32) | c for c in self._children[slot]]

    def is_alive_leaf(self, handle: int) -> bool:
        return self._alive[self.slot_of(handle)]

    def live_handles(self) -> list[int]:
        root = self.root & _SLOT_MASK
        out = []
        stack = [root]
        while stack:
            slot = stack.pop()
            out.append((self._gen[slot] << 32) | slot)
            stack.extend(self._children[slot])
        return out

    def leaf_sets(self):
        """Particle-index set under every live node (the tree's laminar family).

        Returned as a list of frozensets, one per node, root included. Two
        minimal trees over the same particles are equal iff these families
        match, which is what the reconstruction oracle compares.
        """
        slot_particles: dict[int, list[int]] = {}
        for i, h in enumerate(self.leaf_handles):
            slot_particles.setdefault(self.slot_of(int(h)), []).append(i)
        root = self.root & _SLOT_MASK
        out = []
        done: dict[int, frozenset] = {}
        stack = [(root, False)]
        while stack:
            slot, processed = stack.pop()
            if not processed:
                stack.append((slot, True))
                for c in self._children[slot]:
                    stack.append((c, False))
                continue
            acc = set(slot_particles.get(slot, ()))
            for c in self._children[slot]:
                acc |= done[c]
            done[slot] = frozenset(acc)
            out.append(done[slot])
        return out

    # -- pose payloads ----------------------------------------------------

    def append_poses(self, states: np.ndarray) -> None:
        """Record each particle's current pose on its leaf (store_paths runs)."""
        if not self.store_paths:
            raise RuntimeError("pose payloads are disabled for this tree")
        path = self._path
        for i, h in enumerate(self.leaf_handles):
            path[self.slot_of(int(h))].extend(states[i])

    def particle_path(self, handle: int) -> np.ndarray:
        """Root-to-leaf pose history of one particle as an (n, 3) array."""
        if not self.store_paths:
            raise RuntimeError("pose payloads are disabled for this tree")
        pieces = []
        slot = self.slot_of(handle)
        root = self.root & _SLOT_MASK
        while slot != root:
            if self._path[slot]:
                pieces.append(np.frombuffer(self._path[slot], dtype=np.float64).reshape(-1, 3))
            slot = self._parent[slot]
        pieces.reverse()
        if not pieces:
            return np.empty((0, 3))
        return np.concatenate(pieces, axis=0)

    def all_paths(self) -> np.ndarray:
        """Stack of every particle's path, shape (P, T, 3)."""
        paths = [self.particle_path(int(h)) for h in self.leaf_handles]
        return np.stack(paths, axis=0)

    def stored_pose_count(self) -> int:
        return sum(len(p) // 3 for p in self._path if p) if self.store_paths else 0

    def check_minimal_form(self) -> None:
        """Raise unless the stored tree is minimal (used by invariant sweeps)."""
        root = self.root & _SLOT_MASK
        seen = 0
        stack = [root]
        while stack:
            slot = stack.pop()
            seen += 1
            kids = self._children[slot]
            if not kids and not self._alive[slot] and slot != root:
                raise TreeInvariantError("dead leaf survived pruning")
            if slot != root and not self._alive[slot] and len(kids) == 1:
                raise TreeInvariantError("single-child internal node survived merging")
            if self._alive[slot] and kids:
                raise TreeInvariantError("alive leaf has children")
            stack.extend(kids)
        if seen != self.node_count:
            raise TreeInvariantError("node_count disagrees with reachable nodes")
        if seen > 2 * self.P:
            raise TreeInvariantError("node count exceeds 2P")

    def dump(self) -> str:
        """Debug dump, one node per line: id parent W cluster depth."""
        root = self.root & _SLOT_MASK
        lines = []
        stack = [(root, -1, 0)]
        while stack:
            slot, parent, depth = stack.pop()
            lines.append(f"{slot} {parent} {self._weight[slot]} {self._cluster[slot]} {depth}")
            for c in self._children[slot]:
                stack.append((c, slot, depth + 1))
        return "\n".join(lines) + "\n"


def init_tree(n_particles: int, store_paths: bool = False) -> AncestryTree:
    """Fresh tree: a dummy root with one alive leaf per particle."""
    return AncestryTree(n_particles, store_paths=store_paths)
