"""Decision trees over [0,1]^R with scalar leaf jumps, plus the grow/prune
proposal moves used by the structure sampler.

Trees live in flat node-slot arrays (see `_engine`) so the same storage is
shared by the fast sweep kernels and by this object API.  Node ids are
stable across moves; routing is strict: a rule {Z_r < t} sends z_r == t to
the right child.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .samplers import as_generator

DEFAULT_CAP = 128


class TreeError(ValueError):
    """Raised for malformed trees or invalid tree operations."""


@dataclass(frozen=True)
class DecisionRule:
    """Axis-aligned rule {Z_axis < threshold} with axis in 0..R-1."""

    axis: int
    threshold: float

    def __post_init__(self):
        if self.axis < 0:
            raise TreeError(f"rule axis must be nonnegative, got {self.axis}")
        if not 0.0 < self.threshold < 1.0:
            raise TreeError(f"rule threshold must be in (0,1), got {self.threshold}")


class DecisionTree:
    """Rooted full binary tree; internal nodes carry rules, leaves carry jumps."""

    __slots__ = ("feat", "thr", "left", "right", "parent", "depth", "mu",
                 "free", "_nfree", "n_modifiers")

    def __init__(self, n_modifiers: int, cap: int = DEFAULT_CAP):
        if n_modifiers < 1:
            raise TreeError("need at least one modifier axis")
        if cap < 3:
            raise TreeError("node capacity must allow at least one split")
        self.n_modifiers = int(n_modifiers)
        self.feat = np.full(cap, _engine.FREE, dtype=np.int32)
        self.thr = np.zeros(cap, dtype=np.float64)
        self.left = np.full(cap, -1, dtype=np.int32)
        self.right = np.full(cap, -1, dtype=np.int32)
        self.parent = np.full(cap, -1, dtype=np.int32)
        self.depth = np.zeros(cap, dtype=np.int32)
        self.mu = np.zeros(cap, dtype=np.float64)
        self.free = np.arange(cap - 1, 0, -1, dtype=np.int32)[::-1].copy()
        self._nfree = cap - 1
        self.feat[0] = _engine.LEAF

    # -- constructors ------------------------------------------------------

    @classmethod
    def stump(cls, n_modifiers: int, jump: float = 0.0, cap: int | None = None) -> "DecisionTree":
        tree = cls(n_modifiers, cap or DEFAULT_CAP)
        tree.mu[0] = jump
        return tree

    def copy(self) -> "DecisionTree":
        other = DecisionTree.__new__(DecisionTree)
        other.n_modifiers = self.n_modifiers
        for name in ("feat", "thr", "left", "right", "parent", "depth", "mu", "free"):
            setattr(other, name, getattr(self, name).copy())
        other._nfree = self._nfree
        return other

    # -- basic structure ---------------------------------------------------

    @property
    def cap(self) -> int:
        return self.feat.size

    def n_free(self) -> int:
        return self._nfree

    def n_nodes(self) -> int:
        return self.cap - self._nfree

    def n_leaves(self) -> int:
        return (self.n_nodes() + 1) // 2

    def n_internal(self) -> int:
        return self.n_nodes() - self.n_leaves()

    def is_leaf(self, node: int) -> bool:
        return self.feat[node] == _engine.LEAF

    def node_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feat != _engine.FREE)

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feat == _engine.LEAF)

    def internal_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feat >= 0)

    def nog_ids(self) -> np.ndarray:
        """Internal nodes whose both children are leaves (prunable)."""
        out = []
        for node in self.internal_ids():
            if self.is_leaf(self.left[node]) and self.is_leaf(self.right[node]):
                out.append(node)
        return np.asarray(out, dtype=np.int64)

    def rule(self, node: int) -> DecisionRule:
        if self.is_leaf(node):
            raise TreeError(f"node {node} is a leaf")
        return DecisionRule(int(self.feat[node]), float(self.thr[node]))

    # -- evaluation --------------------------------------------------------

    def _check_z(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.n_modifiers:
            raise TreeError(
                f"modifier vector has {z.shape[-1]} entries; tree expects {self.n_modifiers}"
            )
        return z

    def leaf_for(self, z) -> int:
        z = self._check_z(z)
        f2 = self.feat.reshape(1, -1)
        return int(_engine._route_point(
            f2, self.thr.reshape(1, -1), self.left.reshape(1, -1), self.right.reshape(1, -1), 0, z
        ))

    def evaluate(self, z) -> float:
        """Jump of the unique leaf that contains z."""
        return float(self.mu[self.leaf_for(z)])

    def evaluate_batch(self, Z) -> np.ndarray:
        Z = np.ascontiguousarray(self._check_z(np.atleast_2d(Z)))
        out = np.empty(Z.shape[0], dtype=np.int32)
        _engine._route_all(
            self.feat.reshape(1, -1), self.thr.reshape(1, -1),
            self.left.reshape(1, -1), self.right.reshape(1, -1), 0, Z, out,
        )
        return self.mu[out]

    def leaf_assignment(self, Z) -> "LeafAssignment":
        Z = np.ascontiguousarray(self._check_z(np.atleast_2d(Z)))
        out = np.empty(Z.shape[0], dtype=np.int32)
        _engine._route_all(
            self.feat.reshape(1, -1), self.thr.reshape(1, -1),
            self.left.reshape(1, -1), self.right.reshape(1, -1), 0, Z, out,
        )
        return LeafAssignment(out, self)

    # -- structural moves --------------------------------------------------

    def grow(self, leaf: int, axis: int, threshold: float) -> tuple[int, int]:
        """Attach two children to a leaf; they inherit its jump.  Returns
        the (left, right) child ids."""
        if not self.is_leaf(leaf):
            raise TreeError(f"cannot grow internal node {leaf}")
        if not 0 <= axis < self.n_modifiers:
            raise TreeError(f"axis {axis} out of range for R={self.n_modifiers}")
        if not 0.0 < threshold < 1.0:
            raise TreeError(f"threshold must be in (0,1), got {threshold}")
        if self._nfree < 2:
            raise TreeError("tree is at node capacity")
        nfree = np.array([self._nfree], dtype=np.int64)
        c1, c2 = _engine._apply_grow(
            self.feat.reshape(1, -1), self.thr.reshape(1, -1), self.left.reshape(1, -1),
            self.right.reshape(1, -1), self.parent.reshape(1, -1), self.depth.reshape(1, -1),
            self.mu.reshape(1, -1), self.free.reshape(1, -1), nfree, 0, leaf, axis, threshold,
        )
        self._nfree = int(nfree[0])
        return int(c1), int(c2)

    def prune(self, nog: int) -> None:
        """Collapse a nog node back to a leaf."""
        if self.is_leaf(nog):
            raise TreeError(f"cannot prune leaf {nog}")
        if not (self.is_leaf(self.left[nog]) and self.is_leaf(self.right[nog])):
            raise TreeError(f"node {nog} has non-leaf children")
        nfree = np.array([self._nfree], dtype=np.int64)
        _engine._apply_prune(
            self.feat.reshape(1, -1), self.thr.reshape(1, -1), self.left.reshape(1, -1),
            self.right.reshape(1, -1), self.parent.reshape(1, -1), self.depth.reshape(1, -1),
            self.mu.reshape(1, -1), self.free.reshape(1, -1), nfree, 0, nog,
        )
        self._nfree = int(nfree[0])

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        """Nested-object debug serialization; stable across versions."""
        def node_obj(node: int) -> dict:
            if self.is_leaf(node):
                return {"jump": float(self.mu[node])}
            return {
                "axis": int(self.feat[node]),
                "threshold": float(self.thr[node]),
                "left": node_obj(int(self.left[node])),
                "right": node_obj(int(self.right[node])),
            }

        return json.dumps({"n_modifiers": self.n_modifiers, "root": node_obj(0)}, indent=None)

    @classmethod
    def from_json(cls, text: str, cap: int | None = None) -> "DecisionTree":
        obj = json.loads(text)
        tree = cls(int(obj["n_modifiers"]), cap or DEFAULT_CAP)

        def build(node: int, spec: dict):
            if "jump" in spec:
                tree.mu[node] = float(spec["jump"])
                return
            c1, c2 = tree.grow(node, int(spec["axis"]), float(spec["threshold"]))
            build(c1, spec["left"])
            build(c2, spec["right"])

        build(0, obj["root"])
        return tree

    def validate(self) -> None:
        """Structural invariants: full binary, consistent links and depths."""
        seen = set()
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if node in seen:
                raise TreeError(f"node {node} reachable twice")
            seen.add(node)
            if self.feat[node] == _engine.FREE:
                raise TreeError(f"node {node} reachable but marked free")
            if int(self.depth[node]) != d:
                raise TreeError(f"node {node} stored depth {self.depth[node]} != actual {d}")
            if not self.is_leaf(node):
                l, r = int(self.left[node]), int(self.right[node])
                if l < 0 or r < 0:
                    raise TreeError(f"internal node {node} missing a child")
                for c in (l, r):
                    if int(self.parent[c]) != node:
                        raise TreeError(f"child {c} has wrong parent link")
                self.rule(node)
                stack.append((l, d + 1))
                stack.append((r, d + 1))
        if len(seen) != self.n_nodes():
            raise TreeError(
                f"{self.n_nodes()} allocated nodes but {len(seen)} reachable from the root"
            )


class LeafAssignment:
    """Observation -> leaf bookkeeping for a fixed tree and modifier matrix.

    The per-leaf index lists partition the observation indices.
    """

    def __init__(self, leaf_of_obs: np.ndarray, tree: DecisionTree):
        self.leaf_of_obs = np.asarray(leaf_of_obs, dtype=np.int32)
        self.tree = tree

    def obs_in_leaf(self, leaf: int) -> np.ndarray:
        return np.flatnonzero(self.leaf_of_obs == leaf)

    def index_lists(self) -> dict[int, np.ndarray]:
        return {int(leaf): self.obs_in_leaf(int(leaf)) for leaf in self.tree.leaf_ids()}

    def counts(self) -> dict[int, int]:
        uniq, cnt = np.unique(self.leaf_of_obs, return_counts=True)
        return {int(u): int(c) for u, c in zip(uniq, cnt)}


@dataclass(frozen=True)
class ProposalRatio:
    """Structural proposal log-probabilities for a grow/prune move.

    Rule densities (split-axis probability, cutpoint density) are folded out:
    they appear identically in the proposal and in the prior's rule term, so
    they cancel in the acceptance ratio and are omitted from both here.
    ``log_ratio`` is log q(T -> T') - log q(T' -> T).
    """

    log_forward: float
    log_reverse: float

    @property
    def log_ratio(self) -> float:
        return self.log_forward - self.log_reverse


def propose_grow(tree: DecisionTree, theta, rng, cutpoints=None):
    """Draw a grow proposal: uniform leaf, axis ~ Multinomial(theta),
    threshold ~ Uniform(0,1) (or uniform over per-axis cutpoint grids).

    Returns (new tree, ProposalRatio).  Draw order matches the sweep kernel.
    """
    rng = as_generator(rng)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != tree.n_modifiers:
        raise TreeError("theta length must equal the number of modifier axes")
    leaves = tree.leaf_ids()
    n_leaves = leaves.size
    leaf = int(leaves[rng.integers(0, n_leaves)])
    axis = int(_engine._draw_axis(theta, rng.random()))
    if cutpoints is None:
        cut = float(rng.random())
    else:
        grid = np.asarray(cutpoints[axis], dtype=np.float64)
        cut = float(grid[rng.integers(0, grid.size)])
    new = tree.copy()
    new.grow(leaf, axis, cut)
    p_grow = 1.0 if n_leaves == 1 else 0.5
    log_forward = math.log(p_grow) - math.log(n_leaves)
    log_reverse = math.log(0.5) - math.log(new.nog_ids().size)
    return new, ProposalRatio(log_forward, log_reverse)


def propose_prune(tree: DecisionTree, rng):
    """Draw a prune proposal: uniform over nog nodes.

    Returns (new tree, ProposalRatio).  Requires at least one internal node.
    """
    rng = as_generator(rng)
    nogs = tree.nog_ids()
    if nogs.size == 0:
        raise TreeError("cannot prune a stump")
    nog = int(nogs[rng.integers(0, nogs.size)])
    new = tree.copy()
    new.prune(nog)
    n_leaves = tree.n_leaves()
    p_grow_rev = 1.0 if n_leaves - 1 == 1 else 0.5
    log_forward = math.log(0.5) - math.log(nogs.size)
    log_reverse = math.log(p_grow_rev) - math.log(n_leaves - 1)
    return new, ProposalRatio(log_forward, log_reverse)


def split_counts(ensemble, n_modifiers: int) -> np.ndarray:
    """Number of internal nodes splitting on each axis, summed over trees."""
    counts = np.zeros(n_modifiers, dtype=np.int64)
    for tree in ensemble:
        for node in tree.internal_ids():
            counts[tree.feat[node]] += 1
    return counts
