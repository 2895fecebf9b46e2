"""Binary regression trees, their generative prior, and structure proposals.

Trees partition the input space with rules of the form ``x_v < c`` (ties go
right) drawn from fixed per-dimension cutpoint grids.  Each terminal node
carries a K-vector.  The prior makes a node internal with probability
``base * (1 + depth)^-power`` and picks rules uniformly from the cutpoints
still valid under the node's ancestors, which keeps trees shallow.  The
sampler explores structures with paired birth/death proposals whose forward
and reverse probabilities are recorded for the acceptance ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class TreePriorConfig:
    """Tree-generating prior and proposal settings."""

    split_base: float = 0.95
    split_power: float = 2.0
    cutpoints_per_dim: int = 100
    min_leaf_n: int = 1

    def __post_init__(self):
        if not 0.0 < self.split_base < 1.0:
            raise ValueError("split_base must be in (0, 1)")
        if self.split_power < 0.0:
            raise ValueError("split_power must be nonnegative")


def split_probability(depth: int, cfg: TreePriorConfig) -> float:
    """Probability that a node at ``depth`` is internal."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    return cfg.split_base * (1.0 + depth) ** (-cfg.split_power)


class CutpointGrid:
    """Per-dimension candidate cut values."""

    def __init__(self, cuts: list[np.ndarray]):
        self.cuts = [np.asarray(c, dtype=float) for c in cuts]

    @classmethod
    def from_data(
        cls, X: np.ndarray, n_per_dim: int = 100, method: str = "uniform"
    ) -> "CutpointGrid":
        """Candidate cuts from the observed data.

        ``uniform`` spaces ``n_per_dim`` points equally over the observed
        range (interior only).  ``midpoints`` places one cut between each
        pair of adjacent observed values, so no two rules can isolate an
        interval that contains no data.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cuts = []
        for v in range(X.shape[1]):
            col = X[:, v]
            if method == "uniform":
                lo, hi = col.min(), col.max()
                cuts.append(np.linspace(lo, hi, n_per_dim + 2)[1:-1])
            elif method == "midpoints":
                uniq = np.unique(col)
                mids = 0.5 * (uniq[:-1] + uniq[1:])
                if mids.size > n_per_dim:
                    keep = np.linspace(0, mids.size - 1, n_per_dim).round().astype(int)
                    mids = mids[np.unique(keep)]
                cuts.append(mids)
            else:
                raise ValueError(f"unknown cutpoint method {method!r}")
        return cls(cuts)

    @property
    def dim(self) -> int:
        return len(self.cuts)


class Node:
    """Tree node; a leaf when ``left`` is None, else an internal split."""

    __slots__ = ("var", "cut", "left", "right", "value", "depth")

    def __init__(self, depth=0, var=None, cut=None, left=None, right=None, value=None):
        self.depth = depth
        self.var = var
        self.cut = cut
        self.left = left
        self.right = right
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def copy(self) -> "Node":
        n = Node(self.depth, self.var, self.cut)
        if self.is_leaf:
            n.value = np.array(self.value)
        else:
            n.left = self.left.copy()
            n.right = self.right.copy()
        return n


class Tree:
    """A decision tree over a fixed cutpoint grid with K-vector leaves."""

    def __init__(self, root: Node, grid: CutpointGrid):
        self.root = root
        self.grid = grid

    @classmethod
    def root_only(cls, grid: CutpointGrid, value) -> "Tree":
        root = Node(depth=0, value=np.asarray(value, dtype=float))
        return cls(root, grid)

    def copy(self) -> "Tree":
        return Tree(self.root.copy(), self.grid)

    # ---- traversal -----------------------------------------------------

    def leaves(self) -> list[Node]:
        out = []

        def rec(node):
            if node.is_leaf:
                out.append(node)
            else:
                rec(node.left)
                rec(node.right)

        rec(self.root)
        return out

    def internal_nodes(self) -> list[Node]:
        out = []

        def rec(node):
            if not node.is_leaf:
                out.append(node)
                rec(node.left)
                rec(node.right)

        rec(self.root)
        return out

    def nog_nodes(self) -> list[Node]:
        """Internal nodes whose children are both leaves (collapsible)."""
        return [
            n for n in self.internal_nodes() if n.left.is_leaf and n.right.is_leaf
        ]

    def n_leaves(self) -> int:
        return len(self.leaves())

    def depth(self) -> int:
        return max(leaf.depth for leaf in self.leaves())

    # ---- cutpoint bookkeeping -------------------------------------------

    def node_bounds(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Ancestor-implied (lo, hi) interval per dimension for every node."""
        d = self.grid.dim
        out = {}

        def rec(node, lo, hi):
            out[id(node)] = (lo, hi)
            if not node.is_leaf:
                lo_l, hi_l = lo.copy(), hi.copy()
                hi_l[node.var] = min(hi_l[node.var], node.cut)
                rec(node.left, lo_l, hi_l)
                lo_r, hi_r = lo.copy(), hi.copy()
                lo_r[node.var] = max(lo_r[node.var], node.cut)
                rec(node.right, lo_r, hi_r)

        rec(self.root, np.full(d, -np.inf), np.full(d, np.inf))
        return out

    def valid_cuts(self, node: Node, bounds=None) -> list[np.ndarray]:
        """Cutpoints per dimension still usable below ``node``'s ancestors."""
        if bounds is None:
            bounds = self.node_bounds()
        lo, hi = bounds[id(node)]
        return [
            c[(c > lo[v]) & (c < hi[v])] for v, c in enumerate(self.grid.cuts)
        ]

    def growable_leaves(self, bounds=None) -> list[Node]:
        """Leaves with at least one valid cutpoint in some dimension."""
        if bounds is None:
            bounds = self.node_bounds()
        return [
            leaf
            for leaf in self.leaves()
            if any(c.size for c in self.valid_cuts(leaf, bounds))
        ]

    # ---- data assignment -------------------------------------------------

    def assign_leaf(self, x) -> Node:
        """Descend from the root; left iff x_var < cut, ties to the right."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.var] < node.cut else node.right
        return node

    def partition(self, X: np.ndarray) -> list[tuple[Node, np.ndarray]]:
        """Leaves in traversal order with the row indices of X they contain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = []

        def rec(node, idx):
            if node.is_leaf:
                out.append((node, idx))
            else:
                mask = X[idx, node.var] < node.cut
                rec(node.left, idx[mask])
                rec(node.right, idx[~mask])

        rec(self.root, np.arange(X.shape[0]))
        return out

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Leaf vector of every row of X, as an (n, K) array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = len(self.root.value) if self.root.is_leaf else len(
            self.leaves()[0].value
        )
        out = np.empty((X.shape[0], k))
        for leaf, idx in self.partition(X):
            out[idx] = leaf.value
        return out

    # ---- serialization -----------------------------------------------------

    def encode(self) -> str:
        """Deterministic pre-order text encoding of the tree."""
        parts = []

        def rec(node):
            if node.is_leaf:
                vals = " ".join(f"{v:.17g}" for v in node.value)
                parts.append(f"L {len(node.value)} {vals}")
            else:
                parts.append(f"I {node.var} {node.cut:.17g}")
                rec(node.left)
                rec(node.right)

        rec(self.root)
        return " ".join(parts)

    @classmethod
    def decode(cls, text: str, grid: CutpointGrid) -> "Tree":
        tokens = text.split()
        pos = 0

        def rec(depth):
            nonlocal pos
            tag = tokens[pos]
            pos += 1
            if tag == "L":
                k = int(tokens[pos])
                pos += 1
                value = np.array([float(t) for t in tokens[pos : pos + k]])
                pos += k
                return Node(depth=depth, value=value)
            if tag != "I":
                raise ValueError(f"bad tree encoding near token {pos}: {tag!r}")
            var = int(tokens[pos])
            cut = float(tokens[pos + 1])
            pos += 2
            node = Node(depth=depth, var=var, cut=cut)
            node.left = rec(depth + 1)
            node.right = rec(depth + 1)
            return node

        root = rec(0)
        if pos != len(tokens):
            raise ValueError("trailing tokens in tree encoding")
        return cls(root, grid)


def assign_leaf(tree: Tree, x) -> Node:
    return tree.assign_leaf(x)


def log_tree_prior(tree: Tree, cfg: TreePriorConfig) -> float:
    """Log prior of a tree: node-type terms plus uniform rule probabilities."""
    bounds = tree.node_bounds()
    total = 0.0

    def rec(node):
        nonlocal total
        p = split_probability(node.depth, cfg)
        if node.is_leaf:
            total += np.log1p(-p)
        else:
            cuts = tree.valid_cuts(node, bounds)
            n_vars = sum(1 for c in cuts if c.size)
            n_cuts = cuts[node.var].size
            total += np.log(p) - np.log(n_vars) - np.log(n_cuts)
            rec(node.left)
            rec(node.right)

    rec(tree.root)
    return float(total)


@dataclass
class Proposal:
    """Outcome of a structure move; ``valid`` is False for auto-rejects."""

    kind: str
    valid: bool
    tree: Optional[Tree] = None
    log_forward: float = 0.0
    log_reverse: float = 0.0
    log_prior_ratio: float = 0.0
    old_leaf_sets: list = field(default_factory=list)
    new_leaf_sets: list = field(default_factory=list)


def _birth_prior_terms(depth: int, n_vars: int, n_cuts: int, cfg) -> float:
    p_here = split_probability(depth, cfg)
    p_child = split_probability(depth + 1, cfg)
    return (
        np.log(p_here)
        + 2.0 * np.log1p(-p_child)
        - np.log1p(-p_here)
        - np.log(n_vars)
        - np.log(n_cuts)
    )


def propose_birth(
    tree: Tree, X: np.ndarray, cfg: TreePriorConfig, rng: np.random.Generator
) -> Proposal:
    """Grow a uniformly chosen leaf with a uniformly chosen rule.

    The proposal is marked invalid when no leaf can grow or when either
    child would receive fewer than ``min_leaf_n`` training points.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    new = tree.copy()
    bounds = new.node_bounds()
    growable = new.growable_leaves(bounds)
    if not growable:
        return Proposal("birth", valid=False)
    leaf = growable[rng.integers(len(growable))]
    cuts = new.valid_cuts(leaf, bounds)
    usable_vars = [v for v, c in enumerate(cuts) if c.size]
    var = usable_vars[rng.integers(len(usable_vars))]
    cut = float(cuts[var][rng.integers(cuts[var].size)])

    members = dict((id(node), idx) for node, idx in new.partition(X))
    idx = members[id(leaf)]
    mask = X[idx, var] < cut
    idx_left, idx_right = idx[mask], idx[~mask]
    if min(idx_left.size, idx_right.size) < cfg.min_leaf_n:
        return Proposal("birth", valid=False)

    log_forward = -(
        np.log(len(growable)) + np.log(len(usable_vars)) + np.log(cuts[var].size)
    )
    log_prior_ratio = _birth_prior_terms(
        leaf.depth, len(usable_vars), cuts[var].size, cfg
    )

    leaf.var, leaf.cut = var, cut
    leaf.left = Node(depth=leaf.depth + 1, value=np.array(leaf.value))
    leaf.right = Node(depth=leaf.depth + 1, value=np.array(leaf.value))
    leaf.value = None

    log_reverse = -np.log(len(new.nog_nodes()))
    return Proposal(
        "birth",
        valid=True,
        tree=new,
        log_forward=float(log_forward),
        log_reverse=float(log_reverse),
        log_prior_ratio=float(log_prior_ratio),
        old_leaf_sets=[idx],
        new_leaf_sets=[idx_left, idx_right],
    )


def propose_death(
    tree: Tree, X: np.ndarray, cfg: TreePriorConfig, rng: np.random.Generator
) -> Proposal:
    """Collapse a uniformly chosen internal node whose children are leaves."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    new = tree.copy()
    nogs = new.nog_nodes()
    if not nogs:
        return Proposal("death", valid=False)
    node = nogs[rng.integers(len(nogs))]
    log_forward = -np.log(len(nogs))

    members = dict((id(n), idx) for n, idx in new.partition(X))
    idx_left = members[id(node.left)]
    idx_right = members[id(node.right)]
    idx_union = np.sort(np.concatenate([idx_left, idx_right]))

    var, cut = node.var, node.cut
    node.value = 0.5 * (node.left.value + node.right.value)
    node.var = node.cut = node.left = node.right = None

    bounds = new.node_bounds()
    cuts = new.valid_cuts(node, bounds)
    usable_vars = sum(1 for c in cuts if c.size)
    log_reverse = -(
        np.log(len(new.growable_leaves(bounds)))
        + np.log(usable_vars)
        + np.log(cuts[var].size)
    )
    log_prior_ratio = -_birth_prior_terms(node.depth, usable_vars, cuts[var].size, cfg)
    return Proposal(
        "death",
        valid=True,
        tree=new,
        log_forward=float(log_forward),
        log_reverse=float(log_reverse),
        log_prior_ratio=float(log_prior_ratio),
        old_leaf_sets=[idx_left, idx_right],
        new_leaf_sets=[idx_union],
    )


def propose_rule_change(
    tree: Tree, X: np.ndarray, cfg: TreePriorConfig, rng: np.random.Generator
) -> Proposal:
    """Redraw the rule of a uniformly chosen internal node (symmetric move).

    Used to relocate cuts during sampler warmup, where birth/death pairs
    cannot cross the valley of removing a load-bearing split.  The proposal
    is symmetric in (var, cut), so only the tree-prior difference (from
    descendants' rule sets) and the likelihood enter the acceptance ratio.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    new = tree.copy()
    internals = new.internal_nodes()
    if not internals:
        return Proposal("change", valid=False)
    node = internals[rng.integers(len(internals))]
    bounds = new.node_bounds()
    cuts = new.valid_cuts(node, bounds)
    usable_vars = [v for v, c in enumerate(cuts) if c.size]
    var = usable_vars[rng.integers(len(usable_vars))]
    cut = float(cuts[var][rng.integers(cuts[var].size)])

    old_sets = [idx for leaf, idx in new.partition(X)]
    node.var, node.cut = var, cut
    new_sets = [idx for leaf, idx in new.partition(X)]
    if any(idx.size < cfg.min_leaf_n for idx in new_sets):
        return Proposal("change", valid=False)
    # Descendant rules must stay usable under the new ancestor interval.
    new_bounds = new.node_bounds()
    for inner in new.internal_nodes():
        lo, hi = new_bounds[id(inner)]
        if not lo[inner.var] < inner.cut < hi[inner.var]:
            return Proposal("change", valid=False)
    log_prior_ratio = log_tree_prior(new, cfg) - log_tree_prior(tree, cfg)
    return Proposal(
        "change",
        valid=True,
        tree=new,
        log_forward=0.0,
        log_reverse=0.0,
        log_prior_ratio=float(log_prior_ratio),
        old_leaf_sets=old_sets,
        new_leaf_sets=new_sets,
    )


def sample_tree_from_prior(
    grid: CutpointGrid, cfg: TreePriorConfig, rng: np.random.Generator, k: int = 1
) -> Tree:
    """Draw a tree structure from the generative prior (zero leaf vectors)."""
    tree = Tree.root_only(grid, np.zeros(k))

    def rec(node, lo, hi):
        cuts = [
            c[(c > lo[v]) & (c < hi[v])] for v, c in enumerate(grid.cuts)
        ]
        usable = [v for v, c in enumerate(cuts) if c.size]
        if not usable:
            return
        if rng.random() >= split_probability(node.depth, cfg):
            return
        var = usable[rng.integers(len(usable))]
        cut = float(cuts[var][rng.integers(cuts[var].size)])
        node.var, node.cut, node.value = var, cut, None
        node.left = Node(depth=node.depth + 1, value=np.zeros(k))
        node.right = Node(depth=node.depth + 1, value=np.zeros(k))
        hi_l = hi.copy()
        hi_l[var] = min(hi_l[var], cut)
        rec(node.left, lo.copy(), hi_l)
        lo_r = lo.copy()
        lo_r[var] = max(lo_r[var], cut)
        rec(node.right, lo_r, hi.copy())

    d = grid.dim
    rec(tree.root, np.full(d, -np.inf), np.full(d, np.inf))
    return tree
