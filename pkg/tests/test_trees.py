import numpy as np
import pytest

from mixtrees.trees import (
    CutpointGrid,
    Node,
    Tree,
    TreePriorConfig,
    log_tree_prior,
    propose_birth,
    propose_death,
    sample_tree_from_prior,
    split_probability,
)


@pytest.fixture
def cfg():
    return TreePriorConfig(split_base=0.95, split_power=2.0, cutpoints_per_dim=100)


@pytest.fixture
def grid1d():
    X = np.linspace(0.0, 1.0, 50)[:, None]
    return CutpointGrid.from_data(X, 100)


def build_depth2_tree(grid):
    """Root splits at x < 0.5; left child splits again at x < 0.25."""
    tree = Tree.root_only(grid, np.array([0.0]))
    root = tree.root
    root.var, root.cut, root.value = 0, 0.5, None
    root.left = Node(depth=1, var=0, cut=0.25)
    root.left.left = Node(depth=2, value=np.array([1.0]))
    root.left.right = Node(depth=2, value=np.array([2.0]))
    root.right = Node(depth=1, value=np.array([3.0]))
    return tree


class TestSplitProbability:
    def test_depth_zero_is_base(self, cfg):
        assert split_probability(0, cfg) == 0.95

    def test_depth_one_quarter(self, cfg):
        assert split_probability(1, cfg) == pytest.approx(0.95 / 4)

    def test_power_zero_is_constant(self):
        flat = TreePriorConfig(split_base=0.6, split_power=0.0)
        assert all(split_probability(d, flat) == 0.6 for d in range(6))


class TestAssignLeaf:
    def test_root_only_tree_returns_root(self, grid1d):
        tree = Tree.root_only(grid1d, np.array([7.0]))
        for x in (-10.0, 0.2, 99.0):
            assert tree.assign_leaf([x]) is tree.root

    def test_tie_goes_right(self, grid1d):
        tree = Tree.root_only(grid1d, np.array([0.0]))
        tree.root.var, tree.root.cut, tree.root.value = 0, 0.5, None
        tree.root.left = Node(depth=1, value=np.array([-1.0]))
        tree.root.right = Node(depth=1, value=np.array([1.0]))
        assert tree.assign_leaf([0.5]) is tree.root.right
        assert tree.assign_leaf([0.4999]) is tree.root.left

    def test_depth2_manual_trace(self, grid1d):
        tree = build_depth2_tree(grid1d)
        # x=0.1: left at 0.5, left at 0.25 -> leaf value 1
        assert tree.assign_leaf([0.1]).value[0] == 1.0
        # x=0.3: left at 0.5, right at 0.25 -> leaf value 2
        assert tree.assign_leaf([0.3]).value[0] == 2.0
        # x=0.9: right at root -> leaf value 3
        assert tree.assign_leaf([0.9]).value[0] == 3.0

    def test_every_point_lands_in_exactly_one_leaf(self, grid1d, cfg):
        rng = np.random.default_rng(5)
        X = rng.uniform(-0.2, 1.2, size=(10_000, 1))
        for seed in range(5):
            tree = sample_tree_from_prior(grid1d, cfg, np.random.default_rng(seed))
            counts = np.zeros(X.shape[0], dtype=int)
            for _, idx in tree.partition(X):
                counts[idx] += 1
            assert np.all(counts == 1)

    def test_evaluate_matches_assign(self, grid1d):
        tree = build_depth2_tree(grid1d)
        X = np.random.default_rng(0).uniform(0, 1, size=(100, 1))
        vals = tree.evaluate(X)
        expected = np.array([tree.assign_leaf(x).value for x in X])
        assert np.array_equal(vals, expected)


class TestLogTreePrior:
    def test_root_only(self, grid1d, cfg):
        tree = Tree.root_only(grid1d, np.array([0.0]))
        assert log_tree_prior(tree, cfg) == pytest.approx(np.log(1 - 0.95))

    def test_single_split(self, grid1d, cfg):
        tree = Tree.root_only(grid1d, np.array([0.0]))
        tree.root.var, tree.root.cut, tree.root.value = 0, grid1d.cuts[0][49], None
        tree.root.left = Node(depth=1, value=np.array([0.0]))
        tree.root.right = Node(depth=1, value=np.array([0.0]))
        expect = (
            np.log(0.95)
            + 2 * np.log(1 - 0.95 / 4)
            + np.log(1.0 / (1 * 100))
        )
        assert log_tree_prior(tree, cfg) == pytest.approx(expect, rel=1e-12)

    def test_depth2_matches_enumeration_oracle(self, grid1d, cfg):
        # Independent accounting: explicitly multiply out the generative
        # process for the hand-built depth-2 tree.
        tree = build_depth2_tree(grid1d)
        cuts = grid1d.cuts[0]
        p0, p1, p2 = (split_probability(d, cfg) for d in (0, 1, 2))
        n_below_half = int(np.sum(cuts < 0.5))
        expect = (
            np.log(p0) + np.log(1.0 / cuts.size)       # root rule
            + np.log(p1) + np.log(1.0 / n_below_half)  # left child rule
            + 2 * np.log(1 - p2)                       # two deep leaves
            + np.log(1 - p1)                           # right leaf
        )
        assert log_tree_prior(tree, cfg) == pytest.approx(expect, rel=1e-12)

    def test_prior_equals_birth_path_probability(self, grid1d, cfg):
        # Growing the single-split tree from the root: log prior difference
        # equals the birth move's prior ratio bookkeeping.
        rng = np.random.default_rng(11)
        X = np.linspace(0.0, 1.0, 50)[:, None]
        base = Tree.root_only(grid1d, np.array([0.0]))
        prop = propose_birth(base, X, cfg, rng)
        assert prop.valid
        delta = log_tree_prior(prop.tree, cfg) - log_tree_prior(base, cfg)
        assert prop.log_prior_ratio == pytest.approx(delta, rel=1e-12)


class TestProposals:
    def test_birth_forward_probability_uniform_choices(self, cfg):
        # Root-only tree, one dimension, 100 cutpoints: 1 / (1 * 1 * 100).
        X = np.linspace(0.0, 1.0, 50)[:, None]
        grid = CutpointGrid.from_data(X, 100)
        tree = Tree.root_only(grid, np.array([0.0]))
        prop = propose_birth(tree, X, cfg, np.random.default_rng(0))
        assert prop.valid
        assert prop.log_forward == pytest.approx(np.log(1.0 / 100))

    def test_birth_never_creates_empty_child(self, cfg):
        X = np.linspace(0.0, 1.0, 10)[:, None]
        grid = CutpointGrid.from_data(X, 100)
        rng = np.random.default_rng(3)
        for _ in range(200):
            tree = Tree.root_only(grid, np.array([0.0]))
            prop = propose_birth(tree, X, cfg, rng)
            if prop.valid:
                for idx in prop.new_leaf_sets:
                    assert idx.size >= cfg.min_leaf_n

    def test_birth_respects_min_leaf_n(self):
        cfg = TreePriorConfig(min_leaf_n=6)
        X = np.linspace(0.0, 1.0, 10)[:, None]
        grid = CutpointGrid.from_data(X, 100)
        rng = np.random.default_rng(3)
        # 10 points cannot split into two groups of >= 6: always invalid.
        for _ in range(50):
            prop = propose_birth(Tree.root_only(grid, np.array([0.0])), X, cfg, rng)
            assert not prop.valid

    def test_death_on_root_only_invalid(self, grid1d, cfg):
        X = np.linspace(0.0, 1.0, 50)[:, None]
        tree = Tree.root_only(grid1d, np.array([0.0]))
        prop = propose_death(tree, X, cfg, np.random.default_rng(0))
        assert not prop.valid

    def test_death_collapses_single_split_to_root(self, grid1d, cfg):
        X = np.linspace(0.0, 1.0, 50)[:, None]
        tree = Tree.root_only(grid1d, np.array([0.0]))
        prop = propose_birth(tree, X, cfg, np.random.default_rng(1))
        dead = propose_death(prop.tree, X, cfg, np.random.default_rng(2))
        assert dead.valid
        assert dead.tree.root.is_leaf
        assert dead.tree.n_leaves() == 1

    def test_birth_death_probabilities_are_symmetric(self, grid1d, cfg):
        # On the pair (1-leaf tree) <-> (2-leaf tree), the death reverse
        # probability must equal the matching birth forward probability and
        # the prior ratios must cancel.
        X = np.linspace(0.0, 1.0, 50)[:, None]
        rng = np.random.default_rng(7)
        base = Tree.root_only(grid1d, np.array([0.0]))
        birth = propose_birth(base, X, cfg, rng)
        assert birth.valid
        death = propose_death(birth.tree, X, cfg, rng)
        assert death.valid
        assert death.log_reverse == pytest.approx(birth.log_forward, rel=1e-12)
        assert death.log_forward == pytest.approx(birth.log_reverse, rel=1e-12)
        assert death.log_prior_ratio == pytest.approx(-birth.log_prior_ratio, rel=1e-12)

    def test_death_after_birth_restores_structure(self, grid1d, cfg):
        X = np.linspace(0.0, 1.0, 50)[:, None]
        rng = np.random.default_rng(9)
        base = Tree.root_only(grid1d, np.array([4.2]))
        birth = propose_birth(base, X, cfg, rng)
        death = propose_death(birth.tree, X, cfg, rng)
        assert death.tree.root.is_leaf
        # membership restored
        assert np.array_equal(death.new_leaf_sets[0], np.arange(50))


class TestPriorSampling:
    def test_prior_trees_stay_shallow(self, grid1d, cfg):
        rng = np.random.default_rng(2024)
        n_samples = 100_000
        leaves = np.empty(n_samples)
        depths = np.empty(n_samples)
        for i in range(n_samples):
            t = sample_tree_from_prior(grid1d, cfg, rng)
            leaves[i] = t.n_leaves()
            depths[i] = t.depth()
        assert 2.0 <= leaves.mean() <= 4.0
        assert depths.mean() <= 3.0


class TestSerialization:
    def test_round_trip(self, grid1d):
        tree = build_depth2_tree(grid1d)
        text = tree.encode()
        back = Tree.decode(text, grid1d)
        assert back.encode() == text
        X = np.random.default_rng(1).uniform(0, 1, size=(50, 1))
        assert np.array_equal(back.evaluate(X), tree.evaluate(X))

    def test_vector_leaves_round_trip(self, grid1d):
        tree = Tree.root_only(grid1d, np.array([0.25, -1.5]))
        back = Tree.decode(tree.encode(), grid1d)
        assert np.array_equal(back.root.value, tree.root.value)

    def test_bad_encoding_rejected(self, grid1d):
        with pytest.raises(ValueError):
            Tree.decode("X 1 2", grid1d)


class TestCutpointGrid:
    def test_interior_points_exclude_range_ends(self):
        X = np.linspace(0.0, 1.0, 11)[:, None]
        grid = CutpointGrid.from_data(X, 9)
        assert grid.cuts[0].min() > 0.0
        assert grid.cuts[0].max() < 1.0
        assert grid.cuts[0].size == 9

    def test_multidimensional(self):
        X = np.random.default_rng(0).uniform(size=(30, 3))
        grid = CutpointGrid.from_data(X, 10)
        assert grid.dim == 3
