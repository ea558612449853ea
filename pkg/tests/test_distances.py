"""Set-to-set distance tests with brute-force oracles."""

import itertools

import numpy as np
import pytest

from dpdist.distances import (
    chamfer_distance,
    earth_movers_distance,
    earth_movers_distance_normalized,
    hausdorff_distance,
    nn_distances,
    partial_hausdorff_distance,
)


def random_pair(rng, n_a=None, n_b=None):
    n_a = n_a or int(rng.integers(1, 40))
    n_b = n_b or int(rng.integers(1, 40))
    return rng.uniform(-1, 1, (n_a, 3)), rng.uniform(-1, 1, (n_b, 3))


def brute_nn(a, b):
    return np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).min(axis=1)


def permutation_emd(a, b):
    best = np.inf
    for perm in itertools.permutations(range(len(b))):
        best = min(best, np.linalg.norm(a - b[list(perm)], axis=1).sum())
    return best


class TestNnDistances:
    def test_hand_case(self):
        d = nn_distances([[0, 0, 0]], [[1, 0, 0], [3, 0, 0]])
        np.testing.assert_allclose(d, [1.0])

    def test_self_is_zero(self):
        a = np.random.default_rng(0).uniform(-1, 1, (30, 3))
        assert nn_distances(a, a).max() == 0.0

    def test_tree_matches_brute(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = random_pair(rng)
            tree = nn_distances(a, b, method="tree")
            brute = nn_distances(a, b, method="brute")
            np.testing.assert_allclose(tree, brute, atol=1e-9)
            np.testing.assert_allclose(brute, brute_nn(a, b), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nn_distances(np.zeros((0, 3)), [[0, 0, 0]])

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            nn_distances([[0, 0, 0]], [[0, 0, 0]], method="fft")


class TestHausdorff:
    def test_single_points(self):
        assert hausdorff_distance([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(1.0)

    def test_hand_case(self):
        assert hausdorff_distance([[0, 0, 0], [2, 0, 0]], [[0, 0, 0]]) == pytest.approx(2.0)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_pair(rng)
            assert hausdorff_distance(a, b) == hausdorff_distance(b, a)

    def test_identity(self):
        a = np.random.default_rng(3).uniform(-1, 1, (10, 3))
        assert hausdorff_distance(a, a) == 0.0


class TestChamfer:
    def test_single_points_squared(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(2.0)

    def test_hand_case(self):
        # (0 + 4)/2 from the first direction, 0 from the second.
        assert chamfer_distance([[0, 0, 0], [2, 0, 0]], [[0, 0, 0]]) == pytest.approx(2.0)

    def test_identity(self):
        a = np.random.default_rng(4).uniform(-1, 1, (25, 3))
        assert chamfer_distance(a, a) == 0.0

    def test_exact_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = random_pair(rng)
            assert chamfer_distance(a, b) == chamfer_distance(b, a)

    def test_matches_brute_force_definition(self):
        rng = np.random.default_rng(6)
        a, b = random_pair(rng, 17, 23)
        expected = (brute_nn(a, b) ** 2).mean() + (brute_nn(b, a) ** 2).mean()
        assert chamfer_distance(a, b) == pytest.approx(expected, abs=1e-12)


class TestPartialHausdorff:
    def test_half_fraction_hand_case(self):
        # Directed profiles [0, 2] and [0]; rank-1 quantiles are both 0.
        d = partial_hausdorff_distance([[0, 0, 0], [2, 0, 0]], [[0, 0, 0]], 0.5)
        assert d == 0.0

    def test_full_fraction_equals_hausdorff(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = random_pair(rng)
            assert partial_hausdorff_distance(a, b, 1.0) == hausdorff_distance(a, b)

    def test_monotone_in_fraction(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            a, b = random_pair(rng)
            assert partial_hausdorff_distance(a, b, 0.5) <= partial_hausdorff_distance(a, b, 0.9)

    def test_fraction_bounds(self):
        a = [[0, 0, 0]]
        for f in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                partial_hausdorff_distance(a, a, f)

    def test_nearest_rank_on_known_profile(self):
        # Points on a line so the directed profile is [0, 1, 2, 3]; against a
        # superset the reverse direction is all zeros.
        a = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        b = np.array([[0, 0, 0]], dtype=float)
        # profile sorted: [0,1,2,3]; ranks: f=0.25 -> 1st -> 0; 0.5 -> 2nd -> 1;
        # 0.75 -> 3rd -> 2; 1.0 -> 4th -> 3.
        for f, want in [(0.25, 0.0), (0.5, 1.0), (0.75, 2.0), (1.0, 3.0)]:
            assert partial_hausdorff_distance(a, b, f) == pytest.approx(want, abs=1e-12)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a, b = random_pair(rng)
            assert partial_hausdorff_distance(a, b, 0.7) == partial_hausdorff_distance(b, a, 0.7)


class TestEmd:
    def test_identity(self):
        a = np.random.default_rng(10).uniform(-1, 1, (12, 3))
        assert earth_movers_distance(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_rigid_shift(self):
        a = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        b = a + np.array([0, 1, 0])
        assert earth_movers_distance(a, b) == pytest.approx(2.0, abs=1e-12)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            earth_movers_distance(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_matches_permutation_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            a = rng.uniform(-1, 1, (n, 3))
            b = rng.uniform(-1, 1, (n, 3))
            assert earth_movers_distance(a, b) == pytest.approx(permutation_emd(a, b), abs=1e-9)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(2, 20))
            a = rng.uniform(-1, 1, (n, 3))
            b = rng.uniform(-1, 1, (n, 3))
            assert earth_movers_distance(a, b) == earth_movers_distance(b, a)

    def test_normalized_accessor(self):
        rng = np.random.default_rng(13)
        a = rng.uniform(-1, 1, (8, 3))
        b = rng.uniform(-1, 1, (8, 3))
        assert earth_movers_distance_normalized(a, b) == pytest.approx(
            earth_movers_distance(a, b) / 8, abs=1e-12
        )

    def test_crossing_pairs_prefer_uncrossed(self):
        # Two clouds where the identity matching is suboptimal.
        a = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        b = np.array([[1.1, 0, 0], [-0.1, 0, 0]], dtype=float)
        assert earth_movers_distance(a, b) == pytest.approx(0.2, abs=1e-12)
