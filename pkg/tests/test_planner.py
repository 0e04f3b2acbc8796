import itertools
import math

import numpy as np
import pytest

from scanplan import localpath, planner, synthetic
from scanplan.errors import EmptyInputError, InvalidPermutationError, SizeGuardError
from scanplan.planner import (PsoConfig, brute_force_tour, decode_keys, optimal_directions,
                              pso_optimize, pso_search, tour_cost)


def oracle_length(segs, order, reverse):
    """Tour length written out leg by leg, independent of the planner."""
    total = 0.0
    prev_exit = None
    for pid, rev in zip(order, reverse):
        a, b = segs[pid - 1]
        entry, exit_ = (b, a) if rev else (a, b)
        total += math.dist(a, b)
        if prev_exit is not None:
            total += math.dist(prev_exit, entry)
        prev_exit = exit_
    return total


def oracle_best(segs):
    U = len(segs)
    best = math.inf
    for order in itertools.permutations(range(1, U + 1)):
        for rev in itertools.product((False, True), repeat=U):
            best = min(best, oracle_length(segs, order, rev))
    return best


PARALLEL = np.array([[[0, 0, 0], [100, 0, 0]], [[0, 50, 0], [100, 50, 0]]], float)


def test_single_path_seventy_mm():
    segs = np.array([[[0, 0, 0], [70, 0, 0]]], float)
    tour = tour_cost([1], [False], segs, 50.0)
    assert tour.total_time == pytest.approx(1.4)
    assert tour.transit_times == ()
    assert tour.scan_times == pytest.approx((1.4,))


def test_parallel_pair_hand_enumeration():
    times = []
    for order in ([1, 2], [2, 1]):
        for rev in itertools.product((False, True), repeat=2):
            times.append(tour_cost(order, rev, PARALLEL, 100.0).total_time)
    assert len(times) == 8
    assert min(times) == pytest.approx((100 + 50 + 100) / 100)
    assert brute_force_tour(PARALLEL, 100.0).total_time == pytest.approx(2.5)


def test_reverse_keeps_scan_duration():
    segs = synthetic.random_segments(4, seed=1)
    a = tour_cost([1, 2, 3, 4], [False] * 4, segs, 50.0)
    b = tour_cost([1, 2, 3, 4], [False, True, False, False], segs, 50.0)
    assert a.scan_times == b.scan_times
    assert a.transit_times != b.transit_times


def test_cost_decomposition():
    segs = synthetic.random_segments(7, seed=2)
    tour = tour_cost([3, 1, 7, 2, 6, 5, 4], [True, False, False, True, True, False, True], segs, 40.0)
    assert len(tour.transit_times) == 6
    assert abs(tour.total_time - (sum(tour.scan_times) + sum(tour.transit_times))) <= 1e-9
    assert tour.length == pytest.approx(oracle_length(segs, tour.order, tour.reverse), abs=1e-9)


@pytest.mark.parametrize("order", [[1, 2, 2], [1, 2], [1, 2, 4], [0, 1, 2]])
def test_invalid_permutation(order):
    segs = synthetic.random_segments(3, seed=0)
    with pytest.raises(InvalidPermutationError):
        tour_cost(order, [False] * len(order), segs, 50.0)


def test_direction_count_mismatch():
    segs = synthetic.random_segments(3, seed=0)
    with pytest.raises(InvalidPermutationError):
        tour_cost([1, 2, 3], [False], segs, 50.0)


def test_nonpositive_speed():
    with pytest.raises(ValueError):
        tour_cost([1], [False], PARALLEL[:1], 0.0)


def test_dp_matches_exhaustive_directions():
    rng = np.random.default_rng(0)
    for trial in range(30):
        U = int(rng.integers(1, 9))
        segs = synthetic.random_segments(U, seed=100 + trial)
        order = list(rng.permutation(U) + 1)
        best = min(oracle_length(segs, order, rev)
                   for rev in itertools.product((False, True), repeat=U))
        tour = optimal_directions(order, segs, 50.0)
        assert tour.length == pytest.approx(best, rel=1e-12)
        assert tour.order == tuple(order)


def test_dp_single_path_prefers_forward():
    tour = optimal_directions([1], PARALLEL[:1], 50.0)
    assert tour.reverse == (False,)


def test_dp_collinear_chain_zero_transit():
    segs = np.array([[[10.0 * i, 0, 0], [10.0 * (i + 1), 0, 0]] for i in range(6)])
    tour = optimal_directions([1, 2, 3, 4, 5, 6], segs, 50.0)
    assert tour.reverse == (False,) * 6
    assert tour.transit_lengths == (0.0,) * 5
    assert tour.total_time == pytest.approx(60.0 / 50.0)


def test_dp_picks_reverse_when_cheaper():
    segs = np.array([[[0, 0, 0], [100, 0, 0]], [[100, 10, 0], [0, 10, 0]]], float)
    tour = optimal_directions([1, 2], segs, 1.0)
    assert tour.reverse == (False, False)
    tour = optimal_directions([2, 1], segs, 1.0)
    assert tour.length == pytest.approx(210.0)


def test_brute_force_matches_oracle():
    for seed in range(8):
        segs = synthetic.random_segments(5, seed=seed)
        assert brute_force_tour(segs, 50.0).length == pytest.approx(oracle_best(segs), rel=1e-12)


def test_brute_force_size_guard():
    with pytest.raises(SizeGuardError):
        brute_force_tour(synthetic.random_segments(11, seed=0), 50.0)


def test_brute_force_empty():
    with pytest.raises(EmptyInputError):
        brute_force_tour(np.zeros((0, 2, 3)), 50.0)


def test_brute_force_single():
    segs = np.array([[[0, 0, 0], [70, 0, 0]]], float)
    assert brute_force_tour(segs, 50.0).total_time == pytest.approx(1.4)


def test_decode_keys_ties_by_index():
    np.testing.assert_array_equal(decode_keys(np.array([0.5, 0.1, 0.5, 0.1])), [1, 3, 0, 2])
    np.testing.assert_array_equal(decode_keys(np.array([-3.0, 7.0, 0.0])), [0, 2, 1])


def test_pso_single_path():
    segs = np.array([[[0, 0, 0], [70, 0, 0]]], float)
    tour = pso_optimize(segs, 50.0, PsoConfig(iterations=5))
    assert tour.total_time == pytest.approx(1.4)
    assert tour.order == (1,)


def test_pso_empty():
    with pytest.raises(EmptyInputError):
        pso_optimize(np.zeros((0, 2, 3)), 50.0)


def test_pso_deterministic():
    segs = synthetic.random_segments(9, seed=4)
    a = pso_optimize(segs, 50.0, PsoConfig(iterations=60, seed=3))
    b = pso_optimize(segs, 50.0, PsoConfig(iterations=60, seed=3))
    assert a == b


def test_pso_history_non_increasing():
    res = pso_search(synthetic.random_segments(12, seed=5), 50.0, PsoConfig(iterations=80))
    h = np.array(res.history)
    assert len(h) == 81
    assert np.all(np.diff(h) <= 0)
    assert res.tour.length == pytest.approx(h[-1])
    assert res.evaluations == 40 * 81


def test_pso_never_beats_brute_force():
    for seed in range(5):
        segs = synthetic.random_segments(6, seed=seed)
        bf = brute_force_tour(segs, 50.0)
        ps = pso_optimize(segs, 50.0, PsoConfig(iterations=60, seed=seed))
        assert bf.total_time <= ps.total_time + 1e-12


def test_pso_with_fixed_coefficients():
    segs = synthetic.random_segments(6, seed=8)
    tour = pso_optimize(segs, 50.0, PsoConfig(iterations=100, c1=0.5, c2=0.5))
    assert sorted(tour.order) == list(range(1, 7))


def test_pso_config_validation():
    with pytest.raises(ValueError):
        PsoConfig(swarm_size=1).validate()
    with pytest.raises(ValueError):
        PsoConfig(velocity_clamp=0).validate()


def test_speed_scaling():
    segs = synthetic.random_segments(8, seed=6)
    slow = pso_optimize(segs, 50.0, PsoConfig(iterations=50, seed=2))
    fast = pso_optimize(segs, 100.0, PsoConfig(iterations=50, seed=2))
    assert slow.order == fast.order and slow.reverse == fast.reverse
    assert abs(fast.total_time * 2 - slow.total_time) <= 1e-9 * slow.total_time


def test_tour_from_local_paths():
    paths = localpath.paths_from_segments(PARALLEL)
    paths[0].id, paths[1].id = 7, 3
    tour = brute_force_tour(paths, 100.0)
    assert sorted(tour.order) == [3, 7]
    assert tour.total_time == pytest.approx(2.5)
    assert tour.directions[0] in ("forward", "reverse")
