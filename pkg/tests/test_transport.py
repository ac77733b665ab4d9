"""Revenue-to-consumption allocation: solver, bounds and flow extraction."""

import itertools
import math
import statistics

import numpy as np
import pytest

from digitrade import (
    AllocationTensor,
    ComputationError,
    HarmonizationTargets,
    IntegrityError,
    TransportProblem,
    allocate_all,
    balance,
    build_problem,
    confidence_bounds,
    cost_weights,
    extract_flows,
    greedy_allocate,
    harmonize,
    reassign_to_parent,
    solve_transport,
)
from digitrade.dataset import ConsumptionMatrix, RevenueLedger


def simple_problem(revenue, consumption, weights, factor=1.0):
    m, n = len(revenue), len(consumption)
    return TransportProblem(
        "p", 2021,
        tuple(f"O{i}" for i in range(m)), tuple(f"D{j}" for j in range(n)),
        np.asarray(revenue, dtype=float), np.asarray(consumption, dtype=float),
        np.asarray(weights, dtype=float), factor,
    )


def spanning_trees(m, n):
    """All spanning trees of the complete bipartite allocation graph."""
    cells = [(i, j) for i in range(m) for j in range(n)]
    nodes = m + n
    trees = []
    for subset in itertools.combinations(cells, nodes - 1):
        parent = list(range(nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for i, j in subset:
            ra, rb = find(i), find(m + j)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            trees.append(subset)
    return trees


def vertex_optimum(W, r, c, trees):
    """Exact optimum by enumerating every basic feasible solution.

    Each spanning tree determines one basic solution via leaf elimination;
    the optimum of a bounded linear program sits on a vertex, so the best
    feasible tree value is the true maximum.
    """
    best = -np.inf
    for tree in trees:
        x = {}
        inc = {}
        for cell in tree:
            i, j = cell
            for node in (("r", i), ("c", j)):
                inc.setdefault(node, []).append(cell)
        rem_r = list(r)
        rem_c = list(c)
        alive = set(tree)
        while alive:
            leaf = None
            for node, cells_ in inc.items():
                live = [cl for cl in cells_ if cl in alive]
                if len(live) == 1:
                    leaf = (node, live[0])
                    break
            node, cell = leaf
            i, j = cell
            q = rem_r[i] if node[0] == "r" else rem_c[j]
            x[cell] = q
            rem_r[i] -= q
            rem_c[j] -= q
            alive.discard(cell)
        if min(x.values()) < -1e-9:
            continue  # this basis is infeasible
        best = max(best, sum(W[i, j] * v for (i, j), v in x.items()))
    return best


class TestCostWeights:
    def test_inverse_distance_with_domestic_floor(self):
        d = np.array([[0.0, 6000.0], [250.0, 0.5]])
        w = cost_weights(d)
        np.testing.assert_allclose(
            w, [[1.0, 1.0 / 6000.0], [1.0 / 250.0, 1.0]]
        )

    def test_custom_floor(self):
        w = cost_weights(np.array([5.0, 20.0]), domestic_floor_km=10.0)
        np.testing.assert_allclose(w, [0.1, 0.05])

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            cost_weights(np.ones(2), domestic_floor_km=0.0)
        with pytest.raises(ValueError, match="finite"):
            cost_weights(np.array([1.0, -2.0]))
        with pytest.raises(ValueError, match="finite"):
            cost_weights(np.array([np.inf]))


class TestProblemConstruction:
    def test_axis_shape_checks(self):
        with pytest.raises(IntegrityError, match="marginal vectors"):
            TransportProblem(
                "p", 2021, ("A",), ("B",),
                np.ones(2), np.ones(1), np.ones((1, 1)),
            )
        with pytest.raises(IntegrityError, match="weight matrix"):
            TransportProblem(
                "p", 2021, ("A",), ("B",),
                np.ones(1), np.ones(1), np.ones((2, 2)),
            )

    def test_sign_checks(self):
        with pytest.raises(IntegrityError, match="non-negative"):
            simple_problem([-1.0], [1.0], np.ones((1, 1)))
        with pytest.raises(IntegrityError, match="positive"):
            simple_problem([1.0], [1.0], np.zeros((1, 1)))

    def test_balanced_property(self):
        assert simple_problem([2.0, 3.0], [5.0], np.ones((2, 1))).balanced
        assert not simple_problem([2.0], [5.0], np.ones((1, 1))).balanced

    def test_build_uses_only_positive_marginals(self, two_country):
        cons = ConsumptionMatrix({
            ("B001", "AAA", 2021): 3.5e8,
            ("B001", "BBB", 2021): 0.0,
        })
        problem = build_problem(two_country, cons, "B001", 2021)
        assert problem.origins == ("AAA",)
        assert problem.dests == ("AAA",)
        np.testing.assert_allclose(problem.revenue, [5e8])
        np.testing.assert_allclose(problem.consumption, [3.5e8])

    def test_build_weights_from_dyad_distances(self, two_country):
        problem = build_problem(two_country, two_country.consumption, "B001", 2021)
        assert problem.origins == ("AAA",)
        assert problem.dests == ("AAA", "BBB")
        np.testing.assert_allclose(problem.weights, [[1.0, 1.0 / 6000.0]])

    def test_build_accepts_ledger_override(self, two_country):
        ledger = RevenueLedger(
            {("F900", "B001", 2021): 7e8}, {"F900": "BBB"}
        )
        problem = build_problem(
            two_country, two_country.consumption, "B001", 2021, ledger=ledger
        )
        assert problem.origins == ("BBB",)
        np.testing.assert_allclose(problem.revenue, [7e8])


class TestBalance:
    def test_consumption_absorbs_mismatch(self):
        p = simple_problem([6.0, 6.0], [2.0, 2.0, 2.0], np.ones((2, 3)), None)
        b = balance(p)
        assert b.balance_factor == pytest.approx(2.0)
        np.testing.assert_allclose(b.consumption, [4.0, 4.0, 4.0])
        np.testing.assert_allclose(b.revenue, p.revenue)
        assert b.balanced

    def test_zero_everything_is_fine(self):
        p = simple_problem([], [], np.zeros((0, 0)), None)
        assert balance(p).balance_factor == 1.0

    def test_revenue_without_consumption_fails(self):
        p = simple_problem([5.0], [], np.zeros((1, 0)), None)
        with pytest.raises(ComputationError, match="no consumption"):
            balance(p)

    def test_consumption_without_revenue_fails(self):
        p = simple_problem([], [5.0], np.zeros((0, 1)), None)
        with pytest.raises(ComputationError, match="no revenue"):
            balance(p)


class TestSolver:
    def test_requires_balancing_first(self):
        p = simple_problem([2.0], [2.0], np.ones((1, 1)), factor=None)
        with pytest.raises(ComputationError, match="call balance"):
            solve_transport(p)
        with pytest.raises(ComputationError, match="call balance"):
            greedy_allocate(p)

    def test_two_by_two_keeps_revenue_at_home(self):
        # origins hold (10, 5), destinations absorb (12, 3); domestic
        # weight 1.0 dwarfs the 0.01 cross weight, so the only optimal
        # plan is 10 at home, 3 at home, and 2 shipped across
        problem = TransportProblem(
            "p", 2021, ("AAA", "BBB"), ("AAA", "BBB"),
            np.array([10.0, 5.0]), np.array([12.0, 3.0]),
            np.array([[1.0, 0.01], [0.01, 1.0]]),
        )
        sol = solve_transport(balance(problem))
        np.testing.assert_allclose(sol.matrix, [[10.0, 0.0], [2.0, 3.0]])
        assert sol.objective == pytest.approx(10.0 + 3.0 + 2.0 * 0.01)
        assert sol.balance_factor == pytest.approx(1.0)

    def test_solution_is_a_basic_feasible_plan(self):
        rng = np.random.default_rng(13)
        r = rng.integers(1, 50, size=4).astype(float)
        c = rng.integers(1, 50, size=3).astype(float)
        c *= r.sum() / c.sum()
        sol = solve_transport(
            simple_problem(r, c, rng.uniform(0.01, 1.0, size=(4, 3)))
        )
        np.testing.assert_allclose(sol.matrix.sum(axis=1), r, rtol=1e-12)
        np.testing.assert_allclose(sol.matrix.sum(axis=0), c, rtol=1e-12)
        assert (sol.matrix >= 0).all()
        assert int((sol.matrix > 0).sum()) <= 4 + 3 - 1

    def test_matches_vertex_enumeration(self):
        # the optimum of a bounded linear program is attained at a basic
        # solution, so exhaustively pricing every spanning-tree basis gives
        # an independent certificate of optimality
        rng = np.random.default_rng(7)
        tree_cache = {}
        for trial in range(200):
            m = int(rng.integers(1, 5))
            n = int(rng.integers(1, 5))
            if (m, n) not in tree_cache:
                tree_cache[(m, n)] = spanning_trees(m, n)
            r = rng.integers(1, 101, size=m).astype(float)
            c = rng.integers(1, 101, size=n).astype(float)
            c *= r.sum() / c.sum()
            W = rng.uniform(0.001, 1.0, size=(m, n))
            sol = solve_transport(simple_problem(r, c, W))
            ref = vertex_optimum(W, r, c, tree_cache[(m, n)])
            assert sol.objective == pytest.approx(ref, rel=1e-9), trial
            grd = greedy_allocate(simple_problem(r, c, W))
            assert grd.objective <= sol.objective * (1 + 1e-9) + 1e-12, trial
            assert int((sol.matrix > 0).sum()) <= m + n - 1, trial

    def test_degenerate_zero_marginals(self):
        sol = solve_transport(
            simple_problem([10.0, 0.0], [5.0, 5.0], np.ones((2, 2)))
        )
        np.testing.assert_allclose(sol.matrix.sum(axis=1), [10.0, 0.0])
        np.testing.assert_allclose(sol.matrix.sum(axis=0), [5.0, 5.0])

    def test_empty_problem(self):
        sol = solve_transport(simple_problem([], [], np.zeros((0, 0))))
        assert sol.matrix.shape == (0, 0)
        assert sol.objective == 0.0

    def test_greedy_can_be_beaten(self):
        # greedy serves the larger destination first from its best origin,
        # starving the pairing a global view would keep: optimal routes
        # origin 0 to destination 1 instead
        W = np.array([[0.6, 0.9], [0.5, 0.1]])
        r = np.array([10.0, 10.0])
        c = np.array([11.0, 9.0])
        sol = solve_transport(simple_problem(r, c, W))
        grd = greedy_allocate(simple_problem(r, c, W))
        assert sol.objective == pytest.approx(13.7)
        assert grd.objective == pytest.approx(7.4)


class TestAllocationTensor:
    def setup_method(self):
        self.tensor = AllocationTensor(
            "b", 2021, ("AAA", "BBB"), ("AAA", "CCC"),
            np.array([[6.0, 4.0], [0.0, 5.0]]), 1.0, 0.0,
        )

    def test_triplets_skip_zero_cells(self):
        assert list(self.tensor.triplets()) == [
            ("AAA", "AAA", 6.0), ("AAA", "CCC", 4.0), ("BBB", "CCC", 5.0),
        ]

    def test_totals_and_views(self):
        assert self.tensor.origin_totals() == {"AAA": 10.0, "BBB": 5.0}
        assert self.tensor.dest_totals() == {"AAA": 6.0, "CCC": 9.0}
        assert self.tensor.domestic("AAA") == 6.0
        assert self.tensor.domestic("BBB") == 0.0  # not on the dest axis
        assert self.tensor.exports("AAA") == 4.0
        assert self.tensor.exports("BBB") == 5.0
        assert self.tensor.exports("ZZZ") == 0.0


class TestAllocateAll:
    def test_two_country_allocation_is_exact(self, two_country):
        tensors = allocate_all(two_country, two_country.consumption)
        assert len(tensors) == 1
        t = tensors[0]
        assert (t.product, t.year) == ("B001", 2021)
        assert t.origins == ("AAA",)
        assert t.dests == ("AAA", "BBB")
        # observed consumption already sums to revenue, so no rescaling
        assert t.balance_factor == pytest.approx(1.0)
        np.testing.assert_allclose(t.matrix, [[3.5e8, 1.5e8]])

    def test_world_tensors_sorted_and_feasible(self, world, world_harmonized):
        tensors = allocate_all(world, world_harmonized)
        keys = [(t.year, t.product) for t in tensors]
        assert keys == sorted(keys)
        assert {y for y, _ in keys} == {2020, 2021}
        for t in tensors:
            assert (t.matrix >= 0).all()
            total = sum(t.origin_totals().values())
            assert total == pytest.approx(
                world.revenue.world_revenue(t.product, t.year), rel=1e-9
            )

    def test_year_filter(self, world, world_harmonized):
        tensors = allocate_all(world, world_harmonized, years=[2020])
        assert {t.year for t in tensors} == {2020}

    def test_parallel_matches_sequential(self, world, world_harmonized):
        seq = allocate_all(world, world_harmonized, years=[2021], jobs=1)
        par = allocate_all(world, world_harmonized, years=[2021], jobs=2)
        assert len(seq) == len(par)
        for a, b in zip(seq, par):
            assert (a.product, a.year, a.origins, a.dests) == (
                b.product, b.year, b.origins, b.dests
            )
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_parent_ledger_merges_origins(self, world, world_harmonized):
        parent = reassign_to_parent(world)
        direct = allocate_all(world, world_harmonized, years=[2021])
        merged = allocate_all(
            world, world_harmonized, years=[2021], ledger=parent
        )
        origins_direct = {o for t in direct for o in t.origins}
        origins_merged = {o for t in merged for o in t.origins}
        assert origins_merged < origins_direct


class TestReassignToParent:
    def test_world_totals_bit_identical(self, world):
        ledger = reassign_to_parent(world)
        for brand in world.brands:
            for year in world.years:
                assert ledger.world_revenue(brand, year) == (
                    world.revenue.world_revenue(brand, year)
                )

    def test_revenue_booked_at_parent_country(self, world):
        ledger = reassign_to_parent(world)
        for (firm, brand, _), usd in ledger.items():
            assert firm == world.brands[brand].parent_firm_id
            assert usd != 0.0


class TestExtractFlows:
    def test_domestic_cells_dropped(self, two_country):
        tensors = allocate_all(two_country, two_country.consumption)
        flows = extract_flows(tensors, two_country)
        assert len(flows) == 1
        row = flows[0]
        assert (row.year, row.brand, row.origin, row.dest) == (
            2021, "B001", "AAA", "BBB"
        )
        assert row.sector == "Cloud Computing"
        assert row.value_usd == pytest.approx(1.5e8)
        assert row.lower_usd is None and row.upper_usd is None

    def test_sorted_output(self, world, world_harmonized):
        tensors = allocate_all(world, world_harmonized)
        flows = extract_flows(tensors, world)
        keys = [(r.year, r.brand, r.origin, r.dest) for r in flows]
        assert keys == sorted(keys)
        assert all(r.origin != r.dest for r in flows)
        assert all(r.value_usd > 0 for r in flows)


def share_tensor(product, origins, dests, matrix):
    return AllocationTensor(
        product, 2021, origins, dests, np.asarray(matrix, dtype=float), 1.0, 0.0
    )


class TestConfidenceBounds:
    # four products allocated from AAA with domestic shares .6/.5/.7/.6
    def make_tensors(self):
        return [
            share_tensor("B0000", ("AAA",), ("AAA", "AAB"), [[6.0, 4.0]]),
            share_tensor("B0001", ("AAA",), ("AAA", "AAB"), [[5.0, 5.0]]),
            share_tensor("B0002", ("AAA",), ("AAA", "AAB"), [[7.0, 3.0]]),
            share_tensor("B0003", ("AAA",), ("AAA", "AAB"), [[6.0, 4.0]]),
        ]

    def make_ledger(self, firms=("F1", "F2", "F3", "F4")):
        entries = {
            (firm, brand, 2021): 10.0
            for firm, brand in zip(firms, ("B0000", "B0001", "B0002", "B0003"))
        }
        return RevenueLedger(entries, {f: "AAA" for f in firms})

    def test_pooled_interval_by_hand(self, world):
        report = confidence_bounds(
            self.make_tensors(), world, ledger=self.make_ledger()
        )
        shares = [0.6, 0.5, 0.7, 0.6]
        mean = sum(shares) / 4
        sd = statistics.stdev(shares)
        half = 1.959963984540054 * sd / math.sqrt(4)
        assert report.n_observations == 4
        assert report.share_mean == pytest.approx(mean)
        assert report.share_lower == pytest.approx(mean - half, abs=1e-12)
        assert report.share_upper == pytest.approx(mean + half, abs=1e-12)

    def test_rows_scale_the_point_allocation(self, world):
        report = confidence_bounds(
            self.make_tensors(), world, ledger=self.make_ledger()
        )
        row = next(r for r in report.rows if r.brand == "B0000")
        total, point = 10.0, 4.0
        assert row.value_usd == pytest.approx(point)
        assert row.lower_usd == pytest.approx((1.0 - report.share_upper) * total)
        assert row.upper_usd == pytest.approx((1.0 - report.share_lower) * total)

    def test_bounds_bracket_the_point(self, world, world_harmonized):
        tensors = allocate_all(world, world_harmonized, years=[2021])
        report = confidence_bounds(tensors, world)
        assert report.rows
        for row in report.rows:
            assert 0.0 <= row.lower_usd <= row.value_usd <= row.upper_usd

    def test_interval_clamped_to_unit_range(self, world):
        # extreme shares (all domestic) keep the interval inside [0, 1]
        tensors = [
            share_tensor("B0000", ("AAA",), ("AAA", "AAB"), [[10.0, 1e-9]]),
            share_tensor("B0001", ("AAA",), ("AAA", "AAB"), [[1.0, 9.0]]),
            share_tensor("B0002", ("AAA",), ("AAA", "AAB"), [[10.0, 1e-9]]),
        ]
        entries = {
            ("F1", "B0000", 2021): 1.0,
            ("F2", "B0001", 2021): 1.0,
            ("F3", "B0002", 2021): 1.0,
        }
        ledger = RevenueLedger(entries, {f: "AAA" for f in ("F1", "F2", "F3")})
        report = confidence_bounds(tensors, world, ledger=ledger)
        assert 0.0 <= report.share_lower <= report.share_upper <= 1.0

    def test_single_observation_degenerates_with_warning(self, world):
        tensors = self.make_tensors()[:1]
        ledger = RevenueLedger({("F1", "B0000", 2021): 10.0}, {"F1": "AAA"})
        with pytest.warns(UserWarning, match="fewer than two"):
            report = confidence_bounds(tensors, world, ledger=ledger)
        assert report.share_lower == report.share_mean == report.share_upper

    def test_per_firm_single_firm_matches_pooled(self, world):
        ledger = self.make_ledger(firms=("F1", "F1", "F1", "F1"))
        pooled = confidence_bounds(self.make_tensors(), world, ledger=ledger)
        grouped = confidence_bounds(
            self.make_tensors(), world, per_firm=True, ledger=ledger
        )
        for a, b in zip(pooled.rows, grouped.rows):
            assert a.lower_usd == pytest.approx(b.lower_usd)
            assert a.upper_usd == pytest.approx(b.upper_usd)

    def test_per_firm_warns_on_singletons(self, world):
        with pytest.warns(UserWarning, match="single observation"):
            confidence_bounds(
                self.make_tensors(), world, per_firm=True,
                ledger=self.make_ledger(),
            )

    def test_no_observations_is_an_error(self, world):
        ledger = RevenueLedger({("F1", "B0009", 2021): 5.0}, {"F1": "AAA"})
        with pytest.raises(ComputationError, match="no domestic-share"):
            confidence_bounds(self.make_tensors()[:1], world, ledger=ledger)

    def test_level_validation(self, world):
        with pytest.raises(ValueError, match="level"):
            confidence_bounds(self.make_tensors(), world, level=1.0,
                              ledger=self.make_ledger())
