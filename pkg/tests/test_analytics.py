"""Closed-form laws, accumulation/covering combinatorics, and G-moments."""

import json
import math

import numpy as np
import pytest

import dwtree as dw
from dwtree import _kernels as k
from dwtree.weights import base_log_table


def _branching_counts(spec, t_max, k_report, samples, seed, node_cap=100_000):
    logw = base_log_table(spec, 64)
    counts = np.zeros((samples, k_report + 1), dtype=np.int64)
    flags = np.zeros(samples, dtype=np.int64)
    k.branching_level_counts_many(
        logw, t_max, node_cap, k_report, samples, np.uint64(seed), 0, counts, flags
    )
    return counts, flags


def _sim_profiles(spec, n, streams, seed=42):
    return [
        [int(c) for c in dw.grow_profile(spec, n, seed, stream=s).profile]
        for s in streams
    ]


class TestExpectedLevelCount:
    def test_root_level_always_one(self):
        for spec in (dw.constant(1.0), dw.factorial_power(1.0), dw.polynomial(2.0)):
            for t in (0.0, 1.0, 7.3):
                assert dw.expected_level_count(spec, 0, t) == 1.0

    def test_frozen_small_cases(self):
        assert dw.expected_level_count(dw.constant(1.0), 2, 1.0) == pytest.approx(
            0.5, rel=1e-12
        )
        # geometric mean of (1, 2) is sqrt(2); (1 * sqrt(2))^2 / 2! = 1
        assert dw.expected_level_count(dw.exponential(2.0), 2, 1.0) == pytest.approx(
            1.0, rel=1e-12
        )
        # factorial weights: ell_4^4 = 1*1*2*6 = 12, so 1.3^4 * 12 / 4! = 1.3^4 / 2
        assert dw.expected_level_count(
            dw.factorial_power(1.0), 4, 1.3
        ) == pytest.approx(1.3**4 / 2.0, rel=1e-12)

    def test_zero_time_empties_positive_depths(self):
        for kk in (1, 2, 9):
            assert dw.expected_level_count(dw.constant(1.0), kk, 0.0) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError, match="integer"):
            dw.expected_level_count(dw.constant(1.0), -1, 1.0)
        with pytest.raises(ValueError, match="integer"):
            dw.expected_level_count(dw.constant(1.0), True, 1.0)
        with pytest.raises(ValueError, match=">= 0"):
            dw.expected_level_count(dw.constant(1.0), 2, -0.5)

    def test_matches_branching_means(self):
        # dual route: simulated level counts against the closed form
        cases = [
            (dw.constant(1.0), 1.5, (1, 2, 3)),
            (dw.polynomial(1.0), 1.0, (1, 2)),
        ]
        samples = 100_000
        for spec, t, ks in cases:
            counts, flags = _branching_counts(spec, t, max(ks), samples, seed=909)
            assert flags.sum() <= samples // 1000
            for kk in ks:
                want = dw.expected_level_count(spec, kk, t)
                got = counts[:, kk].mean()
                se = counts[:, kk].std() / math.sqrt(samples)
                assert abs(got - want) <= 3.0 * se, (
                    f"{spec.family} k={kk}: mean {got} vs {want} (se {se})"
                )


class TestMarkovDepthBound:
    def test_frozen_uniform_depth_ten(self):
        exact, loose = dw.markov_depth_bound(dw.constant(1.0), 10, 1.0)
        assert exact == pytest.approx(1.0 / math.factorial(10), rel=1e-12)
        assert loose == pytest.approx((math.e / 10.0) ** 10, rel=1e-12)

    def test_zero_time_is_zero(self):
        assert dw.markov_depth_bound(dw.constant(1.0), 1, 0.0) == (0.0, 0.0)
        assert dw.markov_depth_bound(dw.factorial_power(1.0), 5, 0.0) == (0.0, 0.0)

    def test_exact_never_exceeds_loose(self):
        specs = (dw.constant(0.7), dw.exponential(2.0), dw.factorial_power(1.0))
        for spec in specs:
            for kk in range(1, 13):
                for t in (0.1, 1.0, 3.7):
                    exact, loose = dw.markov_depth_bound(spec, kk, t)
                    assert exact <= loose

    def test_bounds_first_passage_probability(self):
        # MC: P(N_4(1) >= 1) for constant weights must respect the bound
        samples = 20_000
        counts, flags = _branching_counts(dw.constant(1.0), 1.0, 4, samples, seed=55)
        assert flags.sum() == 0
        p_hat = float((counts[:, 4] >= 1).mean())
        exact, _ = dw.markov_depth_bound(dw.constant(1.0), 4, 1.0)
        se = math.sqrt(p_hat * (1.0 - p_hat) / samples)
        assert p_hat <= exact + 3.0 * se

    def test_validation(self):
        with pytest.raises(ValueError, match="integer"):
            dw.markov_depth_bound(dw.constant(1.0), 0, 1.0)
        with pytest.raises(ValueError, match=">= 0"):
            dw.markov_depth_bound(dw.constant(1.0), 3, -1.0)


class TestFindAccumulations:
    def test_path_profile_every_depth(self):
        events = dw.find_accumulations([1, 1, 1, 1, 1], dw.factorial_power(1.0))
        assert [(e.r, e.s) for e in events] == [(1, 1), (2, 1), (3, 1), (4, 1)]
        for e in events:
            assert e.window >= 1

    def test_injected_window_hand_case(self):
        events = dw.find_accumulations([1, 2, 3], dw.factorial_power(1.0), psi_fn=lambda r: 1)
        assert [(e.r, e.s, e.window) for e in events] == [(2, 3, 1)]

    def test_global_argmax_always_detected(self):
        for spec in (dw.factorial_power(1.0), dw.exponential(2.0)):
            for prof in _sim_profiles(spec, 300, range(10)):
                events = {e.r for e in dw.find_accumulations(prof, spec)}
                peak = max(prof)
                for r in range(1, len(prof)):
                    if prof[r] == peak:
                        assert r in events, f"argmax depth {r} missing ({spec.family})"

    def test_events_recheck_window(self):
        spec = dw.exponential(2.0)
        for prof in _sim_profiles(spec, 500, range(3), seed=7):
            for e in dw.find_accumulations(prof, spec):
                assert prof[e.r] == e.s >= 1
                assert prof[e.r - 1] <= e.s
                for i in range(1, e.window + 1):
                    n_i = prof[e.r + i] if e.r + i < len(prof) else 0
                    assert n_i <= e.s

    def test_unbounded_window_is_an_error(self):
        with pytest.raises(dw.ConfigError, match="unbounded at occupied depth 1"):
            dw.find_accumulations([1, 2, 1], dw.constant(1.0))

    def test_profile_validation(self):
        spec = dw.factorial_power(1.0)
        with pytest.raises(ValueError, match="non-empty"):
            dw.find_accumulations([], spec)
        with pytest.raises(ValueError, match="N_0 must be 1"):
            dw.find_accumulations([2, 1], spec)
        with pytest.raises(ValueError, match="positive integers"):
            dw.find_accumulations([1, 0, 1], spec)
        with pytest.raises(ValueError, match="positive integers"):
            dw.find_accumulations([1, 1.5], spec)

    def test_csv_shape(self):
        events = dw.find_accumulations([1, 1, 1], dw.factorial_power(1.0))
        text = dw.accumulations_to_csv(events)
        lines = text.strip().split("\n")
        assert lines[0] == "r,s,rprime"
        assert lines[1:] == ["1,1,1", "2,1,2"]


class TestCoveringWalk:
    SPIKE = [1, 1, 5, 1, 1, 1, 1, 1, 1]

    def test_accumulation_returns_itself(self):
        assert dw.covering_walk(self.SPIKE, dw.factorial_power(1.0), 2, psi_fn=lambda r: 2) == 2

    def test_path_profile_stays_put(self):
        spec = dw.factorial_power(1.0)
        for r in range(5):
            assert dw.covering_walk([1, 1, 1, 1, 1], spec, r) == r

    def test_hand_walk_from_root(self):
        assert dw.covering_walk(self.SPIKE, dw.factorial_power(1.0), 0, psi_fn=lambda r: 2) == 2

    def test_hand_walk_staircase(self):
        # 0 -> 1 -> 2 -> 3 -> 4, one hop per strictly larger neighbour
        prof = [1, 2, 3, 4, 5, 1]
        assert dw.covering_walk(prof, dw.factorial_power(1.0), 0, psi_fn=lambda r: 1) == 4

    def test_tie_takes_smallest_index(self):
        # both depth 1 and depth 3 hold the maximum; the hop from 2 picks 1
        prof = [1, 3, 1, 3, 1]
        assert dw.covering_walk(prof, dw.factorial_power(1.0), 2, psi_fn=lambda r: 2) == 1

    def test_walk_soundness_on_simulated_profiles(self):
        for spec in (dw.factorial_power(1.0), dw.exponential(2.0)):
            for prof in _sim_profiles(spec, 400, range(5), seed=11):
                d = len(prof) - 1
                max_psi = max(dw.psi(spec, r) for r in range(1, d + 1))
                assert math.isfinite(max_psi)
                for r in range(d + 1):
                    rp = dw.covering_walk(prof, spec, r)
                    assert prof[r] <= prof[rp]
                    assert abs(rp - r) <= max_psi * (prof[rp] - prof[r])

    def test_validation(self):
        spec = dw.factorial_power(1.0)
        with pytest.raises(ValueError, match="<= max depth"):
            dw.covering_walk([1, 1], spec, 5)
        with pytest.raises(ValueError, match="integer"):
            dw.covering_walk([1, 1], spec, -1, psi_fn=lambda r: 1)
        with pytest.raises(dw.ConfigError, match="unbounded"):
            dw.covering_walk([1, 2, 1], dw.constant(1.0), 1)


class TestCoverMap:
    def test_path_profile_full_mass(self):
        cm = dw.cover_map([1, 1, 1, 1, 1], dw.factorial_power(1.0), 4)
        assert cm.cover_mass == 5
        assert cm.assignment == {r: r for r in range(5)}
        assert all(cm.covered[r] == (r,) for r in range(5))

    def test_frozen_spike(self):
        cm = dw.cover_map(TestCoveringWalk.SPIKE, dw.factorial_power(1.0), 2, psi_fn=lambda r: 2)
        assert cm.assignment[0] == cm.assignment[1] == cm.assignment[3] == 2
        assert cm.covered[2] == (0, 1, 2, 3)
        assert cm.cover_mass == 8  # depths 0..3 hold 1+1+5+1 vertices

    def test_full_prefix_covers_everything(self):
        spec = dw.exponential(2.0)
        for prof in _sim_profiles(spec, 250, range(4), seed=3):
            cm = dw.cover_map(prof, spec, len(prof) - 1)
            assert cm.cover_mass == sum(prof)
            assert sorted(cm.assignment) == list(range(len(prof)))

    def test_cover_accounting_bound(self):
        # each destination with count s covers at most 2*maxPsi*s + 1 depths
        for spec in (dw.factorial_power(1.0), dw.exponential(2.0)):
            for prof in _sim_profiles(spec, 400, range(4), seed=29):
                d = len(prof) - 1
                max_psi = max(dw.psi(spec, r) for r in range(1, d + 1))
                cm = dw.cover_map(prof, spec, d)
                for rp, covered in cm.covered.items():
                    assert len(covered) <= 2 * max_psi * prof[rp] + 1
                    for r in covered:
                        assert prof[r] <= prof[rp]

    def test_csv_round_trip(self):
        cm = dw.cover_map(TestCoveringWalk.SPIKE, dw.factorial_power(1.0), 2, psi_fn=lambda r: 2)
        lines = cm.to_csv().strip().split("\n")
        assert lines[0] == "r,s,rprime"
        rows = [tuple(int(x) for x in ln.split(",")) for ln in lines[1:]]
        assert len(rows) == len(cm.profile)
        for r, s, rp in rows:
            assert s == cm.profile[r]
            assert rp == cm.assignment[r]

    def test_validation(self):
        with pytest.raises(ValueError, match="<= max depth"):
            dw.cover_map([1, 1], dw.factorial_power(1.0), 9)


class TestAValue:
    def test_order_zero_is_one_for_any_family(self):
        for spec in (dw.constant(1.0), dw.polynomial(1.0), dw.factorial_power(1.0)):
            assert dw.a_value(spec, 4, 0) == 1.0

    def test_frozen_factorial_tail(self):
        # A_{2,1} = sum_{j>=2} 2!/j! = 2(e - 2)
        assert dw.a_value(dw.factorial_power(1.0), 2, 1) == pytest.approx(
            2.0 * (math.e - 2.0), rel=1e-12
        )

    def test_at_least_one(self):
        for spec in (dw.factorial_power(1.0), dw.exponential(3.0), dw.super_exp(1.5)):
            for kk in (1, 2, 5):
                for ell in (1, 2, 3):
                    assert dw.a_value(spec, kk, ell) >= 1.0

    def test_recursion_unrolls_exactly(self):
        # one unrolling at the same truncation reproduces the DP bitwise;
        # tol is loosened because the certificate concerns discarded mass,
        # which both sides share -- rows near the cap would trip the default
        spec = dw.factorial_power(1.0)
        j_cap = 25
        lw = base_log_table(spec, j_cap + 2)
        for kk, ell in ((2, 3), (1, 2), (4, 1)):
            acc = 0.0
            for j in range(kk, j_cap + 1):
                coef = math.exp(ell * (lw[kk] - lw[j]))
                acc += coef * dw.a_value(spec, j, ell - 1, j_cap=j_cap, tol=1.0)
            assert acc == dw.a_value(spec, kk, ell, j_cap=j_cap, tol=1.0)

    def test_slow_families_are_rejected(self):
        with pytest.raises(dw.ToleranceError, match="not below 1/2"):
            dw.a_value(dw.constant(1.0), 1, 1)
        with pytest.raises(dw.ToleranceError, match="not below 1/2"):
            dw.a_value(dw.polynomial(2.0), 1, 2)

    def test_unreachable_tolerance(self):
        with pytest.raises(dw.ToleranceError, match="exceeds tol"):
            dw.a_value(dw.factorial_power(1.0), 2, 1, j_cap=3, tol=1e-30)

    def test_validation(self):
        spec = dw.factorial_power(1.0)
        with pytest.raises(ValueError, match="ell"):
            dw.a_value(spec, 2, -1)
        with pytest.raises(ValueError, match="j_cap"):
            dw.a_value(spec, 5, 1, j_cap=4)
        with pytest.raises(ValueError, match="tol"):
            dw.a_value(spec, 2, 1, tol=0.0)


class TestMomentG:
    def test_order_zero(self):
        assert dw.moment_g(dw.factorial_power(1.0), 3, 0) == 1.0

    def test_frozen_first_moment(self):
        # E[G_3] = f(2) * sum_{i>=3} 1/i! = 2(e - 2.5)
        assert dw.moment_g(dw.factorial_power(1.0), 3, 1) == pytest.approx(
            2.0 * (math.e - 2.5), rel=1e-9
        )

    def test_closed_forms_low_orders(self):
        # at matching truncation: E[G_k] = f(k-1) * S1 and
        # E[G_k^2] = f(k-1)^2 * (S2 + S1^2) with S1, S2 the tail sums of
        # 1/f and 1/f^2 -- an algebraic identity of the recursion
        j_cap = 40
        for spec in (dw.factorial_power(1.0), dw.exponential(3.0), dw.factorial_power(0.5)):
            lw = base_log_table(spec, j_cap + 2)
            for kk in (1, 3, 5):
                s1 = sum(math.exp(-lw[i]) for i in range(kk, j_cap + 1))
                s2 = sum(math.exp(-2.0 * lw[i]) for i in range(kk, j_cap + 1))
                f_prev = math.exp(lw[kk - 1])
                assert dw.moment_g(spec, kk, 1, j_cap=j_cap) == pytest.approx(
                    f_prev * s1, rel=1e-9
                )
                assert dw.moment_g(spec, kk, 2, j_cap=j_cap) == pytest.approx(
                    f_prev**2 * (s2 + s1 * s1), rel=1e-9
                )

    def test_second_moment_matches_ladder_mc(self):
        # independent route: E[(f(2) F_3)^2] from bulk ladder samples
        spec = dw.factorial_power(1.0)
        samples = 200_000
        f_tails = dw.sample_f_tail(spec, 3, 1e-12, samples, seed=606)
        sq = (2.0 * f_tails) ** 2
        est = float(sq.mean())
        se = float(sq.std()) / math.sqrt(samples)
        assert abs(est - dw.moment_g(spec, 3, 2)) <= 3.0 * se

    def test_scale_free(self):
        from dataclasses import replace

        spec = dw.factorial_power(1.0)
        scaled = replace(spec, scale_log2=4)
        assert dw.moment_g(scaled, 4, 2) == dw.moment_g(spec, 4, 2)

    def test_validation(self):
        with pytest.raises(ValueError, match="integer"):
            dw.moment_g(dw.factorial_power(1.0), 0, 1)


class TestBoundCheck:
    def _report(self, samples=100_000, seed=7):
        return dw.product_moment_report(
            dw.factorial_power(1.0),
            pairs=[(5, 9), (2, 7)],
            sets=[((4, 5, 6), (1, 1, 1)), ((3, 5), (2, 1))],
            mc_samples=samples,
            seed=seed,
        )

    def test_report_structure_and_json(self):
        rep = self._report(samples=20_000)
        assert rep.truncation_K >= 9
        assert {p["k"] for p in rep.pairs} == {5, 2}
        assert len(rep.sets) == 2
        payload = json.loads(rep.to_json())
        assert payload["family"] == "factorial_power"
        assert payload["mc_samples"] == 20_000
        assert set(payload["fitted_c_sets"]) == {"2", "3"}
        assert payload["fitted_c_product"] == rep.fitted_c_product > 0.0

    def test_means_match_recursion(self):
        # the sampler and the A-recursion are independent routes to E[G_k]
        samples = 100_000
        rep = self._report(samples=samples)
        for j in (2, 4, 5, 6, 7, 9):
            want = dw.moment_g(dw.factorial_power(1.0), j, 1)
            var = dw.moment_g(dw.factorial_power(1.0), j, 2) - want**2
            se = math.sqrt(var / samples)
            assert abs(rep.means[j] - want) <= 4.0 * se

    def test_pairs_positively_associated(self):
        # overlapping tails share summands, so E[G_k G_l] >= E[G_k] E[G_l]
        rep = self._report()
        for row in rep.pairs:
            assert row["estimate"] + 3.0 * row["stderr"] >= row["mean_product"]

    def test_pair_shapes_and_constants(self):
        rep = self._report()
        for row in rep.pairs:
            k_, l_ = row["k"], row["l"]
            assert row["shape_tail"] == pytest.approx(1.0 / l_, rel=1e-12)
            assert row["shape_product"] == pytest.approx(1.0 / (k_ * l_), rel=1e-12)
            assert row["fitted_c_product"] == pytest.approx(
                row["estimate"] / row["shape_product"], rel=1e-12
            )
        assert 0.0 < rep.fitted_c_product < 10.0

    def test_set_shape_and_band(self):
        rep = self._report()
        row = next(r for r in rep.sets if r["depths"] == [4, 5, 6])
        assert row["shape"] == pytest.approx(0.125 / (4 * 5 * 6), rel=1e-12)
        prod_means = rep.means[4] * rep.means[5] * rep.means[6]
        assert row["estimate"] + 3.0 * row["stderr"] >= prod_means
        assert row["estimate"] <= 2.0 * prod_means

    def test_deterministic_in_seed(self):
        a = self._report(samples=20_000, seed=3)
        b = self._report(samples=20_000, seed=3)
        assert a.pairs == b.pairs
        assert a.sets == b.sets

    def test_validation(self):
        spec = dw.factorial_power(1.0)
        with pytest.raises(ValueError, match="nothing to check"):
            dw.product_moment_report(spec)
        with pytest.raises(ValueError, match="l must be"):
            dw.product_moment_report(spec, pairs=[(5, 5)])
        with pytest.raises(ValueError, match="exponents"):
            dw.product_moment_report(spec, sets=[((3, 4), (1, 3))])
        with pytest.raises(ValueError, match="strictly increasing"):
            dw.product_moment_report(spec, sets=[((4, 3), (1, 1))])
        with pytest.raises(ValueError, match="one exponent per depth"):
            dw.product_moment_report(spec, sets=[((3, 4), (1,))])
