import numpy as np
import pytest

from fedsim import evalkit, nn
from fedsim.engine import RoundRecord
from fedsim.evalkit import (build_report, cost_to_target, direction_similarity,
                            final_accuracy, summarize_run, windowed_accuracy)
from fedsim.rng import substream


def records(accs, gflops_per_round=1.0, gb_per_round=0.1):
    """Histories with linear cumulative cost, one record per accuracy."""
    return [RoundRecord(round=i, client_ids=[0], test_accuracy=a,
                        cum_gflops=(i + 1) * gflops_per_round,
                        cum_gb=(i + 1) * gb_per_round)
            for i, a in enumerate(accs)]


class TestWindowedAccuracy:
    def test_prefix_windows_average_what_exists(self):
        got = windowed_accuracy([0.1, 0.3, 0.5])
        assert got == pytest.approx([0.1, 0.2, 0.3])

    def test_full_window_is_trailing_mean(self):
        accs = list(np.linspace(0, 1, 25))
        win = windowed_accuracy(accs)
        assert win[24] == pytest.approx(np.mean(accs[15:25]))
        assert win[9] == pytest.approx(np.mean(accs[0:10]))

    def test_constant_series_unchanged(self):
        assert windowed_accuracy([0.4] * 30) == pytest.approx([0.4] * 30)

    def test_window_smooths_a_spike(self):
        accs = [0.0] * 20
        accs[10] = 1.0
        win = windowed_accuracy(accs)
        assert max(win) == pytest.approx(0.1)

    def test_custom_width(self):
        assert windowed_accuracy([0.0, 1.0, 1.0], w=2) == pytest.approx([0.0, 0.5, 1.0])

    def test_empty(self):
        assert windowed_accuracy([]) == []


class TestFinalAccuracy:
    def test_max_of_windowed_not_of_raw(self):
        accs = [0.0] * 10 + [1.0] + [0.0] * 10
        assert final_accuracy(accs) == pytest.approx(0.1)

    def test_monotone_series_ends_at_its_max(self):
        accs = list(np.linspace(0.1, 0.9, 40))
        assert final_accuracy(accs) == pytest.approx(np.mean(accs[-10:]))

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            final_accuracy([])


class TestCostToTarget:
    def test_crossing_after_five_consecutive_rounds(self):
        # windowed stays at 0.8 from round 10 onward; streak of 5 ends at index 14
        accs = [0.8] * 30
        recs = records(accs, gflops_per_round=2.0)
        assert cost_to_target(recs, 0.5, "flops") == pytest.approx(2.0 * 5)

    def test_streak_resets_on_dip(self):
        accs = [0.8, 0.8, 0.8, 0.8, 0.0] + [0.8] * 20
        # the dip drags the window below 0.75 at index 4; with target 0.75
        # the streak restarts once the window recovers
        recs = records(accs)
        win = windowed_accuracy(accs)
        first_ok = next(i for i in range(5, len(win)) if win[i] >= 0.75)
        assert cost_to_target(recs, 0.75, "flops") == pytest.approx(first_ok + 5)

    def test_never_reached_is_fail(self):
        recs = records([0.2] * 40)
        assert cost_to_target(recs, 0.5, "flops") is evalkit.FAIL

    def test_short_run_cannot_sustain(self):
        recs = records([0.9, 0.9, 0.9])  # only 3 rounds < consecutive=5
        assert cost_to_target(recs, 0.5, "flops") is evalkit.FAIL

    def test_bytes_variant(self):
        recs = records([0.8] * 10, gb_per_round=0.25)
        assert cost_to_target(recs, 0.5, "bytes") == pytest.approx(0.25 * 5)

    def test_budget_exhaustion_is_fail(self):
        recs = records([0.8] * 10, gflops_per_round=10.0)
        # crossing at round index 4 costs 50 GFLOPs > budget of 40
        assert cost_to_target(recs, 0.5, "flops", budget=(40.0, 1e9)) is evalkit.FAIL
        assert cost_to_target(recs, 0.5, "flops",
                              budget=(50.0, 1e9)) == pytest.approx(50.0)

    def test_other_budget_also_enforced(self):
        recs = records([0.8] * 10, gflops_per_round=1.0, gb_per_round=1.0)
        assert cost_to_target(recs, 0.5, "flops", budget=(1e9, 4.0)) is evalkit.FAIL

    def test_invalid_arguments(self):
        recs = records([0.5] * 10)
        with pytest.raises(ValueError):
            cost_to_target(recs, 0.0, "flops")
        with pytest.raises(ValueError):
            cost_to_target(recs, 0.5, "joules")


class TestSummaries:
    def test_summarize_run_own_target(self):
        recs = records([0.6] * 20)
        s = summarize_run("fedavg", recs, 1e9, 1e9)
        assert s["method"] == "fedavg"
        assert s["final_accuracy"] == pytest.approx(0.6)
        assert s["target_accuracy"] == pytest.approx(0.54)
        assert s["gflops_to_target"] == pytest.approx(5.0)
        assert s["gb_to_target"] == pytest.approx(0.5)

    def test_summarize_empty_run_fails(self):
        s = summarize_run("ist", [], 1e9, 1e9)
        assert s["final_accuracy"] == 0.0
        assert s["gflops_to_target"] == "FAIL"
        assert s["gb_to_target"] == "FAIL"

    def test_fail_rendered_as_string(self):
        recs = records([0.1] * 4)
        s = summarize_run("moon", recs, 1e9, 1e9)
        assert s["gflops_to_target"] == "FAIL"

    def test_report_target_is_shared_best(self):
        runs = {"fedavg": records([0.8] * 20, gflops_per_round=4.0),
                "ist": records([0.6] * 20, gflops_per_round=1.0)}
        rep = build_report(runs, 1e9, 1e9)
        assert rep["target_accuracy"] == pytest.approx(0.72)
        # ist never reaches 0.72; fedavg crosses after 5 rounds
        assert rep["methods"]["ist"]["gflops_to_target"] == "FAIL"
        assert rep["methods"]["fedavg"]["gflops_to_target"] == pytest.approx(20.0)
        assert rep["methods"]["ist"]["final_accuracy"] == pytest.approx(0.6)

    def test_report_budget_gate(self):
        runs = {"a": records([0.8] * 20, gflops_per_round=4.0),
                "b": records([0.79] * 20, gflops_per_round=1.0)}
        rep = build_report(runs, 10.0, 1e9)
        # method a crosses at 20 GFLOPs, beyond the 10 GFLOP budget
        assert rep["methods"]["a"]["gflops_to_target"] == "FAIL"
        assert rep["methods"]["b"]["gflops_to_target"] == pytest.approx(5.0)

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            build_report({}, 1e9, 1e9)


class TestDirectionSimilarity:
    def model(self, seed):
        return nn.init_model(4, 6, 3, substream(seed, "sim"), dtype=np.float64)

    def test_identical_displacement_is_one(self):
        start = self.model(0)
        moved = start.copy()
        moved.w1 += 0.3
        moved.b2 -= 0.1
        assert direction_similarity(start, moved, moved.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_scaled_displacement_is_one(self):
        start = self.model(1)
        a = start.copy()
        a.w1 += 0.2
        b = start.copy()
        b.w1 += 0.6  # same direction, 3x length
        assert direction_similarity(start, a, b) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_displacements_are_zero(self):
        start = self.model(2)
        a = start.copy()
        a.w1[0, 0] += 1.0
        b = start.copy()
        b.w2[0, 0] += 1.0  # disjoint coordinates -> orthogonal
        assert direction_similarity(start, a, b) == pytest.approx(0.0, abs=1e-12)

    def test_opposite_displacements(self):
        start = self.model(3)
        a = start.copy()
        a.b1 += 0.5
        b = start.copy()
        b.b1 -= 0.5
        assert direction_similarity(start, a, b) == pytest.approx(-1.0, abs=1e-12)

    def test_degenerate_displacement_returns_zero(self):
        start = self.model(4)
        moved = start.copy()
        moved.w1 += 1.0
        assert direction_similarity(start, start.copy(), moved) == 0.0

    def test_running_stats_excluded(self):
        start = self.model(5)
        a = start.copy()
        a.w1 += 0.5
        b = a.copy()
        b.bn_mean += 100.0  # running stats are not descent directions
        assert direction_similarity(start, a, b) == pytest.approx(1.0, abs=1e-12)
