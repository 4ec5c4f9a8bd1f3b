"""Multi-start policy search and parameter sweeps."""

import numpy as np
import pytest

from eecap.config import settings
from eecap.markov import GeiPolicy, JointPolicy, NoiselessPolicy
from eecap.model import ChannelParams, GeneralModel, NoiselessModel, channel_kernel
from eecap.optimize import (
    OptimConfig,
    OptimMode,
    encode_policy,
    evaluate_fixed_noiseless,
    linear_grid,
    objective_value,
    optimize,
    optimize_inner_general,
    optimize_inner_noiseless,
    optimize_lei,
    optimize_outer_general,
    optimize_outer_noiseless,
    policy_columns,
    start_generator,
    sweep,
    sweep_to_csv,
)
from eecap.rates import RateReport, capacity_achieving_input
from eecap.validation import DomainError

FAST = OptimConfig(n_starts=3, max_iters=800)


class TestObjective:
    def test_weighted_sum(self):
        report = RateReport(r1=0.2, r2=0.4, sum=0.6, kind="inner-noiseless")
        assert objective_value(report, OptimMode.INNER_NOISELESS) == pytest.approx(0.6)
        assert objective_value(report, OptimMode.INNER_NOISELESS, weight=1.0) == pytest.approx(0.4)

    def test_outer_uses_sum_bound(self):
        report = RateReport(r1=0.7, r2=0.7, sum=1.0, kind="outer-noiseless")
        assert objective_value(report, OptimMode.OUTER_NOISELESS, weight=0.9) == 1.0

    def test_weight_is_a_probability(self):
        with pytest.raises(ValueError):
            OptimConfig(weight=1.5)


class TestNoiselessSearch:
    def test_single_unit_inner(self, single_unit):
        result = optimize_inner_noiseless(single_unit, FAST)
        assert result.report.sum == pytest.approx(1.0, abs=1e-3)
        assert isinstance(result.policy, NoiselessPolicy)
        assert result.policy.p1[0] == 0.0

    def test_single_unit_outer(self, single_unit):
        result = optimize_outer_noiseless(single_unit, FAST)
        assert result.objective == pytest.approx(1.0, abs=1e-3)
        JointPolicy.model_validate(result.policy.model_dump()).check_model(single_unit)

    def test_fixed_half(self, two_units):
        result = evaluate_fixed_noiseless(two_units)
        assert result.objective == pytest.approx(1.5, abs=1e-9)
        assert result.mode == OptimMode.FIXED_NOISELESS
        assert optimize(two_units, "fixed-noiseless")[0].objective == pytest.approx(1.5, abs=1e-9)

    def test_fixed_rejects_bad_probability(self, two_units):
        with pytest.raises(DomainError):
            evaluate_fixed_noiseless(two_units, p=1.2)

    def test_optimized_beats_fixed(self, two_units):
        optimized = optimize_inner_noiseless(two_units, FAST)
        assert optimized.objective >= evaluate_fixed_noiseless(two_units).objective - 1e-8

    def test_weight_shifts_rate(self, two_units):
        favour_1 = optimize_inner_noiseless(two_units, OptimConfig(n_starts=3, weight=0.9))
        favour_2 = optimize_inner_noiseless(two_units, OptimConfig(n_starts=3, weight=0.1))
        assert favour_1.report.r1 > favour_2.report.r1

    def test_mode_must_fit_model(self, lossless_pair, single_unit):
        with pytest.raises(DomainError):
            optimize(lossless_pair, OptimMode.INNER_NOISELESS, FAST)
        with pytest.raises(DomainError):
            optimize(single_unit, OptimMode.LEI, FAST)


class TestGeneralSearch:
    def test_lossless_pair(self, lossless_pair):
        result = optimize_inner_general(lossless_pair, FAST)
        assert result.report.sum == pytest.approx(1.0, abs=1e-3)

    def test_outer_lossless_pair(self, lossless_pair):
        result = optimize_outer_general(lossless_pair, FAST)
        assert result.mode == OptimMode.OUTER_GENERAL
        assert isinstance(result.policy, JointPolicy)
        JointPolicy.model_validate(result.policy.model_dump()).check_model(lossless_pair)
        assert result.objective == pytest.approx(1.0, abs=1e-3)

    def test_outer_dominates_inner_on_noisy_links(self):
        model = GeneralModel.symmetric(buffer=1, p_rc=0.1, p_rn=0.1, p_lc=0.1, p_ln=0.1)
        inner = optimize_inner_general(model, FAST)
        outer = optimize_outer_general(model, FAST)
        assert outer.objective >= inner.objective - 1e-3
        assert outer.objective <= 2.0

        warm = encode_policy(model, OptimMode.OUTER_GENERAL, inner.policy)
        lifted, _ = optimize(model, OptimMode.OUTER_GENERAL, FAST, warm=warm)
        assert lifted.objective >= inner.objective - 1e-6

    def test_unreached_states_are_canonical(self, lossless_pair):
        result = optimize_inner_general(lossless_pair, FAST)
        assert isinstance(result.policy, GeiPolicy)
        # (1, 1) is never reached from (1, 0) when energy is conserved
        assert result.policy.p1[1][1] == 0.5
        assert result.policy.p2[1][1] == 0.5
        assert result.policy.p1[0][0] == 0.0

    def test_lei_below_gei(self, lossless_pair):
        lei = optimize_lei(lossless_pair, OptimConfig(n_starts=4))
        assert lei.objective == pytest.approx(0.64386, abs=1e-3)
        assert lei.policy.v_dist_1[1] == pytest.approx(0.4, abs=0.02)
        assert lei.objective < 1.0


class TestDeterminism:
    def test_start_streams_are_independent(self):
        a = start_generator(0, 0, 1).random(4)
        b = start_generator(0, 0, 2).random(4)
        c = start_generator(0, 1, 1).random(4)
        np.testing.assert_array_equal(a, start_generator(0, 0, 1).random(4))
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_same_seed_same_result(self, two_units):
        first = optimize_inner_noiseless(two_units, OptimConfig(n_starts=4, seed=7))
        second = optimize_inner_noiseless(two_units, OptimConfig(n_starts=4, seed=7))
        assert first == second

    def test_thread_count_does_not_matter(self, two_units, monkeypatch):
        cfg = OptimConfig(n_starts=4, seed=3)
        serial = optimize_inner_noiseless(two_units, cfg)
        monkeypatch.setattr(settings, "threads", 4)
        threaded = optimize_inner_noiseless(two_units, cfg)
        assert serial == threaded


class TestWarmStart:
    def test_encode_round_trip(self, two_units):
        policy = NoiselessPolicy(p1=[0.0, 0.3, 0.6], p2=[0.0, 0.4, 0.7])
        theta = encode_policy(two_units, OptimMode.INNER_NOISELESS, policy)
        assert theta.shape == (4,)
        result, _ = optimize(two_units, OptimMode.INNER_NOISELESS, OptimConfig(n_starts=1), warm=theta)
        assert result.objective >= evaluate_fixed_noiseless(two_units).objective - 1e-8

    def test_product_lifted_for_outer(self, two_units):
        inner = optimize_inner_noiseless(two_units, FAST)
        theta = encode_policy(two_units, OptimMode.OUTER_NOISELESS, inner.policy)
        outer, _ = optimize(two_units, OptimMode.OUTER_NOISELESS, FAST, warm=theta)
        assert outer.objective >= inner.objective - 1e-3


class TestSweep:
    def test_rows_follow_grid(self, lossless_pair):
        grid = [0.0, 0.1, 0.2]
        frame = sweep(
            lossless_pair,
            "link_12.replenish",
            grid,
            OptimMode.INNER_GENERAL,
            OptimConfig(n_starts=1, max_iters=300),
            mirror=["link_21.replenish"],
        )
        assert frame["param"].tolist() == grid
        assert list(frame.columns[:4]) == ["param", "objective", "r1", "r2"]
        assert [c for c in frame.columns if c.startswith("pi_")] == [
            "pi_0_0", "pi_0_1", "pi_1_0", "pi_1_1"
        ]
        assert "p1_1_0" in frame.columns
        assert frame["objective"].iloc[0] == pytest.approx(1.0, abs=1e-3)

    def test_general_rows_carry_unconstrained_input(self, lossless_pair):
        frame = sweep(
            lossless_pair,
            "link_12.replenish",
            [0.0, 0.2],
            OptimMode.INNER_GENERAL,
            OptimConfig(n_starts=1, max_iters=300),
            mirror=["link_21.replenish"],
        )
        assert frame["p_star_12"].iloc[0] == pytest.approx(0.5, abs=1e-6)
        # A link that turns some 0s into 1s favours sending 0
        assert frame["p_star_12"].iloc[1] < 0.5
        np.testing.assert_allclose(frame["p_star_12"], frame["p_star_21"], atol=1e-9)
        assert frame["p_star_12"].iloc[1] == pytest.approx(
            capacity_achieving_input(channel_kernel(ChannelParams(replenish=0.2, loss=0.0))), abs=1e-9
        )

    def test_progress_callback(self, two_units):
        seen = []
        sweep(
            two_units,
            "total_units",
            [1, 2],
            "fixed-noiseless",
            progress=lambda index, result: seen.append((index, result.objective)),
        )
        assert [i for i, _ in seen] == [0, 1]
        assert seen[1][1] == pytest.approx(1.5, abs=1e-9)

    def test_csv_output(self, two_units, tmp_path):
        frame = sweep(two_units, "total_units", [1, 2, 3], "fixed-noiseless")
        assert not any(c.startswith("p_star") for c in frame.columns)
        target = tmp_path / "sweep.csv"
        sweep_to_csv(frame, target)
        lines = target.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("param,objective,r1,r2,pi_0")

    def test_bad_parameter(self, two_units):
        with pytest.raises(DomainError):
            sweep(two_units, "link_12.replenish", [0.1], "fixed-noiseless")

    def test_linear_grid(self):
        grid = linear_grid(0.0, 0.5, 26)
        assert len(grid) == 26
        assert grid[0] == 0.0 and grid[-1] == 0.5
        assert linear_grid(0.3, 0.9, 1) == [0.3]
        with pytest.raises(DomainError):
            linear_grid(0.0, 1.0, 0)


class TestPolicyColumns:
    def test_joint_labels(self, single_unit):
        joint = JointPolicy.from_product(single_unit, NoiselessPolicy.uniform(1))
        cols = policy_columns(joint, single_unit)
        assert list(cols)[:4] == ["phi00_0", "phi01_0", "phi10_0", "phi11_0"]
        assert cols["phi01_0"] == 0.5

    def test_general_labels(self):
        model = GeneralModel.symmetric(buffer=1)
        cols = policy_columns(GeiPolicy.uniform(model), model)
        assert cols["p1_1_0"] == 0.5
        assert cols["p2_1_0"] == 0.0

    def test_noiseless_labels(self):
        cols = policy_columns(NoiselessPolicy.uniform(2, 0.3), NoiselessModel(total_units=2))
        assert cols == {"p1_0": 0.0, "p1_1": 0.3, "p1_2": 0.3, "p2_0": 0.0, "p2_1": 0.3, "p2_2": 0.3}
