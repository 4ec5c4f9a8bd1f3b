"""Monte Carlo dynamics, the coding simulator and protocol baselines."""

import numpy as np
import pandas as pd
import pytest

from eecap.markov import GeiPolicy, NoiselessPolicy, build_chain, stationary
from eecap.model import NoiselessModel
from eecap.rates import baseline_frame_rate
from eecap.sim import (
    TRACE_COLUMNS,
    Codebook,
    SimConfig,
    Stream,
    _pulse_bits,
    generator,
    simulate_baseline,
    simulate_baseline_frame,
    simulate_coding_noiseless,
    simulate_states,
    simulate_u1_optimal,
)
from eecap.validation import DomainError, PolicyError, RateError


class TestStreams:
    def test_streams_differ(self):
        a = generator(5, Stream.X1).random(8)
        b = generator(5, Stream.X2).random(8)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, generator(5, Stream.X1).random(8))


class TestStateDynamics:
    def test_noiseless_occupancy(self, two_units):
        report = simulate_states(two_units, NoiselessPolicy.uniform(2), SimConfig(n=40_000, seed=1))
        np.testing.assert_allclose(report.occupancy_vector, [0.25, 0.5, 0.25], atol=0.02)
        assert report.occupancy_vector.sum() == pytest.approx(1.0)
        chain = build_chain(two_units, NoiselessPolicy.uniform(2))
        np.testing.assert_allclose(report.empirical_transitions, chain.entries, atol=0.03)

    def test_general_occupancy(self, noisy_pair):
        policy = GeiPolicy.uniform(noisy_pair)
        report = simulate_states(noisy_pair, policy, SimConfig(n=60_000, seed=2))
        expected = stationary(build_chain(noisy_pair, policy), noisy_pair.initial).pi
        np.testing.assert_allclose(report.occupancy_vector, expected, atol=0.02)
        assert report.kind == "states-general"

    def test_reproducible(self, two_units):
        cfg = SimConfig(n=2_000, seed=9)
        policy = NoiselessPolicy.uniform(2, 0.3)
        assert simulate_states(two_units, policy, cfg) == simulate_states(two_units, policy, cfg)

    def test_trace_conserves_energy(self, tmp_path):
        model = NoiselessModel(total_units=3, initial_u1=1)
        path = tmp_path / "trace.csv"
        simulate_states(model, NoiselessPolicy.uniform(3), SimConfig(n=50, seed=4), trace_path=path)
        trace = pd.read_csv(path)
        assert list(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 50
        assert (trace["u1"] + trace["u2"] == 3).all()
        assert (trace["u1"] >= trace["x1"]).all()
        assert (trace["u2"] >= trace["x2"]).all()

    def test_general_trace_respects_buffers(self, noisy_pair, tmp_path):
        path = tmp_path / "trace.csv"
        simulate_states(noisy_pair, GeiPolicy.uniform(noisy_pair), SimConfig(n=200, seed=4), trace_path=path)
        trace = pd.read_csv(path)
        assert trace["u1"].between(0, 2).all()
        assert trace["u2"].between(0, 2).all()
        assert (trace["u1"] >= trace["x1"]).all()

    def test_policy_must_fit(self, lossless_pair, single_unit):
        with pytest.raises(PolicyError):
            simulate_states(lossless_pair, NoiselessPolicy.uniform(1), SimConfig(n=10))
        with pytest.raises(PolicyError):
            simulate_states(single_unit, NoiselessPolicy.uniform(2), SimConfig(n=10))


class TestCodebook:
    def test_decode_own_codeword(self):
        book = Codebook(node=1, level=1, n_symbols=200, bits=64, p=0.5, seed=3)
        assert book.widths == [8] * 8
        assert book.length == 192
        rng = np.random.default_rng(0)
        for _ in range(3):
            message = book.draw_message(rng)
            word = book.codeword(message)
            assert word.shape == (192,)
            matches = book.decode(word)
            assert len(matches) == 1
            np.testing.assert_array_equal(matches[0], message)

    def test_codewords_are_reproducible(self):
        book = Codebook(node=2, level=1, n_symbols=120, bits=20, p=0.3, seed=1)
        message = np.array([5, 200, 3])
        np.testing.assert_array_equal(book.codeword(message), book.codeword(message))
        assert not np.array_equal(book.codeword(message), book.codeword(np.array([5, 200, 2])))

    def test_geometry(self):
        book = Codebook(node=1, level=2, n_symbols=30, bits=12, p=0.5)
        assert book.widths == [8, 4]
        assert book.depth == 6
        assert book.segment_length == 5
        assert book.codeword(np.array([255, 15])).shape == (30,)
        assert book.n_codewords == 4096

    def test_single_codeword_always_decodes(self):
        book = Codebook(node=1, level=1, n_symbols=50, bits=0, p=0.5)
        assert book.length == 0
        message = book.draw_message(np.random.default_rng(1))
        matches = book.decode(book.codeword(message))
        assert len(matches) == 1
        assert matches[0].size == 0

    def test_rate_above_entropy(self):
        with pytest.raises(RateError):
            Codebook(node=1, level=1, n_symbols=10, bits=12, p=0.5).check_rate()
        Codebook(node=1, level=1, n_symbols=100, bits=12, p=0.5).check_rate()
        Codebook(node=1, level=1, n_symbols=0, bits=0, p=0.5).check_rate()

    def test_overflowing_list(self, short_candidate_lists):
        book = Codebook(node=1, level=1, n_symbols=6, bits=20, chunk_bits=10, p=0.5)
        assert book.segment_length == 1
        word = book.codeword(np.array([7, 9]))
        assert book.decode(word) is None


class TestCodingScheme:
    def test_single_unit_decodes(self, single_unit):
        rate_fraction = 0.9
        report = simulate_coding_noiseless(
            single_unit,
            NoiselessPolicy.uniform(1),
            SimConfig(n=20_000, seed=0, epsilon=0.02),
            rate_fraction=rate_fraction,
        )
        assert report.decode_ok is True
        assert report.shortfalls == 0
        assert report.prop1_sum_rate == pytest.approx(1.0)
        assert len(report.codebooks) == 2
        assert report.bits_delivered_1 == report.codebooks[0]["bits"] > 8_000
        assert report.achieved_sum_rate == pytest.approx(report.nominal_sum_rate)
        assert report.achieved_sum_rate == pytest.approx(rate_fraction * report.prop1_sum_rate, rel=0.1)
        for entry in report.codebooks:
            assert entry["length"] <= entry["n_symbols"]
            assert entry["list_size"] == 1

    def test_overloaded_codebooks_fail(self, single_unit):
        policy = NoiselessPolicy.uniform(1)
        cfg = SimConfig(n=24, seed=0)
        with pytest.raises(RateError):
            simulate_coding_noiseless(single_unit, policy, cfg, message_bits=12)
        report = simulate_coding_noiseless(single_unit, policy, cfg, message_bits=12, strict=False)
        assert report.decode_ok is False
        assert report.achieved_sum_rate == 0.0

    def test_ambiguous_list_is_not_decoded(self, single_unit):
        # Empty codewords: all four messages survive, so even a lucky tie guess fails
        policy = NoiselessPolicy.uniform(1)
        for seed in range(20):
            report = simulate_coding_noiseless(
                single_unit, policy, SimConfig(n=8, seed=seed), message_bits=2, strict=False
            )
            assert report.decode_ok is False
            assert report.bits_delivered_1 == report.bits_delivered_2 == 0
            assert [entry["list_size"] for entry in report.codebooks] == [4, 4]
            assert not any(entry["correct"] for entry in report.codebooks)

    def test_bad_rate_fraction(self, single_unit):
        with pytest.raises(DomainError):
            simulate_coding_noiseless(
                single_unit, NoiselessPolicy.uniform(1), SimConfig(n=100), rate_fraction=1.5
            )


class TestProtocols:
    def test_alternation(self):
        report = simulate_u1_optimal(2, bits_1=[0, 1], bits_2=[1])
        assert report.uses == 3
        assert report.sum_rate == pytest.approx(1.0)
        assert not report.stalled

    def test_dummy_handover(self):
        report = simulate_u1_optimal(1, bits_1=[0], bits_2=[1])
        assert report.uses == 3
        assert report.bits_delivered_1 + report.bits_delivered_2 == 2

    def test_stall_without_handover(self):
        report = simulate_u1_optimal(1, bits_1=[0], bits_2=[1], handover=False)
        assert report.stalled
        assert report.uses == 1
        assert report.bits_delivered_2 == 0

    def test_random_messages_near_one(self):
        report = simulate_u1_optimal(10_000, seed=3)
        assert report.sum_rate == pytest.approx(1.0, abs=0.02)
        assert report.bits_delivered_1 == report.bits_delivered_2 == 10_000

    def test_frame_baseline(self):
        assert simulate_baseline_frame(2, 10_000) == 0.5
        report = simulate_baseline("frame", F=4, m=10_000, seed=1)
        assert report.sum_rate == 0.5
        assert report.decode_ok

    def test_frame_rate_matches_closed_form(self):
        report = simulate_baseline("frame", F=8, m=30_000, seed=2)
        assert report.decode_ok
        assert report.sum_rate == pytest.approx(baseline_frame_rate(8), abs=1e-3)

    @pytest.mark.parametrize("F", [3, 5, 6])
    def test_frame_length_must_be_power_of_two(self, F):
        with pytest.raises(DomainError, match="power of two"):
            simulate_baseline("frame", F=F, m=10)

    def test_pulse_position_decoding(self):
        assert _pulse_bits(np.array([0, 0, 1, 0]), 2) == [0, 1]
        assert _pulse_bits(np.array([1, 0, 0, 0, 0, 0, 0, 0]), 3) == [0, 0, 0]
        assert _pulse_bits(np.array([0, 1, 1, 0]), 2) is None
        assert _pulse_bits(np.zeros(4), 2) is None

    def test_variable_baseline(self):
        report = simulate_baseline("variable", m=50_000, seed=2)
        assert report.sum_rate == pytest.approx(2 / 3, abs=5e-3)

    def test_unknown_variant(self):
        with pytest.raises(DomainError):
            simulate_baseline("burst", m=10)
