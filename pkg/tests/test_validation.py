"""Shared validators, error hierarchy and telemetry alert levels."""

import logging

import numpy as np
import pytest

from eecap.telemetry import (
    AlertLevel,
    check_convergence,
    check_stationary_residual,
    record_optimization_run,
    record_stationary_residual,
)
from eecap.validation import (
    ConvergenceError,
    DomainError,
    EecapError,
    PolicyError,
    require_probability,
    standardize_error_message,
    validate_distribution,
    validate_probability,
    validate_required_fields,
    validate_stochastic_rows,
)


class TestProbability:
    def test_accepts_numeric_strings(self):
        assert validate_probability("0.25", "p")["normalized_value"] == 0.25

    @pytest.mark.parametrize("value", [True, "abc", None, float("nan"), -0.1, 1.5])
    def test_rejects(self, value):
        result = validate_probability(value, "p")
        assert result["valid"] is False
        assert "'p'" in result["error"]

    def test_require_raises_value_error(self):
        with pytest.raises(ValueError, match="out of allowed range"):
            require_probability(2.0, "loss")


class TestDistributions:
    def test_distribution(self):
        assert validate_distribution([0.25, 0.75], "v")["valid"]
        result = validate_distribution([0.25, 0.7], "v")
        assert not result["valid"]
        assert "not stochastic" in result["errors"][0]

    def test_stochastic_rows(self):
        assert validate_stochastic_rows(np.eye(3), "P", 1e-12)["valid"]
        bad = np.array([[0.5, 0.4], [0.0, 1.0]])
        assert "row 0" in validate_stochastic_rows(bad, "P", 1e-12)["errors"][0]
        assert not validate_stochastic_rows(np.ones((2, 3)) / 3, "P", 1e-12)["valid"]

    def test_required_fields(self):
        assert validate_required_fields({"a": 1}, ["a"])["valid"]
        assert validate_required_fields({}, ["a"], "model")["errors"] == [
            standardize_error_message("missing", "a", "in model")
        ]
        assert not validate_required_fields([1], ["a"])["valid"]


class TestErrors:
    def test_hierarchy(self):
        assert issubclass(PolicyError, DomainError)
        assert issubclass(DomainError, ValueError)
        assert issubclass(ConvergenceError, EecapError)

    def test_convergence_error_carries_state(self):
        err = ConvergenceError("lazy power", residual=1e-3, iterations=8)
        assert err.iterations == 8
        assert "iterations=8" in str(err)


class TestAlerts:
    def test_convergence_levels(self):
        assert check_convergence(4, 4)["level"] == AlertLevel.INFO
        assert check_convergence(2, 4)["level"] == AlertLevel.WARNING
        assert check_convergence(0, 4)["level"] == AlertLevel.CRITICAL

    def test_residual_levels(self):
        assert check_stationary_residual(1e-14)["level"] == AlertLevel.INFO
        assert check_stationary_residual(1e-9)["level"] == AlertLevel.WARNING
        assert check_stationary_residual(1e-6)["level"] == AlertLevel.CRITICAL

    def test_warnings_logged_without_logfire(self, caplog):
        with caplog.at_level(logging.WARNING, logger="eecap.telemetry"):
            record_optimization_run("inner-noiseless", 1.0, 100, 0, 2, 0.1)
            record_stationary_residual(4, 1e-6, "gth")
        assert "No start converged" in caplog.text
        assert "gth, 4 states" in caplog.text
