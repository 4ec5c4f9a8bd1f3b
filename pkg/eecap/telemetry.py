"""Logfire metrics and alerting helpers.

Provides structured spans for:
- Optimizer runs (multi-start convergence tracking)
- Sweep grid points
- Monte Carlo simulation runs
- Stationary-distribution residual alerts
"""

import logging
from enum import Enum
from typing import Any, Dict, Optional

import logfire

from eecap.logfire_config import is_logfire_enabled

logger = logging.getLogger(__name__)


# =============================================================================
# CONSTANTS FOR ANOMALY DETECTION
# =============================================================================

class AlertLevel(Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


# Share of optimizer starts allowed to stop without converging
NONCONVERGED_WARNING_FRACTION = 0.5
NONCONVERGED_CRITICAL_FRACTION = 1.0

# Stationarity residual thresholds (max-norm of pi P - pi)
RESIDUAL_WARNING_THRESHOLD = 1e-10
RESIDUAL_CRITICAL_THRESHOLD = 1e-8


# =============================================================================
# ANOMALY DETECTION
# =============================================================================

def check_convergence(n_converged: int, n_starts: int) -> Dict[str, Any]:
    """Classify the share of optimizer starts that failed to converge."""
    failed = n_starts - n_converged
    fraction = failed / n_starts if n_starts else 0.0
    if n_starts and fraction >= NONCONVERGED_CRITICAL_FRACTION:
        level = AlertLevel.CRITICAL
        message = f"No start converged ({n_starts} starts)"
    elif fraction >= NONCONVERGED_WARNING_FRACTION:
        level = AlertLevel.WARNING
        message = f"{failed}/{n_starts} starts hit the iteration cap"
    else:
        level = AlertLevel.INFO
        message = "Normal convergence"
    return {"level": level, "message": message, "failed_fraction": round(fraction, 3)}


def check_stationary_residual(residual: float) -> Dict[str, Any]:
    """Classify a stationarity residual against the acceptance tolerances."""
    if residual >= RESIDUAL_CRITICAL_THRESHOLD:
        return {"level": AlertLevel.CRITICAL, "message": f"Residual {residual:.3e} above 1e-8"}
    if residual >= RESIDUAL_WARNING_THRESHOLD:
        return {"level": AlertLevel.WARNING, "message": f"Residual {residual:.3e} above 1e-10"}
    return {"level": AlertLevel.INFO, "message": "Stationary"}


# =============================================================================
# METRICS RECORDING
# =============================================================================

def record_optimization_run(
    mode: str,
    objective: float,
    n_evals: int,
    n_converged: int,
    n_starts: int,
    elapsed_seconds: float,
    metadata: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Record metrics for a multi-start optimization.

    Args:
        mode: Optimization mode (e.g., "inner-noiseless", "lei")
        objective: Best objective found (bits per channel use)
        n_evals: Total objective evaluations over all starts
        n_converged: Number of starts that met the tolerance
        n_starts: Number of starts
        elapsed_seconds: Wall-clock time
        metadata: Additional attributes
    """
    convergence = check_convergence(n_converged, n_starts)
    if convergence["level"] != AlertLevel.INFO:
        logger.warning(f"Optimizer {mode}: {convergence['message']}")

    if not is_logfire_enabled():
        return

    with logfire.span(
        "optimization_run",
        mode=mode,
        objective=objective,
        n_evals=n_evals,
        n_converged=n_converged,
        n_starts=n_starts,
        elapsed_seconds=round(elapsed_seconds, 4),
        evals_per_second=round(n_evals / elapsed_seconds, 1) if elapsed_seconds > 0 else 0,
        convergence_level=convergence["level"].value,
        **(metadata or {}),
    ):
        if convergence["level"] == AlertLevel.CRITICAL:
            logfire.error(f"Optimizer did not converge: {mode}", mode=mode, n_starts=n_starts)
        elif convergence["level"] == AlertLevel.WARNING:
            logfire.warn(convergence["message"], mode=mode)
        else:
            logfire.info(f"Optimization completed: {mode}", mode=mode, objective=objective)


def record_sweep_point(
    mode: str,
    parameter: str,
    value: float,
    objective: float,
    index: int,
) -> None:
    """Record one completed grid point of a parameter sweep."""
    if not is_logfire_enabled():
        return

    logfire.info(
        "sweep_point",
        mode=mode,
        parameter=parameter,
        value=value,
        objective=objective,
        index=index,
    )


def record_simulation_run(
    kind: str,
    n: int,
    seed: int,
    elapsed_seconds: float,
    decode_ok: Optional[bool] = None,
    achieved_sum_rate: Optional[float] = None,
) -> None:
    """Record a Monte Carlo run; decoding failures are logged as warnings."""
    if decode_ok is False:
        logger.info(f"Simulation {kind} (seed={seed}) failed to decode")

    if not is_logfire_enabled():
        return

    with logfire.span(
        "simulation_run",
        kind=kind,
        n=n,
        seed=seed,
        elapsed_seconds=round(elapsed_seconds, 4),
        decode_ok=decode_ok,
        achieved_sum_rate=achieved_sum_rate,
    ):
        if decode_ok is False:
            logfire.warn(f"Decoding failed: {kind}", seed=seed)


def record_stationary_residual(n_states: int, residual: float, method: str) -> None:
    """Alert when a stationary distribution misses the stationarity tolerance."""
    check = check_stationary_residual(residual)
    if check["level"] == AlertLevel.INFO:
        return
    logger.warning(f"Stationary distribution ({method}, {n_states} states): {check['message']}")

    if not is_logfire_enabled():
        return

    logfire.warn(
        "stationary_residual",
        n_states=n_states,
        residual=residual,
        method=method,
        level=check["level"].value,
    )
