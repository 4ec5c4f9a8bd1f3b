"""Policy optimization and parameter sweeps.

Every mode maps an unconstrained vector theta to a feasible policy:
logits for product policies, reduced softmax (first logit pinned to 0) for
joint and Shannon-strategy distributions. Zero-energy entries are never
parameterized, so they stay exactly 0. The search is a multi-start
Nelder-Mead simplex descent; each start owns a Philox stream keyed by
(seed, grid index, start index), so results do not depend on scheduling.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.optimize import minimize
from scipy.special import expit, logit, softmax

from eecap.config import settings
from eecap.markov import PHI_LABELS, GeiPolicy, JointPolicy, NoiselessPolicy, energy_coordinates
from eecap.model import GeneralModel, Model, NoiselessModel, state_label, with_parameter
from eecap.rates import (
    LeiPolicy,
    RateReport,
    capacity_achieving_input,
    inner_bound_general,
    inner_bound_noiseless,
    lei_rates,
    outer_bound_general,
    outer_bound_noiseless,
)
from eecap.telemetry import record_optimization_run, record_sweep_point
from eecap.validation import DomainError, require_probability

logger = logging.getLogger(__name__)

Policy = Union[NoiselessPolicy, GeiPolicy, JointPolicy, LeiPolicy]

# Random starts avoid the flat tails of the logistic map
START_LOW, START_HIGH = 0.02, 0.98


class OptimMode(str, Enum):
    INNER_NOISELESS = "inner-noiseless"
    OUTER_NOISELESS = "outer-noiseless"
    FIXED_NOISELESS = "fixed-noiseless"
    INNER_GENERAL = "inner-general"
    OUTER_GENERAL = "outer-general"
    LEI = "lei"

    @property
    def noiseless(self) -> bool:
        return self.value.endswith("-noiseless")

    @property
    def outer(self) -> bool:
        return self.value.startswith("outer")


class OptimConfig(BaseModel):
    """Multi-start search settings; ``weight`` is lambda in 2(lambda R1 + (1 - lambda) R2)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_starts: int = Field(default=16, ge=1)
    max_iters: int = Field(default=2000, ge=1)
    tol: float = Field(default=1e-8, gt=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    weight: float = 0.5

    @field_validator("weight", mode="before")
    @classmethod
    def _check_weight(cls, v: Any) -> float:
        return require_probability(v, "weight")


class OptimResult(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: OptimMode
    policy: Policy
    report: RateReport
    objective: float
    n_evals: int
    converged: bool


def objective_value(report: RateReport, mode: OptimMode, weight: float = 0.5) -> float:
    """Sum bound for outer modes, weighted sum rate otherwise (the sum rate at weight 1/2)."""
    if mode.outer:
        return report.sum
    return 2.0 * (weight * report.r1 + (1.0 - weight) * report.r2)


# =============================================================================
# PARAMETERIZATIONS
# =============================================================================

def _probabilities(theta: np.ndarray) -> np.ndarray:
    floor = settings.probability_floor
    return np.clip(expit(theta), floor, 1.0 - floor)


def _simplex(theta: np.ndarray) -> np.ndarray:
    w = softmax(np.concatenate([[0.0], theta]))
    w = np.maximum(w, settings.probability_floor)
    return w / w.sum()


def _simplex_logits(w: np.ndarray) -> np.ndarray:
    w = np.maximum(np.asarray(w, dtype=float), 1e-6)
    return np.log(w[1:]) - np.log(w[0])


def _dirichlet_logits(rng: np.random.Generator, k: int) -> np.ndarray:
    return _simplex_logits(rng.dirichlet(np.ones(k)))


class _Problem:
    """Search space of one mode: decode theta into a policy and score it."""

    dim: int

    def __init__(self, model: Model, mode: OptimMode, weight: float):
        self.model = model
        self.mode = mode
        self.weight = weight

    def decode(self, theta: np.ndarray) -> Policy:
        raise NotImplementedError

    def encode(self, policy: Policy) -> np.ndarray:
        raise NotImplementedError

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        return logit(rng.uniform(START_LOW, START_HIGH, self.dim))

    def evaluate(self, policy: Policy) -> RateReport:
        raise NotImplementedError

    def vector(self, policy: Policy) -> np.ndarray:
        raise NotImplementedError

    def canonical(self, policy: Policy, pi: np.ndarray) -> Policy:
        return policy

    def negative(self, theta: np.ndarray) -> float:
        return -objective_value(self.evaluate(self.decode(theta)), self.mode, self.weight)


class _NoiselessProduct(_Problem):
    def __init__(self, model: NoiselessModel, mode: OptimMode, weight: float):
        super().__init__(model, mode, weight)
        self.dim = 2 * model.total_units

    def decode(self, theta: np.ndarray) -> NoiselessPolicy:
        p = _probabilities(theta)
        u = self.model.total_units
        return NoiselessPolicy.model_construct(
            p1=[0.0] + p[:u].tolist(), p2=[0.0] + p[u:].tolist()
        )

    def encode(self, policy: NoiselessPolicy) -> np.ndarray:
        return logit(np.clip(policy.p1[1:] + policy.p2[1:], 1e-6, 1 - 1e-6))

    def evaluate(self, policy: NoiselessPolicy) -> RateReport:
        return inner_bound_noiseless(self.model, policy)

    def vector(self, policy: NoiselessPolicy) -> np.ndarray:
        return np.asarray(policy.p1 + policy.p2)

    def canonical(self, policy: NoiselessPolicy, pi: np.ndarray) -> NoiselessPolicy:
        p1, p2 = list(policy.p1), list(policy.p2)
        u_total = self.model.total_units
        for u in np.flatnonzero(pi == 0.0):
            if u > 0:
                p1[u] = 0.5
            if u_total - u > 0:
                p2[u_total - u] = 0.5
        return NoiselessPolicy(p1=p1, p2=p2)


class _GeneralProduct(_Problem):
    def __init__(self, model: GeneralModel, mode: OptimMode, weight: float):
        super().__init__(model, mode, weight)
        self.e1, self.e2 = energy_coordinates(model)
        self.free_1 = np.flatnonzero(self.e1 > 0)
        self.free_2 = np.flatnonzero(self.e2 > 0)
        self.dim = len(self.free_1) + len(self.free_2)

    def _arrays(self, flat_1: np.ndarray, flat_2: np.ndarray) -> Tuple[List, List]:
        shape = self.model.shape
        return flat_1.reshape(shape).tolist(), flat_2.reshape(shape).tolist()

    def decode(self, theta: np.ndarray) -> GeiPolicy:
        p = _probabilities(theta)
        flat_1 = np.zeros(self.model.n_states)
        flat_2 = np.zeros(self.model.n_states)
        flat_1[self.free_1] = p[: len(self.free_1)]
        flat_2[self.free_2] = p[len(self.free_1):]
        p1, p2 = self._arrays(flat_1, flat_2)
        return GeiPolicy.model_construct(p1=p1, p2=p2)

    def encode(self, policy: GeiPolicy) -> np.ndarray:
        p1, p2 = policy.arrays
        free = np.concatenate([p1.ravel()[self.free_1], p2.ravel()[self.free_2]])
        return logit(np.clip(free, 1e-6, 1 - 1e-6))

    def evaluate(self, policy: GeiPolicy) -> RateReport:
        return inner_bound_general(self.model, policy)

    def vector(self, policy: GeiPolicy) -> np.ndarray:
        p1, p2 = policy.arrays
        return np.concatenate([p1.ravel(), p2.ravel()])

    def canonical(self, policy: GeiPolicy, pi: np.ndarray) -> GeiPolicy:
        p1, p2 = policy.arrays
        flat_1, flat_2 = p1.ravel().copy(), p2.ravel().copy()
        dead = pi == 0.0
        flat_1[dead & (self.e1 > 0)] = 0.5
        flat_2[dead & (self.e2 > 0)] = 0.5
        a, b = self._arrays(flat_1, flat_2)
        return GeiPolicy(p1=a, p2=b)


class _Joint(_Problem):
    def __init__(self, model: Model, mode: OptimMode, weight: float):
        super().__init__(model, mode, weight)
        e1, e2 = energy_coordinates(model)
        self.allowed: List[np.ndarray] = []
        for a, b in zip(e1, e2):
            outcomes = [0]
            if b > 0:
                outcomes.append(1)
            if a > 0:
                outcomes.append(2)
            if a > 0 and b > 0:
                outcomes.append(3)
            self.allowed.append(np.asarray(outcomes))
        self.offsets = np.cumsum([0] + [len(k) - 1 for k in self.allowed])
        self.dim = int(self.offsets[-1])

    def _phi(self, theta: np.ndarray) -> np.ndarray:
        phi = np.zeros((len(self.allowed), 4))
        for s, outcomes in enumerate(self.allowed):
            phi[s, outcomes] = _simplex(theta[self.offsets[s]:self.offsets[s + 1]])
        return phi

    def decode(self, theta: np.ndarray) -> JointPolicy:
        return JointPolicy.model_construct(phi=[tuple(row) for row in self._phi(theta).tolist()])

    def encode(self, policy: JointPolicy) -> np.ndarray:
        phi = policy.array
        parts = [_simplex_logits(phi[s, outcomes]) for s, outcomes in enumerate(self.allowed)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        parts = [_dirichlet_logits(rng, len(outcomes)) for outcomes in self.allowed]
        return np.concatenate(parts)

    def evaluate(self, policy: JointPolicy) -> RateReport:
        if isinstance(self.model, NoiselessModel):
            return outer_bound_noiseless(self.model, policy)
        return outer_bound_general(self.model, policy)

    def vector(self, policy: JointPolicy) -> np.ndarray:
        return policy.array.ravel()

    def canonical(self, policy: JointPolicy, pi: np.ndarray) -> JointPolicy:
        phi = policy.array
        for s in np.flatnonzero(pi == 0.0):
            outcomes = self.allowed[s]
            phi[s] = 0.0
            phi[s, outcomes] = 1.0 / len(outcomes)
        return JointPolicy(phi=phi.tolist())


class _Lei(_Problem):
    def __init__(self, model: GeneralModel, mode: OptimMode, weight: float):
        super().__init__(model, mode, weight)
        self.n1 = 2 ** model.buffer_1 - 1
        self.n2 = 2 ** model.buffer_2 - 1
        self.dim = self.n1 + self.n2

    def decode(self, theta: np.ndarray) -> LeiPolicy:
        return LeiPolicy.model_construct(
            v_dist_1=_simplex(theta[: self.n1]).tolist(),
            v_dist_2=_simplex(theta[self.n1:]).tolist(),
        )

    def encode(self, policy: LeiPolicy) -> np.ndarray:
        return np.concatenate([_simplex_logits(policy.v_dist_1), _simplex_logits(policy.v_dist_2)])

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([_dirichlet_logits(rng, self.n1 + 1), _dirichlet_logits(rng, self.n2 + 1)])

    def evaluate(self, policy: LeiPolicy) -> RateReport:
        return lei_rates(self.model, policy)

    def vector(self, policy: LeiPolicy) -> np.ndarray:
        return np.asarray(policy.v_dist_1 + policy.v_dist_2)

    def canonical(self, policy: LeiPolicy, pi: np.ndarray) -> LeiPolicy:
        return LeiPolicy(v_dist_1=policy.v_dist_1, v_dist_2=policy.v_dist_2)


def _problem(model: Model, mode: OptimMode, weight: float) -> _Problem:
    if mode.noiseless != isinstance(model, NoiselessModel):
        kind = "noiseless" if isinstance(model, NoiselessModel) else "general"
        raise DomainError(f"Mode '{mode.value}' cannot run on a {kind} model")
    if mode in (OptimMode.INNER_NOISELESS, OptimMode.FIXED_NOISELESS):
        return _NoiselessProduct(model, mode, weight)
    if mode == OptimMode.INNER_GENERAL:
        return _GeneralProduct(model, mode, weight)
    if mode == OptimMode.LEI:
        return _Lei(model, mode, weight)
    return _Joint(model, mode, weight)


# =============================================================================
# MULTI-START SEARCH
# =============================================================================

@dataclass
class _Candidate:
    theta: np.ndarray
    objective: float
    n_evals: int
    converged: bool


def start_generator(seed: int, grid_index: int, start_index: int) -> np.random.Generator:
    """Private Philox stream for one optimizer start."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, grid_index, start_index])))


def _descend(problem: _Problem, x0: np.ndarray, cfg: OptimConfig) -> _Candidate:
    if problem.dim == 0:
        return _Candidate(theta=x0, objective=-problem.negative(x0), n_evals=1, converged=True)
    res = minimize(
        problem.negative,
        x0,
        method="Nelder-Mead",
        options={"maxiter": cfg.max_iters, "fatol": cfg.tol, "xatol": 1e-5, "adaptive": True},
    )
    return _Candidate(theta=np.asarray(res.x), objective=-float(res.fun), n_evals=int(res.nfev),
                      converged=bool(res.success))


def _search(
    problem: _Problem,
    cfg: OptimConfig,
    grid_index: int = 0,
    warm: Optional[np.ndarray] = None,
) -> Tuple[OptimResult, np.ndarray]:
    started = time.perf_counter()

    starts = [np.zeros(problem.dim)]
    if warm is not None and warm.shape == (problem.dim,):
        starts.append(np.asarray(warm, dtype=float))
    for index in range(len(starts), max(cfg.n_starts, len(starts))):
        starts.append(problem.random_start(start_generator(cfg.seed, grid_index, index)))

    workers = min(settings.threads, len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map() yields in start order
            candidates = list(pool.map(lambda x0: _descend(problem, x0, cfg), starts))
    else:
        candidates = [_descend(problem, x0, cfg) for x0 in starts]

    polish = _descend(problem, max(candidates, key=lambda c: c.objective).theta, cfg)
    candidates.append(polish)

    best_value = max(c.objective for c in candidates)
    tied = [c for c in candidates if c.objective >= best_value - cfg.tol]
    best = min(tied, key=lambda c: tuple(problem.vector(problem.decode(c.theta))))

    raw = problem.decode(best.theta)
    pi = np.asarray(list(problem.evaluate(raw).pi.values()))
    policy = problem.canonical(raw, pi)
    report = problem.evaluate(policy)
    objective = objective_value(report, problem.mode, problem.weight)

    n_evals = sum(c.n_evals for c in candidates) + 2
    n_converged = sum(c.converged for c in candidates[:-1])
    record_optimization_run(
        problem.mode.value,
        objective,
        n_evals,
        n_converged,
        len(starts),
        time.perf_counter() - started,
        metadata={"dim": problem.dim, "grid_index": grid_index},
    )
    result = OptimResult(
        mode=problem.mode,
        policy=policy,
        report=report,
        objective=objective,
        n_evals=n_evals,
        converged=best.converged,
    )
    return result, best.theta


def _fixed(model: NoiselessModel, p: float) -> OptimResult:
    policy = NoiselessPolicy.uniform(model.total_units, p)
    report = inner_bound_noiseless(model, policy)
    return OptimResult(
        mode=OptimMode.FIXED_NOISELESS,
        policy=policy,
        report=report,
        objective=report.sum,
        n_evals=1,
        converged=True,
    )


def optimize(
    model: Model,
    mode: Union[OptimMode, str],
    cfg: Optional[OptimConfig] = None,
    grid_index: int = 0,
    warm: Optional[np.ndarray] = None,
) -> Tuple[OptimResult, np.ndarray]:
    """Run one mode; also returns the optimum in search coordinates for warm starts."""
    mode = OptimMode(mode)
    cfg = cfg or OptimConfig()
    problem = _problem(model, mode, cfg.weight)
    if mode == OptimMode.FIXED_NOISELESS:
        result = _fixed(model, 0.5)
        return result, problem.encode(result.policy)
    return _search(problem, cfg, grid_index=grid_index, warm=warm)


def encode_policy(model: Model, mode: Union[OptimMode, str], policy: Policy) -> np.ndarray:
    """Search coordinates of ``policy`` under ``mode``, for use as ``optimize(..., warm=...)``.

    Product policies are lifted to joint ones for the outer modes.
    """
    mode = OptimMode(mode)
    problem = _problem(model, mode, 0.5)
    if mode.outer and isinstance(policy, (NoiselessPolicy, GeiPolicy)):
        policy = JointPolicy.from_product(model, policy)
    return problem.encode(policy)


def optimize_inner_noiseless(model: NoiselessModel, cfg: Optional[OptimConfig] = None) -> OptimResult:
    return optimize(model, OptimMode.INNER_NOISELESS, cfg)[0]


def optimize_outer_noiseless(model: NoiselessModel, cfg: Optional[OptimConfig] = None) -> OptimResult:
    return optimize(model, OptimMode.OUTER_NOISELESS, cfg)[0]


def evaluate_fixed_noiseless(model: NoiselessModel, p: float = 0.5) -> OptimResult:
    """The conventional codebook: the same probability p in every state."""
    try:
        p = require_probability(p, "p")
    except ValueError as e:
        raise DomainError(str(e)) from None
    return _fixed(model, p)


def optimize_inner_general(model: GeneralModel, cfg: Optional[OptimConfig] = None) -> OptimResult:
    return optimize(model, OptimMode.INNER_GENERAL, cfg)[0]


def optimize_outer_general(model: GeneralModel, cfg: Optional[OptimConfig] = None) -> OptimResult:
    return optimize(model, OptimMode.OUTER_GENERAL, cfg)[0]


def optimize_lei(model: GeneralModel, cfg: Optional[OptimConfig] = None) -> OptimResult:
    return optimize(model, OptimMode.LEI, cfg)[0]


# =============================================================================
# SWEEPS
# =============================================================================

def policy_columns(policy: Policy, model: Model) -> Dict[str, float]:
    """Flat, labelled view of a policy for tabular output."""
    if isinstance(policy, NoiselessPolicy):
        cols = {f"p1_{u}": p for u, p in enumerate(policy.p1)}
        cols.update({f"p2_{u}": p for u, p in enumerate(policy.p2)})
        return cols
    if isinstance(policy, GeiPolicy):
        p1, p2 = policy.arrays
        labels = [state_label(s) for s in model.states()]
        cols = {f"p1_{lab}": p for lab, p in zip(labels, p1.ravel())}
        cols.update({f"p2_{lab}": p for lab, p in zip(labels, p2.ravel())})
        return cols
    if isinstance(policy, JointPolicy):
        return {
            f"phi{outcome}_{state_label(s)}": row[k]
            for s, row in zip(model.states(), policy.phi)
            for k, outcome in enumerate(PHI_LABELS)
        }
    cols = {f"v1_{v}": p for v, p in enumerate(policy.v_dist_1)}
    cols.update({f"v2_{v}": p for v, p in enumerate(policy.v_dist_2)})
    return cols


def reference_columns(model: Model) -> Dict[str, float]:
    """Capacity-achieving input of each link with unlimited energy (general models only)."""
    if not isinstance(model, GeneralModel):
        return {}
    return {
        "p_star_12": capacity_achieving_input(model.kernel_12),
        "p_star_21": capacity_achieving_input(model.kernel_21),
    }


def sweep(
    model: Model,
    parameter: str,
    grid: Sequence[float],
    mode: Union[OptimMode, str],
    cfg: Optional[OptimConfig] = None,
    mirror: Sequence[str] = (),
    progress: Optional[Callable[[int, OptimResult], None]] = None,
) -> pd.DataFrame:
    """Optimize at every grid value, warm-starting from the previous optimum.

    ``mirror`` paths are set to the same value in lockstep. Rows follow grid order.
    """
    mode = OptimMode(mode)
    cfg = cfg or OptimConfig()
    rows: List[Dict[str, Any]] = []
    warm: Optional[np.ndarray] = None
    for index, value in enumerate(grid):
        point = with_parameter(model, parameter, value)
        for path in mirror:
            point = with_parameter(point, path, value)
        result, warm = optimize(point, mode, cfg, grid_index=index, warm=warm)
        record_sweep_point(mode.value, parameter, float(value), result.objective, index)
        logger.info(f"Sweep {parameter}={value}: objective={result.objective:.6f}")
        if progress is not None:
            progress(index, result)

        row: Dict[str, Any] = {
            "param": value,
            "objective": result.objective,
            "r1": result.report.r1,
            "r2": result.report.r2,
        }
        row.update({f"pi_{label}": p for label, p in result.report.pi.items()})
        row.update(policy_columns(result.policy, point))
        row.update(reference_columns(point))
        rows.append(row)

    frame = pd.DataFrame(rows)
    head = ["param", "objective", "r1", "r2"]
    pi_cols = [c for c in frame.columns if c.startswith("pi_")]
    rest = [c for c in frame.columns if c not in head and c not in pi_cols]
    return frame[head + pi_cols + rest]


def sweep_to_csv(frame: pd.DataFrame, target: Union[str, Path, TextIO]) -> None:
    frame.to_csv(target, index=False, float_format="%.10g")


def linear_grid(start: float, stop: float, steps: int) -> List[float]:
    """``steps`` evenly spaced values from ``start`` to ``stop`` inclusive."""
    if steps < 1:
        raise DomainError(f"steps={steps} must be >= 1")
    if steps == 1:
        return [float(start)]
    return np.linspace(start, stop, steps).tolist()
