"""Rate expressions: entropies, channel mutual information, inner and outer bounds.

All rates are in bits per channel use. The GEI decoders observe the channel
output Y (the link kernel) and know the state sequence, so per-state terms
are weighted by the stationary distribution and added.
"""

import logging
from enum import Enum
from typing import Any, Dict, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationInfo, field_validator
from scipy.optimize import minimize_scalar
from scipy.special import entr

from eecap.markov import (
    GeiPolicy,
    JointPolicy,
    NoiselessPolicy,
    build_general_chain,
    build_general_chain_joint,
    build_noiseless_chain,
    build_noiseless_chain_joint,
    stationary,
)
from eecap.model import BinaryKernel, GeneralModel, NoiselessModel
from eecap.validation import DomainError, PolicyError, require_probability, validate_distribution

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


class RateKind(str, Enum):
    INNER_NOISELESS = "inner-noiseless"
    OUTER_NOISELESS = "outer-noiseless"
    INNER_GENERAL = "inner-general"
    OUTER_SUM_GENERAL = "outer-sum-general"
    LEI = "lei"
    BASELINE = "baseline"


class RateReport(BaseModel):
    """Rate pair and sum rate with the stationary distribution that produced them.

    For outer reports ``sum`` is the separately computed sum-rate bound.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    r1: float
    r2: float
    sum: float
    kind: RateKind
    pi: Dict[str, float] = {}

    @field_validator("r1", "r2", "sum", mode="before")
    @classmethod
    def _non_negative(cls, v: Any, info: ValidationInfo) -> float:
        value = float(v)
        # Round-off from entropy differences
        if -1e-12 < value < 0.0:
            return 0.0
        if not value >= 0.0:
            raise ValueError(f"{info.field_name}={value!r} must be a non-negative rate")
        return value


class LeiPolicy(BaseModel):
    """Shannon-strategy input distributions for local energy information.

    ``v_dist_j[v]`` is the probability of bit-vector ``v`` (length B_j);
    bit ``u - 1`` of ``v`` is sent when the local battery holds ``u`` units.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    v_dist_1: List[float]
    v_dist_2: List[float]

    @field_validator("v_dist_1", "v_dist_2", mode="before")
    @classmethod
    def _check_distribution(cls, v: Any, info: ValidationInfo) -> List[float]:
        if not isinstance(v, (list, tuple, np.ndarray)) or len(v) < 2:
            raise PolicyError(f"'{info.field_name}' needs at least two entries")
        n = len(v)
        if n & (n - 1):
            raise PolicyError(f"'{info.field_name}' length {n} is not a power of two")
        check = validate_distribution(v, info.field_name)
        if not check["valid"]:
            raise PolicyError("; ".join(check["errors"]))
        return [float(x) for x in v]

    @classmethod
    def bernoulli(cls, model: GeneralModel, q1: float, q2: float) -> "LeiPolicy":
        """Independent bits: every level sends "1" with probability q_j."""
        return cls(
            v_dist_1=_bernoulli_vectors(model.buffer_1, q1).tolist(),
            v_dist_2=_bernoulli_vectors(model.buffer_2, q2).tolist(),
        )

    def check_model(self, model: GeneralModel) -> None:
        for name, dist, buffer in (
            ("v_dist_1", self.v_dist_1, model.buffer_1),
            ("v_dist_2", self.v_dist_2, model.buffer_2),
        ):
            if len(dist) != 2 ** buffer:
                raise PolicyError(f"'{name}' has {len(dist)} entries, buffer {buffer} needs {2 ** buffer}")

    def induced_policy(self, model: GeneralModel) -> GeiPolicy:
        """GEI policy with p_{j|(u1,u2)} = P(bit u_j of V_j is 1), independent of the peer."""
        self.check_model(model)
        ones_1 = _bit_marginals(np.asarray(self.v_dist_1), model.buffer_1)
        ones_2 = _bit_marginals(np.asarray(self.v_dist_2), model.buffer_2)
        b1, b2 = model.shape
        p1 = np.repeat(ones_1[:, None], b2, axis=1)
        p2 = np.repeat(ones_2[None, :], b1, axis=0)
        return GeiPolicy(p1=p1.tolist(), p2=p2.tolist())


def level_bits(buffer: int) -> np.ndarray:
    """``bits[v, u]``: the symbol vector v sends at level u (0 at u = 0)."""
    v = np.arange(2 ** buffer)[:, None]
    u = np.arange(buffer + 1)[None, :]
    return np.where(u == 0, 0, (v >> np.maximum(u - 1, 0)) & 1)


def _bernoulli_vectors(buffer: int, q: float) -> np.ndarray:
    try:
        q = require_probability(q, "q")
    except ValueError as e:
        raise PolicyError(str(e)) from None
    ones = level_bits(buffer)[:, 1:].sum(axis=1)
    return q ** ones * (1.0 - q) ** (buffer - ones)


def _bit_marginals(dist: np.ndarray, buffer: int) -> np.ndarray:
    ones = dist @ level_bits(buffer)
    ones[0] = 0.0
    return np.clip(ones, 0.0, 1.0)


# =============================================================================
# ENTROPY AND MUTUAL INFORMATION
# =============================================================================

def entropy_of(p: Union[float, np.ndarray]) -> np.ndarray:
    """Vectorized binary entropy in bits, no validation."""
    return (entr(p) + entr(1.0 - np.asarray(p))) / LN2


def binary_entropy(p: float) -> float:
    """H(p) in bits, with 0 log 0 = 0."""
    try:
        value = require_probability(p, "p")
    except ValueError as e:
        raise DomainError(str(e)) from None
    return float(entropy_of(value))


def entropy_bits(dist: Union[Sequence[float], np.ndarray]) -> float:
    """Entropy in bits of a probability table of any shape."""
    return float(np.sum(entr(np.asarray(dist, dtype=float))) / LN2)


def mutual_information_bits(joint: Union[Sequence[Sequence[float]], np.ndarray]) -> float:
    """I(X; Y) from a joint table ``joint[x, y]`` by brute force."""
    table = np.asarray(joint, dtype=float)
    return entropy_bits(table.sum(axis=1)) + entropy_bits(table.sum(axis=0)) - entropy_bits(table)


def channel_mutual_information(inputs: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """I(X; Y) for each row of ``inputs`` (input distributions) through ``channel``."""
    inputs = np.atleast_2d(inputs)
    out = inputs @ channel
    h_out = np.sum(entr(out), axis=1) / LN2
    h_rows = np.sum(entr(channel), axis=1) / LN2
    return np.maximum(h_out - inputs @ h_rows, 0.0)


def bac_mutual_information(p: Union[float, np.ndarray], kernel: BinaryKernel) -> Union[float, np.ndarray]:
    """H((1-p) P01 + p P11) - [p H(P11) + (1-p) H(P01)]."""
    p_arr = np.asarray(p, dtype=float)
    value = entropy_of((1.0 - p_arr) * kernel.p01 + p_arr * kernel.p11) - (
        p_arr * entropy_of(kernel.p11) + (1.0 - p_arr) * entropy_of(kernel.p01)
    )
    value = np.maximum(value, 0.0)
    return float(value) if value.ndim == 0 else value


def capacity_achieving_input(kernel: BinaryKernel) -> float:
    """Input probability of "1" maximizing I(X; Y) with no energy limitation."""
    if abs(kernel.p11 - kernel.p01) < 1e-15:
        return 0.5
    result = minimize_scalar(
        lambda p: -bac_mutual_information(p, kernel),
        bounds=(0.0, 1.0),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(result.x)


# =============================================================================
# BOUNDS
# =============================================================================

def inner_bound_noiseless(model: NoiselessModel, policy: NoiselessPolicy) -> RateReport:
    """Achievable rates with independent per-state codebooks."""
    chain = build_noiseless_chain(model, policy)
    dist = stationary(chain, model.initial)
    p1 = np.asarray(policy.p1)
    p2 = np.asarray(policy.p2)[::-1]
    r1 = float(dist.pi @ entropy_of(p1))
    r2 = float(dist.pi @ entropy_of(p2))
    logger.debug(f"Inner noiseless bound U={model.total_units}: r1={r1:.6f} r2={r2:.6f}")
    return RateReport(r1=r1, r2=r2, sum=r1 + r2, kind=RateKind.INNER_NOISELESS, pi=dist.as_dict())


def outer_bound_noiseless(model: NoiselessModel, joint: JointPolicy) -> RateReport:
    """R1 <= sum pi H(X1|X2,u), R2 <= sum pi H(X2|X1,u), R1+R2 <= sum pi H(X1,X2|u)."""
    chain = build_noiseless_chain_joint(model, joint)
    dist = stationary(chain, model.initial)
    phi = joint.array
    h_joint = np.sum(entr(phi), axis=1) / LN2
    h_x1 = entropy_of(phi[:, 2] + phi[:, 3])
    h_x2 = entropy_of(phi[:, 1] + phi[:, 3])
    return RateReport(
        r1=float(dist.pi @ (h_joint - h_x2)),
        r2=float(dist.pi @ (h_joint - h_x1)),
        sum=float(dist.pi @ h_joint),
        kind=RateKind.OUTER_NOISELESS,
        pi=dist.as_dict(),
    )


def inner_bound_general(model: GeneralModel, policy: GeiPolicy) -> RateReport:
    """Per-state binary-channel mutual information over the link kernels."""
    chain = build_general_chain(model, policy)
    dist = stationary(chain, model.initial)
    p1, p2 = policy.arrays
    r1 = float(dist.pi @ bac_mutual_information(p1.ravel(), model.kernel_12))
    r2 = float(dist.pi @ bac_mutual_information(p2.ravel(), model.kernel_21))
    return RateReport(r1=r1, r2=r2, sum=r1 + r2, kind=RateKind.INNER_GENERAL, pi=dist.as_dict())


def product_channel(model: GeneralModel) -> np.ndarray:
    """(x1, x2) -> (y2, y1) kernel, inputs and outputs indexed 2a + b."""
    return np.kron(model.kernel_12.matrix, model.kernel_21.matrix)


def outer_state_terms(model: GeneralModel, joint: JointPolicy) -> np.ndarray:
    """I(X1, X2; Y1, Y2 | state) for every state."""
    return channel_mutual_information(joint.array, product_channel(model))


def outer_sum_general(model: GeneralModel, joint: JointPolicy) -> float:
    """sum over states of pi * I(X1, X2; Y1, Y2 | state)."""
    chain = build_general_chain_joint(model, joint)
    dist = stationary(chain, model.initial)
    return float(dist.pi @ outer_state_terms(model, joint))


def _conditional_terms(phi: np.ndarray, channel: np.ndarray, sender: int) -> np.ndarray:
    """I(X_sender; Y | X_other, state), averaged over the other node's symbol."""
    grid = phi.reshape(-1, 2, 2)  # [state, x1, x2]
    if sender == 2:
        grid = grid.transpose(0, 2, 1)
    total = np.zeros(phi.shape[0])
    for other in (0, 1):
        rows = grid[:, :, other]
        mass = rows.sum(axis=1)
        cond = np.divide(rows, mass[:, None], out=np.full_like(rows, 0.5), where=mass[:, None] > 0)
        total += mass * channel_mutual_information(cond, channel)
    return total


def outer_bound_general(model: GeneralModel, joint: JointPolicy) -> RateReport:
    """Individual bounds I(X1;Y2|X2) and I(X2;Y1|X1), plus the joint sum-rate bound."""
    chain = build_general_chain_joint(model, joint)
    dist = stationary(chain, model.initial)
    phi = joint.array
    r1 = float(dist.pi @ _conditional_terms(phi, model.kernel_12.matrix, sender=1))
    r2 = float(dist.pi @ _conditional_terms(phi, model.kernel_21.matrix, sender=2))
    total = float(dist.pi @ channel_mutual_information(phi, product_channel(model)))
    return RateReport(r1=r1, r2=r2, sum=total, kind=RateKind.OUTER_SUM_GENERAL, pi=dist.as_dict())


def lei_rates(model: GeneralModel, lei: LeiPolicy) -> RateReport:
    """Shannon-strategy rates I(V1; Y2) and I(V2; Y1) under local energy information.

    p(v1, y2) = p(v1) sum_{u1} pi(u1) K12[bit_{u1}(v1), y2], symmetrically for node 2.
    """
    induced = lei.induced_policy(model)
    chain = build_general_chain(model, induced)
    dist = stationary(chain, model.initial)

    rates = []
    for v_dist, marginal, buffer, kernel in (
        (lei.v_dist_1, dist.marginal(1), model.buffer_1, model.kernel_12),
        (lei.v_dist_2, dist.marginal(2), model.buffer_2, model.kernel_21),
    ):
        bits = level_bits(buffer)  # [v, u]
        p_one = kernel.matrix[:, 1][bits] @ marginal[: buffer + 1]
        p_v = np.asarray(v_dist)
        joint = np.column_stack([p_v * (1.0 - p_one), p_v * p_one])
        rates.append(mutual_information_bits(joint))

    r1, r2 = rates
    return RateReport(r1=r1, r2=r2, sum=r1 + r2, kind=RateKind.LEI, pi=dist.as_dict())


# =============================================================================
# BASELINES
# =============================================================================

def baseline_frame_rate(F: int) -> float:
    """Pulse position in frames of F uses: log2(F)/F bits per use."""
    if isinstance(F, bool) or int(F) != F or F < 2:
        raise DomainError(f"Frame length F={F!r} must be an integer >= 2")
    return float(np.log2(F) / F)


def baseline_variable_length_rate() -> float:
    """Codewords "1" and "01": one bit per 3/2 uses on average."""
    return 1.0 / (0.5 * 1 + 0.5 * 2)


def baseline_report(variant: str, F: int = 2) -> RateReport:
    if variant == "frame":
        rate = baseline_frame_rate(F)
    elif variant == "variable":
        rate = baseline_variable_length_rate()
    else:
        raise DomainError(f"Unknown baseline variant '{variant}' (expected 'frame' or 'variable')")
    return RateReport(r1=rate / 2, r2=rate / 2, sum=rate, kind=RateKind.BASELINE)
