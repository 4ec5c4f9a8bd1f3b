"""Markov chains over battery states and their stationary distributions.

Noiseless model: a birth-death chain over Node 1's energy u, driven by the
per-state symbol distribution phi_{x1,x2|u}. General model: a chain over
(u1, u2) whose nine one-step moves come from enumerating the 16 outcomes
(x1, x2, h1, h2) with clamping at the buffer capacities.

Matrices are row-stochastic: row = source state, column = destination.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationInfo, field_validator, model_validator
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from eecap.config import settings
from eecap.model import GeneralModel, Model, NoiselessModel, State, state_label
from eecap.telemetry import record_stationary_residual
from eecap.validation import (
    ChainError,
    ConvergenceError,
    PolicyError,
    require_probability,
    standardize_error_message,
    validate_distribution,
    validate_stochastic_rows,
)

logger = logging.getLogger(__name__)

ROW_TOL = 1e-10
SIMPLEX_TOL = 1e-12

# Column order of every per-state symbol distribution
PHI_LABELS = ("00", "01", "10", "11")


# =============================================================================
# POLICIES
# =============================================================================

class NoiselessPolicy(BaseModel):
    """Transmit-"1" probabilities by a node's own energy level, u = 0..U.

    Node 2's probability in chain state u is ``p2[U - u]``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    p1: List[float]
    p2: List[float]

    @field_validator("p1", "p2", mode="before")
    @classmethod
    def _check_entries(cls, v: Any, info: ValidationInfo) -> List[float]:
        if not isinstance(v, (list, tuple, np.ndarray)) or len(v) < 2:
            raise PolicyError(
                standardize_error_message("dimension", info.field_name, "need at least two levels")
            )
        values = [require_probability(x, f"{info.field_name}[{k}]") for k, x in enumerate(v)]
        if values[0] != 0.0:
            raise PolicyError(
                standardize_error_message("constraint", info.field_name, "entry 0 must be 0")
            )
        return values

    @model_validator(mode="after")
    def _check_lengths(self) -> "NoiselessPolicy":
        if len(self.p1) != len(self.p2):
            raise PolicyError(
                standardize_error_message("dimension", "p2", f"{len(self.p2)} != {len(self.p1)}")
            )
        return self

    @classmethod
    def uniform(cls, total_units: int, p: float = 0.5) -> "NoiselessPolicy":
        levels = [0.0] + [p] * total_units
        return cls(p1=levels, p2=list(levels))

    def check_model(self, model: NoiselessModel) -> None:
        if len(self.p1) != model.n_states:
            raise PolicyError(
                standardize_error_message(
                    "dimension", "policy", f"{len(self.p1)} levels for U={model.total_units}"
                )
            )


def _check_grid(v: Any, name: str) -> List[List[float]]:
    if not isinstance(v, (list, tuple, np.ndarray)) or len(v) < 2:
        raise PolicyError(standardize_error_message("dimension", name, "need at least two rows"))
    rows = [list(row) for row in v]
    width = len(rows[0])
    if width < 2 or any(len(row) != width for row in rows):
        raise PolicyError(standardize_error_message("dimension", name, "rows must be rectangular"))
    return [
        [require_probability(x, f"{name}[{a}][{b}]") for b, x in enumerate(row)]
        for a, row in enumerate(rows)
    ]


class GeiPolicy(BaseModel):
    """Transmit-"1" probabilities over (u1, u2), stored as rows ``p[u1][u2]``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p1: List[List[float]]
    p2: List[List[float]]

    @field_validator("p1", "p2", mode="before")
    @classmethod
    def _check_entries(cls, v: Any, info: ValidationInfo) -> List[List[float]]:
        return _check_grid(v, info.field_name)

    @model_validator(mode="after")
    def _check_constraints(self) -> "GeiPolicy":
        if np.shape(self.p1) != np.shape(self.p2):
            raise PolicyError(standardize_error_message("dimension", "p2", "shape differs from p1"))
        if any(x != 0.0 for x in self.p1[0]):
            raise PolicyError(standardize_error_message("constraint", "p1", "p1[0][*] must be 0"))
        if any(row[0] != 0.0 for row in self.p2):
            raise PolicyError(standardize_error_message("constraint", "p2", "p2[*][0] must be 0"))
        return self

    @classmethod
    def uniform(cls, model: GeneralModel, p: float = 0.5) -> "GeiPolicy":
        b1, b2 = model.buffer_1, model.buffer_2
        p1 = [[0.0 if u1 == 0 else p for _ in range(b2 + 1)] for u1 in range(b1 + 1)]
        p2 = [[0.0 if u2 == 0 else p for u2 in range(b2 + 1)] for _ in range(b1 + 1)]
        return cls(p1=p1, p2=p2)

    @property
    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.p1, dtype=float), np.asarray(self.p2, dtype=float)

    def check_model(self, model: GeneralModel) -> None:
        if np.shape(self.p1) != model.shape:
            raise PolicyError(
                standardize_error_message(
                    "dimension", "policy", f"{np.shape(self.p1)} for buffers {model.shape}"
                )
            )


class JointPolicy(BaseModel):
    """Per-state joint distribution [phi00, phi01, phi10, phi11], in model state order."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    phi: List[Tuple[float, float, float, float]]

    @field_validator("phi", mode="before")
    @classmethod
    def _check_simplex(cls, v: Any) -> List[Tuple[float, float, float, float]]:
        if not isinstance(v, (list, tuple, np.ndarray)) or len(v) < 2:
            raise PolicyError(standardize_error_message("dimension", "phi", "need at least two states"))
        rows = []
        for k, row in enumerate(v):
            if len(row) != 4:
                raise PolicyError(standardize_error_message("dimension", f"phi[{k}]", "need 4 entries"))
            check = validate_distribution(row, f"phi[{k}]", tol=SIMPLEX_TOL)
            if not check["valid"]:
                raise PolicyError("; ".join(check["errors"]))
            rows.append(tuple(float(x) for x in row))
        return rows

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=float)

    @classmethod
    def from_product(
        cls, model: Model, policy: Union[NoiselessPolicy, GeiPolicy]
    ) -> "JointPolicy":
        """Joint distribution of independently drawn symbols."""
        if isinstance(model, NoiselessModel):
            phi = noiseless_phi(model, policy)
        else:
            phi = general_phi(model, policy)
        return cls(phi=phi.tolist())

    def check_model(self, model: Model) -> None:
        phi = self.array
        if phi.shape[0] != model.n_states:
            raise PolicyError(
                standardize_error_message(
                    "dimension", "phi", f"{phi.shape[0]} states, model has {model.n_states}"
                )
            )
        e1, e2 = energy_coordinates(model)
        if np.any(phi[e1 == 0][:, 2:] != 0.0):
            raise PolicyError(
                standardize_error_message("constraint", "phi", "Node 1 sends '1' with no energy")
            )
        if np.any(phi[e2 == 0][:, [1, 3]] != 0.0):
            raise PolicyError(
                standardize_error_message("constraint", "phi", "Node 2 sends '1' with no energy")
            )


def energy_coordinates(model: Model) -> Tuple[np.ndarray, np.ndarray]:
    """Energy held by each node in every state, in state order."""
    if isinstance(model, NoiselessModel):
        u = np.arange(model.n_states)
        return u, model.total_units - u
    states = np.asarray(model.states())
    return states[:, 0], states[:, 1]


def _product_phi(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.column_stack([(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b])


def noiseless_phi(model: NoiselessModel, policy: NoiselessPolicy) -> np.ndarray:
    """phi_{x1,x2|u} for u = 0..U, using p1[u] and p2[U - u]."""
    policy.check_model(model)
    p1 = np.asarray(policy.p1, dtype=float)
    p2 = np.asarray(policy.p2, dtype=float)
    return _product_phi(p1, p2[::-1])


def general_phi(model: GeneralModel, policy: GeiPolicy) -> np.ndarray:
    """phi_{x1,x2|(u1,u2)} for every state in row-major order."""
    policy.check_model(model)
    p1, p2 = policy.arrays
    return _product_phi(p1.ravel(), p2.ravel())


# =============================================================================
# CHAINS
# =============================================================================

@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic transition matrix with its state labelling."""

    entries: np.ndarray
    states: List[State]
    state_index: Dict[State, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=float)
        check = validate_stochastic_rows(entries, "transition matrix", ROW_TOL)
        if not check["valid"]:
            raise ChainError("; ".join(check["errors"]))
        if entries.shape[0] != len(self.states):
            raise ChainError(
                standardize_error_message(
                    "dimension", "states", f"{len(self.states)} labels for {entries.shape[0]} rows"
                )
            )
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "state_index", {s: k for k, s in enumerate(self.states)})

    @classmethod
    def from_array(cls, entries: Any, states: Optional[Sequence[State]] = None) -> "TransitionMatrix":
        arr = np.asarray(entries, dtype=float)
        labels = list(states) if states is not None else list(range(arr.shape[0]))
        return cls(entries=arr, states=labels)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, state: Any) -> int:
        key = tuple(state) if isinstance(state, (list, tuple)) else state
        try:
            return self.state_index[key]
        except (KeyError, TypeError):
            raise ChainError(f"Unknown state {state!r}") from None


def _noiseless_entries(phi: np.ndarray) -> np.ndarray:
    down = phi[1:, 2]
    up = phi[:-1, 1]
    return np.diag(phi[:, 0] + phi[:, 3]) + np.diag(down, -1) + np.diag(up, 1)


def build_noiseless_chain(model: NoiselessModel, policy: NoiselessPolicy) -> TransitionMatrix:
    """Birth-death chain: q(u, u-1) = phi10|u, q(u, u+1) = phi01|u."""
    phi = noiseless_phi(model, policy)
    return TransitionMatrix(entries=_noiseless_entries(phi), states=model.states())


def build_noiseless_chain_joint(model: NoiselessModel, joint: JointPolicy) -> TransitionMatrix:
    joint.check_model(model)
    return TransitionMatrix(entries=_noiseless_entries(joint.array), states=model.states())


def _general_entries(model: GeneralModel, phi: np.ndarray) -> np.ndarray:
    b1, b2 = model.buffer_1, model.buffer_2
    q12 = model.energy_12.matrix  # x1 -> h2
    q21 = model.energy_21.matrix  # x2 -> h1
    states = np.asarray(model.states())
    u1, u2 = states[:, 0], states[:, 1]
    rows = np.arange(len(states))
    entries = np.zeros((len(states), len(states)))
    for x1 in (0, 1):
        for x2 in (0, 1):
            weight = phi[:, 2 * x1 + x2]
            for h1 in (0, 1):
                for h2 in (0, 1):
                    prob = weight * q21[x2, h1] * q12[x1, h2]
                    # Negative levels only arise with zero weight
                    n1 = np.clip(u1 - x1 + h1, 0, b1)
                    n2 = np.clip(u2 - x2 + h2, 0, b2)
                    np.add.at(entries, (rows, n1 * (b2 + 1) + n2), prob)
    return entries


def build_general_chain(model: GeneralModel, policy: GeiPolicy) -> TransitionMatrix:
    """General chain from a product policy; "+" moves at a full buffer fold into staying put."""
    phi = general_phi(model, policy)
    return TransitionMatrix(entries=_general_entries(model, phi), states=model.states())


def build_general_chain_joint(model: GeneralModel, joint: JointPolicy) -> TransitionMatrix:
    joint.check_model(model)
    return TransitionMatrix(entries=_general_entries(model, joint.array), states=model.states())


def build_chain(model: Model, policy: Union[NoiselessPolicy, GeiPolicy, JointPolicy]) -> TransitionMatrix:
    if isinstance(model, NoiselessModel):
        if isinstance(policy, JointPolicy):
            return build_noiseless_chain_joint(model, policy)
        return build_noiseless_chain(model, policy)
    if isinstance(policy, JointPolicy):
        return build_general_chain_joint(model, policy)
    return build_general_chain(model, policy)


# =============================================================================
# STATIONARY DISTRIBUTION
# =============================================================================

@dataclass(frozen=True)
class StationaryDistribution:
    """Limiting occupancy over the states of a chain."""

    pi: np.ndarray
    states: List[State]
    method: str = "gth"
    residual: float = 0.0

    def probability(self, state: State) -> float:
        return float(self.pi[self.states.index(state)])

    def marginal(self, node: int) -> np.ndarray:
        """Occupancy of one node's energy level in a general-model distribution."""
        if node not in (1, 2):
            raise ChainError(standardize_error_message("invalid", "node", f"{node} not in {{1, 2}}"))
        if not self.states or not isinstance(self.states[0], tuple):
            raise ChainError("marginal() needs (u1, u2) states")
        levels = np.asarray([s[node - 1] for s in self.states])
        out = np.zeros(levels.max() + 1)
        np.add.at(out, levels, self.pi)
        return out

    def as_dict(self) -> Dict[str, float]:
        return {state_label(s): float(p) for s, p in zip(self.states, self.pi)}


def gth_solve(entries: np.ndarray) -> np.ndarray:
    """Stationary vector of an irreducible row-stochastic matrix by GTH elimination.

    Only off-diagonal entries are used, so no subtractions occur.
    """
    a = np.array(entries, dtype=float)
    n = a.shape[0]
    x = np.zeros(n)

    for i in range(n - 1):
        scale = np.sum(a[i, i + 1:n])
        if scale <= 0:
            n = i + 1
            break
        a[i + 1:n, i] /= scale
        a[i + 1:n, i + 1:n] += np.outer(a[i + 1:n, i], a[i, i + 1:n])

    x[n - 1] = 1.0
    for i in range(n - 2, -1, -1):
        x[i] = np.dot(x[i + 1:n], a[i + 1:n, i])
    return x / np.sum(x)


def _canonical_limit(sub: np.ndarray, start: int, n_classes: int, labels: np.ndarray) -> np.ndarray:
    """Cesaro limit from ``start`` via closed classes and absorption probabilities."""
    src, dst = np.nonzero(sub > 0)
    leaving = labels[src] != labels[dst]
    open_classes = set(labels[src[leaving]].tolist())
    closed = [c for c in range(n_classes) if c not in open_classes]

    pi = np.zeros(sub.shape[0])
    if labels[start] in closed:
        members = np.flatnonzero(labels == labels[start])
        pi[members] = gth_solve(sub[np.ix_(members, members)])
        return pi

    transient = np.flatnonzero(~np.isin(labels, closed))
    pos = int(np.searchsorted(transient, start))
    fundamental = np.eye(len(transient)) - sub[np.ix_(transient, transient)]
    for c in closed:
        members = np.flatnonzero(labels == c)
        inflow = sub[np.ix_(transient, members)].sum(axis=1)
        absorbed = linalg.solve(fundamental, inflow)[pos]
        if absorbed > 0:
            pi[members] += absorbed * gth_solve(sub[np.ix_(members, members)])
    return pi


def _lazy_power_limit(sub: np.ndarray, start: int, tol: float, max_iter: int) -> Tuple[np.ndarray, int]:
    """Row ``start`` of the lazy chain (I + P)/2 raised to 2^k until it settles."""
    m = 0.5 * (np.eye(sub.shape[0]) + sub)
    row = m[start].copy()
    steps = 1
    while True:
        m = m @ m
        steps *= 2
        nxt = m[start].copy()
        diff = float(np.max(np.abs(nxt - row)))
        residual = float(np.max(np.abs(nxt @ sub - nxt)))
        row = nxt
        if diff < tol and residual < tol:
            return row, steps
        if steps >= max_iter:
            raise ConvergenceError("Cesaro iteration hit its cap", residual=residual, iterations=steps)


def stationary(
    P: TransitionMatrix,
    initial: State,
    method: str = "auto",
) -> StationaryDistribution:
    """Limiting occupancy of the chain started from the point mass on ``initial``.

    ``auto``: GTH on the class reachable from ``initial`` when it is irreducible
    (the Cesaro limit of an irreducible chain is its unique stationary vector,
    whatever its period); otherwise the exact Cesaro limit from the canonical
    decomposition. ``cesaro``: powers of the lazy chain, same limit.
    Unreachable states keep probability 0.
    """
    if method not in ("auto", "cesaro"):
        raise ChainError(standardize_error_message("invalid", "method", f"{method!r}"))
    start = P.index(initial)
    graph = csr_matrix((P.entries > 0).astype(float))
    reach = np.sort(breadth_first_order(graph, start, directed=True, return_predecessors=False))
    sub = P.entries[np.ix_(reach, reach)]
    local_start = int(np.searchsorted(reach, start))

    if method == "cesaro":
        sub_pi, steps = _lazy_power_limit(
            sub, local_start, settings.stationary_tol, settings.cesaro_max_iter
        )
        used = "cesaro"
        logger.debug(f"Lazy-chain limit reached after {steps} steps")
    else:
        n_classes, labels = connected_components(
            csr_matrix((sub > 0).astype(float)), directed=True, connection="strong"
        )
        if n_classes == 1:
            sub_pi = gth_solve(sub)
            used = "gth"
        else:
            sub_pi = _canonical_limit(sub, local_start, n_classes, labels)
            used = "canonical"

    pi = np.zeros(P.n_states)
    pi[reach] = np.clip(sub_pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.max(np.abs(pi @ P.entries - pi)))
    record_stationary_residual(P.n_states, residual, used)
    return StationaryDistribution(pi=pi, states=list(P.states), method=used, residual=residual)


def fixed_point_residual(
    model: Model,
    policy: Union[NoiselessPolicy, GeiPolicy, JointPolicy],
    pi: Union[StationaryDistribution, Sequence[float], np.ndarray],
) -> float:
    """Max-norm violation of the balance equations by ``pi``.

    Noiseless model: pi_u against pi_u(phi00 + phi11)|u + pi_{u-1} phi01|u-1
    + pi_{u+1} phi10|u+1. General model: max |pi P - pi|.
    """
    vec = np.asarray(pi.pi if isinstance(pi, StationaryDistribution) else pi, dtype=float)
    if vec.shape != (model.n_states,):
        raise ChainError(
            standardize_error_message("dimension", "pi", f"{vec.shape} for {model.n_states} states")
        )
    if isinstance(model, GeneralModel):
        chain = build_chain(model, policy)
        return float(np.max(np.abs(vec @ chain.entries - vec)))

    if isinstance(policy, JointPolicy):
        policy.check_model(model)
        phi = policy.array
    else:
        phi = noiseless_phi(model, policy)
    balance = vec * (phi[:, 0] + phi[:, 3])
    balance[1:] += vec[:-1] * phi[:-1, 1]
    balance[:-1] += vec[1:] * phi[1:, 2]
    return float(np.max(np.abs(vec - balance)))
