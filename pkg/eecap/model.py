"""System parameters and the elementary binary kernels.

Every chain and rate computation is built from three kernels: the noisy
link (symbol sent by Node i -> symbol received by Node j), the harvest
stage (symbol received -> energy unit stored) and their cascade.

Kernel convention for both stages: an input "0" becomes "1" with the
replenishment probability; an input "1" becomes "0" when the unit is lost
and not simultaneously replaced, i.e. with probability loss * (1 - replenish).
With both probabilities zero the kernel is the identity.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from eecap.validation import DomainError, require_probability, validate_required_fields

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-12

State = Union[int, Tuple[int, int]]


class _FlipParams(BaseModel):
    """Replenishment and loss probabilities of one binary stage."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    replenish: float = 0.0
    loss: float = 0.0

    @field_validator("replenish", "loss", mode="before")
    @classmethod
    def _check_probability(cls, v: Any, info: ValidationInfo) -> float:
        return require_probability(v, info.field_name)


class ChannelParams(_FlipParams):
    """Per-use replenishment from the channel and in-transit loss on a link i -> j."""


class HarvestParams(_FlipParams):
    """Local replenishment and processing loss at a node."""


class BinaryKernel(BaseModel):
    """Row-stochastic 2x2 kernel; ``pab`` is the probability of output ``b`` given input ``a``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p00: float
    p01: float
    p10: float
    p11: float

    @model_validator(mode="after")
    def _check_stochastic(self) -> "BinaryKernel":
        for name in ("p00", "p01", "p10", "p11"):
            value = getattr(self, name)
            if not (-KERNEL_TOL <= value <= 1.0 + KERNEL_TOL):
                raise ValueError(f"kernel entry {name}={value!r} not in [0, 1]")
        if abs(self.p00 + self.p01 - 1.0) > KERNEL_TOL or abs(self.p10 + self.p11 - 1.0) > KERNEL_TOL:
            raise ValueError("kernel rows must sum to 1")
        return self

    @classmethod
    def identity(cls) -> "BinaryKernel":
        return cls(p00=1.0, p01=0.0, p10=0.0, p11=1.0)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "BinaryKernel":
        m = np.clip(np.asarray(matrix, dtype=float), 0.0, 1.0)
        return cls(p00=m[0, 0], p01=m[0, 1], p10=m[1, 0], p11=m[1, 1])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.p00, self.p01], [self.p10, self.p11]])


def _flip_kernel(params: _FlipParams) -> BinaryKernel:
    p10 = params.loss * (1.0 - params.replenish)
    return BinaryKernel(
        p00=1.0 - params.replenish,
        p01=params.replenish,
        p10=p10,
        p11=1.0 - p10,
    )


def channel_kernel(params: ChannelParams) -> BinaryKernel:
    """Kernel of a link: transmitted symbol -> received symbol."""
    return _flip_kernel(params)


def harvest_kernel(params: HarvestParams) -> BinaryKernel:
    """Kernel at a node: received symbol -> harvested energy (at most one unit)."""
    return _flip_kernel(params)


def cascade(channel: BinaryKernel, harvest: BinaryKernel) -> BinaryKernel:
    """Transmitted symbol -> harvested energy: the matrix product channel . harvest."""
    return BinaryKernel.from_matrix(channel.matrix @ harvest.matrix)


class NoiselessModel(BaseModel):
    """Lossless two-way system holding ``total_units`` energy units in all.

    The state is Node 1's energy ``u``; Node 2 holds ``total_units - u``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    total_units: int = Field(ge=1)
    initial_u1: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_initial(self) -> "NoiselessModel":
        if self.initial_u1 > self.total_units:
            raise ValueError(
                f"initial_u1={self.initial_u1} exceeds total_units={self.total_units}"
            )
        return self

    @property
    def n_states(self) -> int:
        return self.total_units + 1

    def states(self) -> List[int]:
        return list(range(self.total_units + 1))

    @property
    def initial(self) -> int:
        return self.initial_u1


class GeneralModel(BaseModel):
    """Two nodes with finite buffers, noisy links and local harvesting."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    buffer_1: int = Field(ge=1)
    buffer_2: int = Field(ge=1)
    initial_state: Tuple[int, int] = (0, 0)
    link_12: ChannelParams = ChannelParams()
    link_21: ChannelParams = ChannelParams()
    node_1: HarvestParams = HarvestParams()
    node_2: HarvestParams = HarvestParams()

    @model_validator(mode="after")
    def _check_initial(self) -> "GeneralModel":
        u1, u2 = self.initial_state
        if not (0 <= u1 <= self.buffer_1 and 0 <= u2 <= self.buffer_2):
            raise ValueError(
                f"initial_state {self.initial_state} outside "
                f"[0,{self.buffer_1}]x[0,{self.buffer_2}]"
            )
        return self

    @classmethod
    def symmetric(
        cls,
        buffer: int = 1,
        p_rc: float = 0.0,
        p_rn: float = 0.0,
        p_lc: float = 0.0,
        p_ln: float = 0.0,
        initial_state: Tuple[int, int] = (1, 0),
    ) -> "GeneralModel":
        """Symmetric system: identical buffers, links and nodes."""
        link = ChannelParams(replenish=p_rc, loss=p_lc)
        node = HarvestParams(replenish=p_rn, loss=p_ln)
        return cls(
            buffer_1=buffer,
            buffer_2=buffer,
            initial_state=initial_state,
            link_12=link,
            link_21=link,
            node_1=node,
            node_2=node,
        )

    @classmethod
    def from_noiseless(cls, model: NoiselessModel) -> "GeneralModel":
        """Equivalent general model: buffers of ``U`` units, no noise, no losses."""
        u = model.total_units
        return cls(buffer_1=u, buffer_2=u, initial_state=(model.initial_u1, u - model.initial_u1))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.buffer_1 + 1, self.buffer_2 + 1)

    @property
    def n_states(self) -> int:
        return (self.buffer_1 + 1) * (self.buffer_2 + 1)

    def states(self) -> List[Tuple[int, int]]:
        """All states in row-major (u1, u2) order."""
        return [(u1, u2) for u1 in range(self.buffer_1 + 1) for u2 in range(self.buffer_2 + 1)]

    @property
    def initial(self) -> Tuple[int, int]:
        return self.initial_state

    @property
    def kernel_12(self) -> BinaryKernel:
        return channel_kernel(self.link_12)

    @property
    def kernel_21(self) -> BinaryKernel:
        return channel_kernel(self.link_21)

    @property
    def harvest_1(self) -> BinaryKernel:
        return harvest_kernel(self.node_1)

    @property
    def harvest_2(self) -> BinaryKernel:
        return harvest_kernel(self.node_2)

    @property
    def energy_12(self) -> BinaryKernel:
        """Symbol of Node 1 -> energy harvested by Node 2."""
        return cascade(channel_kernel(self.link_12), harvest_kernel(self.node_2))

    @property
    def energy_21(self) -> BinaryKernel:
        """Symbol of Node 2 -> energy harvested by Node 1."""
        return cascade(channel_kernel(self.link_21), harvest_kernel(self.node_1))


Model = Union[NoiselessModel, GeneralModel]


def state_label(state: State) -> str:
    """Column-friendly label: ``"3"`` for u, ``"1_0"`` for (u1, u2)."""
    if isinstance(state, tuple):
        return f"{state[0]}_{state[1]}"
    return str(state)


def with_parameter(model: Model, path: str, value: float) -> Model:
    """Return a copy of ``model`` with the numeric field at dotted ``path`` set to ``value``."""
    data: Dict[str, Any] = model.model_dump()
    keys = path.split(".")
    container: Any = data
    try:
        for key in keys[:-1]:
            container = container[int(key)] if isinstance(container, list) else container[key]
        last = keys[-1]
        if isinstance(container, tuple):
            container = list(container)
        current = container[int(last)] if isinstance(container, list) else container[last]
    except (KeyError, IndexError, ValueError, TypeError):
        raise DomainError(f"Unknown model parameter '{path}'") from None
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise DomainError(f"Model parameter '{path}' is not numeric")

    if isinstance(current, int):
        if float(value) != int(round(float(value))):
            raise DomainError(f"Model parameter '{path}' needs an integer, got {value}")
        value = int(round(float(value)))

    # Tuples come back from model_dump as tuples; rebuild the mutable path
    target: Any = data
    for key in keys[:-1]:
        nxt = target[int(key)] if isinstance(target, (list, tuple)) else target[key]
        if isinstance(nxt, tuple):
            nxt = list(nxt)
            if isinstance(target, dict):
                target[key] = nxt
            else:
                target[int(key)] = nxt
        target = nxt
    if isinstance(target, (list, tuple)):
        target[int(keys[-1])] = value
    else:
        target[keys[-1]] = value
    return type(model).model_validate(data)


def load_json(path: Union[str, Path]) -> Any:
    """Read a JSON document; malformed content is a ``DomainError``, I/O problems raise ``OSError``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DomainError(f"{path} is not valid JSON: {e}") from None


def parse_model(data: Dict[str, Any]) -> Model:
    """Build a noiseless or general model, telling them apart by their keys."""
    if isinstance(data, dict) and "total_units" in data:
        return NoiselessModel.model_validate(data)
    check = validate_required_fields(data, ["buffer_1", "buffer_2"], context="model")
    if not check["valid"]:
        raise DomainError("; ".join(check["errors"]) + " (or 'total_units' for a noiseless model)")
    return GeneralModel.model_validate(data)


def load_model(path: Union[str, Path]) -> Model:
    model = parse_model(load_json(path))
    logger.debug(f"Loaded {type(model).__name__} from {path}")
    return model
