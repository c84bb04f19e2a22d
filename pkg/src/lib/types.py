from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Callable, Iterable, Iterator, Mapping, Optional

import numpy as np
from numpy.typing import ArrayLike


class TensorKind(StrEnum):
    VECTOR = "vector"
    MATRIX = "matrix"
    TENSOR = "tensor"

    @property
    def code(self) -> int:
        return {"vector": 0, "matrix": 1, "tensor": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "TensorKind":
        return [cls.VECTOR, cls.MATRIX, cls.TENSOR][code]

    @classmethod
    def for_ndim(cls, ndim: int) -> "TensorKind":
        if ndim <= 1:
            return cls.VECTOR
        return cls.MATRIX if ndim == 2 else cls.TENSOR


def _readonly(values: ArrayLike) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NamedTensor:
    """One named parameter tensor. Values are copied and made read-only."""

    name: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def kind(self) -> TensorKind:
        return TensorKind.for_ndim(self.values.ndim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ParamSet:
    """Ordered, immutable collection of named tensors.

    Flattened coordinates are the concatenation of the tensors in order,
    row-major within each tensor. Hessians and covariances use this order.
    """

    tensors: tuple[NamedTensor, ...]

    def __post_init__(self):
        tensors = tuple(self.tensors)
        names = [t.name for t in tensors]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate tensor names: {names}")
        if not tensors or sum(t.size for t in tensors) == 0:
            raise ValueError("ParamSet must have a positive flattened dimension")
        object.__setattr__(self, "tensors", tensors)

    @classmethod
    def from_arrays(
        cls, items: Mapping[str, ArrayLike] | Iterable[tuple[str, ArrayLike]]
    ) -> "ParamSet":
        pairs = items.items() if isinstance(items, Mapping) else items
        return cls(tuple(NamedTensor(name, values) for name, values in pairs))

    @classmethod
    def vector(cls, values: ArrayLike, name: str = "theta") -> "ParamSet":
        return cls((NamedTensor(name, values),))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tensors)

    @property
    def dim(self) -> int:
        return sum(t.size for t in self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self) -> Iterator[NamedTensor]:
        return iter(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        for t in self.tensors:
            if t.name == name:
                return t.values
        raise KeyError(name)

    def same_layout(self, other: "ParamSet") -> bool:
        return len(self) == len(other) and all(
            a.name == b.name and a.shape == b.shape for a, b in zip(self, other)
        )

    def _check_layout(self, other: "ParamSet") -> None:
        if not self.same_layout(other):
            raise ValueError(f"ParamSet layouts differ: {self.names} vs {other.names}")

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.values.ravel() for t in self.tensors])

    def unflatten(self, flat: ArrayLike) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.dim,):
            raise ValueError(f"Expected flat vector of length {self.dim}, got {flat.shape}")
        out, offset = [], 0
        for t in self.tensors:
            out.append(NamedTensor(t.name, flat[offset : offset + t.size].reshape(t.shape)))
            offset += t.size
        return ParamSet(tuple(out))

    def map(self, fn: Callable[[NamedTensor], ArrayLike]) -> "ParamSet":
        return ParamSet(tuple(NamedTensor(t.name, fn(t)) for t in self.tensors))

    def zip_map(
        self, other: "ParamSet", fn: Callable[[np.ndarray, np.ndarray], ArrayLike]
    ) -> "ParamSet":
        self._check_layout(other)
        return ParamSet(
            tuple(NamedTensor(a.name, fn(a.values, b.values)) for a, b in zip(self, other))
        )

    def replace(self, **arrays: ArrayLike) -> "ParamSet":
        unknown = set(arrays) - set(self.names)
        if unknown:
            raise KeyError(f"Unknown tensors: {sorted(unknown)}")
        return self.map(lambda t: arrays.get(t.name, t.values))

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.add)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.subtract)

    def __mul__(self, c: float) -> "ParamSet":
        return self.map(lambda t: t.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "ParamSet":
        return self.map(lambda t: -t.values)

    def dot(self, other: "ParamSet") -> float:
        self._check_layout(other)
        return float(np.dot(self.flatten(), other.flatten()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.flatten()))

    def zeros_like(self) -> "ParamSet":
        return self.map(lambda t: np.zeros(t.shape))

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(t.values).all()) for t in self.tensors)


LossFn = Callable[[ParamSet], float]
GradFn = Callable[[ParamSet], ParamSet]
HessianFn = Callable[[ParamSet], np.ndarray]


@dataclass(frozen=True)
class Environment:
    """One training distribution: loss, gradient and (optionally) exact Hessian."""

    id: str
    loss: LossFn
    grad: GradFn
    hessian: Optional[HessianFn] = None


@dataclass(frozen=True)
class EnvStats:
    """Cross-environment summary at one parameter point."""

    g_bar: np.ndarray
    h_bar: Optional[np.ndarray]
    sigma_g: np.ndarray
    agreement: float
    K: int
    env_grads: np.ndarray

    @property
    def hessian_available(self) -> bool:
        return self.h_bar is not None


@dataclass(frozen=True)
class StepReport:
    """What one optimizer step observed."""

    step: int
    env_losses: tuple[float, ...]
    aggregate_loss: float
    agreement: float
    beta: float
    eps_norm: float
    grad_rounds: int
    zero_perturbation: bool = False


@dataclass(frozen=True)
class RunRecord:
    """One CSV row of a training trajectory."""

    step: int
    env_losses: Mapping[str, float]
    aggregate_loss: float
    agreement: float
    beta: float
    eps_norm: float

    @classmethod
    def from_report(cls, report: StepReport, env_ids: Iterable[str]) -> "RunRecord":
        return cls(
            step=report.step,
            env_losses=dict(zip(env_ids, report.env_losses)),
            aggregate_loss=report.aggregate_loss,
            agreement=report.agreement,
            beta=report.beta,
            eps_norm=report.eps_norm,
        )

    @staticmethod
    def header(env_ids: Iterable[str]) -> list[str]:
        return (
            ["step"]
            + [f"loss_{e}" for e in env_ids]
            + ["aggregate_loss", "agreement", "beta", "eps_norm"]
        )

    def as_row(self) -> list[object]:
        return (
            [self.step]
            + list(self.env_losses.values())
            + [self.aggregate_loss, self.agreement, self.beta, self.eps_norm]
        )
