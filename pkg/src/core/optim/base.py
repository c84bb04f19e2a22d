"""Base optimizers (SGD, Adam) that apply the perturbed gradient to an immutable state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from src.lib.errors import SnapshotFormatError
from src.lib.types import NamedTensor, ParamSet

STEP_TENSOR = "__step__"
SLOT_PREFIX = "__opt__/"


@dataclass(frozen=True)
class OptimState:
    params: ParamSet
    step: int = 0
    slots: Mapping[str, ParamSet] = field(default_factory=dict)


class BaseOptimizer(Protocol):
    lr: float

    def init(self, params: ParamSet) -> OptimState: ...

    def apply(self, state: OptimState, grad: ParamSet) -> OptimState: ...


@dataclass(frozen=True)
class Sgd:
    lr: float

    def init(self, params: ParamSet) -> OptimState:
        return OptimState(params)

    def apply(self, state: OptimState, grad: ParamSet) -> OptimState:
        return OptimState(state.params - self.lr * grad, state.step + 1, state.slots)


@dataclass(frozen=True)
class Adam:
    """Adam with bias-corrected first and second moments."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def init(self, params: ParamSet) -> OptimState:
        zeros = params.zeros_like()
        return OptimState(params, 0, {"m": zeros, "v": zeros})

    def apply(self, state: OptimState, grad: ParamSet) -> OptimState:
        t = state.step + 1
        m = state.slots["m"] * self.beta1 + grad * (1.0 - self.beta1)
        v = state.slots["v"] * self.beta2 + grad.zip_map(grad, np.multiply) * (1.0 - self.beta2)
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        update = m.zip_map(
            v, lambda mi, vi: (mi / c1) / (np.sqrt(vi / c2) + self.eps)
        )
        return OptimState(state.params - self.lr * update, t, {"m": m, "v": v})


def make_base(name: str, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    match name:
        case "sgd":
            return Sgd(lr)
        case "adam":
            return Adam(lr, beta1, beta2, eps)
    raise ValueError(f"unknown base optimizer: {name}")


def state_to_snapshot(state: OptimState) -> ParamSet:
    """Parameters, then the step counter, then every optimizer slot tensor."""

    tensors = list(state.params)
    tensors.append(NamedTensor(STEP_TENSOR, np.array([float(state.step)])))
    for slot in sorted(state.slots):
        for t in state.slots[slot]:
            tensors.append(NamedTensor(f"{SLOT_PREFIX}{slot}/{t.name}", t.values))
    return ParamSet(tuple(tensors))


def state_from_snapshot(snapshot: ParamSet) -> OptimState:
    params, step, slots = [], 0, {}
    for t in snapshot:
        if t.name == STEP_TENSOR:
            step = int(t.values[0])
        elif t.name.startswith(SLOT_PREFIX):
            slot, _, name = t.name[len(SLOT_PREFIX) :].partition("/")
            if not name:
                raise SnapshotFormatError(f"bad optimizer slot tensor name {t.name!r}")
            slots.setdefault(slot, []).append(NamedTensor(name, t.values))
        else:
            params.append(t)
    if not params:
        raise SnapshotFormatError("snapshot has no parameter tensors")
    return OptimState(
        ParamSet(tuple(params)), step, {k: ParamSet(tuple(v)) for k, v in slots.items()}
    )
