"""Two-layer ReLU MLP on a concentric-circles dataset, with analytic backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.lib.rng import Purpose, Rng
from src.lib.types import Environment, ParamSet

HIDDEN = 64
N_POINTS = 400
RADII = (1.0, 2.0)
RADIAL_NOISE = 0.1
# 큰 W1 초기화: 스펙트럼 섭동에서 b1 의 비중을 작게 유지
W1_STD = 3.0
W2_STD = 0.01
BATCH_IDS = ("batch0", "batch1")


@dataclass(frozen=True)
class CirclesData:
    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray

    def subset(self, idx: np.ndarray) -> "CirclesData":
        return CirclesData(self.x[idx], self.y[idx], self.labels[idx])


def make_circles(rng: np.random.Generator, n: int = N_POINTS) -> CirclesData:
    """n/2 points on each circle, radial jitter N(0, 0.1^2), one-hot targets."""

    per_class = n // len(RADII)
    xs, labels = [], []
    for label, radius in enumerate(RADII):
        angle = rng.uniform(0.0, 2.0 * np.pi, size=per_class)
        r = radius + RADIAL_NOISE * rng.standard_normal(per_class)
        xs.append(np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1))
        labels.append(np.full(per_class, label))
    labels = np.concatenate(labels)
    return CirclesData(np.concatenate(xs), np.eye(len(RADII))[labels], labels)


def class_balanced_split(data: CirclesData, parts: int = 2) -> list[CirclesData]:
    chunks: list[list[np.ndarray]] = [[] for _ in range(parts)]
    for label in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == label)
        for k, piece in enumerate(np.array_split(idx, parts)):
            chunks[k].append(piece)
    return [data.subset(np.concatenate(c)) for c in chunks]


def forward_backward(
    params: ParamSet, data: CirclesData, with_grad: bool = True
) -> tuple[float, ParamSet | None]:
    """Loss (1/n) sum 1/2 ||f(x) - y||^2 and its gradient w.r.t. every tensor."""

    w1, w2 = params["W1"], params["W2"]
    has_bias = "b1" in params.names
    z = data.x @ w1.T
    if has_bias:
        z = z + params["b1"]
    a = np.maximum(z, 0.0)
    f = a @ w2.T
    if has_bias:
        f = f + params["b2"]
    resid = f - data.y
    n = data.x.shape[0]
    loss = float(0.5 * np.sum(resid * resid) / n)
    if not with_grad:
        return loss, None

    df = resid / n
    grads = {"W2": df.T @ a}
    dz = (df @ w2) * (z > 0.0)
    grads["W1"] = dz.T @ data.x
    if has_bias:
        grads["b1"] = dz.sum(axis=0)
        grads["b2"] = df.sum(axis=0)
    return loss, params.replace(**grads)


def rescale_params(params: ParamSet, alpha: float) -> ParamSet:
    """(W1, b1, W2) -> (alpha W1, alpha b1, W2 / alpha); b2 is untouched.

    ReLU is positively homogeneous, so the network function is unchanged.
    """

    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    arrays = {"W1": alpha * params["W1"], "W2": params["W2"] / alpha}
    if "b1" in params.names:
        arrays["b1"] = alpha * params["b1"]
    return params.replace(**arrays)


def _batch_env(env_id: str, data: CirclesData) -> Environment:
    def loss(theta: ParamSet) -> float:
        return forward_backward(theta, data, with_grad=False)[0]

    def grad(theta: ParamSet) -> ParamSet:
        return forward_backward(theta, data)[1]

    return Environment(env_id, loss, grad)


@dataclass(frozen=True)
class MlpProblem:
    params: ParamSet
    envs: tuple[Environment, ...]
    data: CirclesData
    with_bias: bool

    def loss(self, params: ParamSet) -> float:
        return forward_backward(params, self.data, with_grad=False)[0]

    def grad(self, params: ParamSet) -> ParamSet:
        return forward_backward(params, self.data)[1]

    def rescale(self, params: ParamSet, alpha: float) -> ParamSet:
        return rescale_params(params, alpha)


def init_params(rng: np.random.Generator, with_bias: bool) -> ParamSet:
    items = [("W1", W1_STD * rng.standard_normal((HIDDEN, 2)))]
    if with_bias:
        items.append(("b1", np.zeros(HIDDEN)))
    items.append(("W2", W2_STD * rng.standard_normal((2, HIDDEN))))
    if with_bias:
        items.append(("b2", np.zeros(2)))
    return ParamSet.from_arrays(items)


def mlp_problem(seed: int, with_bias: bool = True) -> MlpProblem:
    """Linear(2,64) -> ReLU -> Linear(64,2) with two class-balanced batch environments.

    Dataset and initialization come from separate streams of `seed`, so the
    with-bias and no-bias variants see the same points.
    """

    rng = Rng(seed)
    data = make_circles(rng.stream(Purpose.DATA))
    params = init_params(rng.stream(Purpose.INIT), with_bias)
    batches = class_balanced_split(data)
    envs = tuple(_batch_env(bid, b) for bid, b in zip(BATCH_IDS, batches))
    return MlpProblem(params, envs, data, with_bias)
