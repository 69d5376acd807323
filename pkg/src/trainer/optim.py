"""Plain SGD and Adam over PolicyParams, updating in place."""

from enum import Enum
from typing import Dict, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.policy import Gradient, PolicyParams


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class OptimizerConfig(BaseModel):
    """Optimizer choice; a bare ``"sgd"`` / ``"adam"`` string is accepted."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: OptimizerKind = OptimizerKind.ADAM
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _parse_text(cls, data):
        if isinstance(data, str):
            return {"name": data.strip().lower()}
        return data

    def describe(self) -> str:
        if self.name is OptimizerKind.SGD:
            return "sgd"
        return f"adam(beta1={self.beta1},beta2={self.beta2},eps={self.eps})"


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: PolicyParams, grad: Gradient) -> None:
        """``p <- p - lr * g``."""
        for name, arr in params.items():
            setattr(params, name, arr - self.lr * getattr(grad, name))


class Adam:
    """Adam with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: PolicyParams, grad: Gradient) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, arr in params.items():
            g = getattr(grad, name)
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            setattr(params, name, arr - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))


def build_optimizer(config: OptimizerConfig, lr: float) -> Union[SGD, Adam]:
    if config.name is OptimizerKind.SGD:
        return SGD(lr)
    return Adam(lr, config.beta1, config.beta2, config.eps)
