import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.autograd.tensor import Tensor
from app.exceptions import DomainError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper) -> "AdamWState":
        return cls(
            first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            **hyper,
        )


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamWState,
    lr: float,
) -> Tuple[List[np.ndarray], AdamWState]:
    """One AdamW update with decoupled weight decay; inputs are left untouched."""
    if lr <= 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("adamw_step", (len(params),), (len(grads),), (len(state.first_moment),),
                         detail="parameter/gradient/moment counts differ")
    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** step
    bias2 = 1.0 - b2 ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError("adamw_step", p.shape, g.shape, m.shape, v.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps) + state.weight_decay * p
        new_params.append(p - lr * update)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamWState(
        first_moment=new_m, second_moment=new_v, step_count=step, lr=lr,
        beta1=b1, beta2=b2, eps=state.eps, weight_decay=state.weight_decay,
    )
    return new_params, new_state


class AdamW:
    """Stateful wrapper applying :func:`adamw_step` to a list of parameter Tensors."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.05,
    ):
        self.params = list(params)
        self.state = AdamWState.zeros_like(
            [p.data for p in self.params], lr=lr, beta1=betas[0], beta2=betas[1],
            eps=eps, weight_decay=weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float = None) -> None:
        lr = self.state.lr if lr is None else lr
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new_params, self.state = adamw_step([p.data for p in self.params], grads, self.state, lr)
        for p, data in zip(self.params, new_params):
            p.data = data

    def state_dict(self, names: Sequence[str]) -> Dict[str, np.ndarray]:
        out = {}
        for name, m, v in zip(names, self.state.first_moment, self.state.second_moment):
            out[f"optim.m.{name}"] = m.copy()
            out[f"optim.v.{name}"] = v.copy()
        out["optim.step"] = np.array([float(self.state.step_count)])
        return out

    def load_state_dict(self, names: Sequence[str], tensors: Dict[str, np.ndarray]) -> None:
        try:
            self.state.first_moment = [np.array(tensors[f"optim.m.{n}"]) for n in names]
            self.state.second_moment = [np.array(tensors[f"optim.v.{n}"]) for n in names]
            self.state.step_count = int(tensors["optim.step"][0])
        except KeyError as e:
            raise ShapeError("load_optimizer_state", detail=f"checkpoint lacks {e}")


class LrSchedule(BaseModel):
    """Linear warmup lr_start -> lr_peak, then cosine decay to lr_end at total_steps."""

    model_config = ConfigDict(frozen=True)

    lr_start: float = Field(5e-7, gt=0)
    lr_peak: float = Field(1e-4, gt=0)
    lr_end: float = Field(1e-5, gt=0)
    warmup_steps: int = Field(10_000, ge=0)
    total_steps: int = Field(100_000, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.total_steps <= self.warmup_steps:
            raise ValueError(f"total_steps ({self.total_steps}) must exceed warmup_steps ({self.warmup_steps})")
        return self

    def __call__(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.lr_start + (self.lr_peak - self.lr_start) * step / self.warmup_steps
        if step >= self.total_steps:
            return self.lr_end
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.lr_end + 0.5 * (self.lr_peak - self.lr_end) * (1.0 + math.cos(math.pi * progress))
