"""Adam with a linear warmup followed by inverse square root decay, plus global-norm clipping."""

from typing import Dict, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from typing_extensions import Annotated

from config.app import ADAM_BETAS, ADAM_EPSILON, EARLY_STOPPING_PATIENCE, MAX_TRAIN_STEPS
from utils.errors import NumericError


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: Annotated[float, Field(gt=0.0, description="Peak learning rate reached at the end of warmup.")] = 1e-3
    warmup_init_lr: Annotated[float, Field(ge=0.0, description="Learning rate of the first update.")] = 1e-7
    warmup_steps: Annotated[int, Field(ge=1, description="Number of linear warmup updates.")] = 400
    total_steps: Annotated[int, Field(ge=1, le=MAX_TRAIN_STEPS, description="Upper bound on training updates.")] = 4000
    batch_size: Annotated[int, Field(ge=1, description="Sentence pairs per batch.")] = 32
    clip_norm: Annotated[float, Field(gt=0.0, description="Global gradient-norm clipping threshold.")] = 1.0
    beta1: Annotated[float, Field(ge=0.0, lt=1.0)] = ADAM_BETAS[0]
    beta2: Annotated[float, Field(ge=0.0, lt=1.0)] = ADAM_BETAS[1]
    epsilon: Annotated[float, Field(gt=0.0)] = ADAM_EPSILON
    eval_every: Annotated[int, Field(ge=1, description="Updates between dev evaluations.")] = 200
    patience: Annotated[int, Field(ge=1, description="Evaluations without dev improvement before stopping.")] = EARLY_STOPPING_PATIENCE


def learning_rate_for_step(config: OptimizerConfig, num_updates: int) -> float:
    """Linear warmup from warmup_init_lr to learning_rate, then lr * sqrt(warmup / step)."""
    if num_updates < config.warmup_steps:
        step = (config.learning_rate - config.warmup_init_lr) / config.warmup_steps
        return config.warmup_init_lr + num_updates * step
    return config.learning_rate * config.warmup_steps**0.5 * num_updates**-0.5


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients by one factor so their joint L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError(f"gradient norm is {norm}")
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


class AdamInverseSqrtWithWarmup:
    """Adam over a dict of numpy parameters, updated in place.

    The moment estimates are kept per parameter name and can be saved in a
    checkpoint's optimizer group.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.num_updates = 0
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}

    @property
    def learning_rate(self) -> float:
        return learning_rate_for_step(self.config, self.num_updates)

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> float:
        """Clip, apply one update and return the pre-clipping gradient norm."""
        grads, norm = clip_gradients(grads, self.config.clip_norm)
        lr = self.learning_rate
        beta1, beta2 = self.config.beta1, self.config.beta2
        self.num_updates += 1
        correction1 = 1.0 - beta1**self.num_updates
        correction2 = 1.0 - beta2**self.num_updates
        for name in sorted(grads):
            grad = grads[name]
            m = self.first_moment.setdefault(name, np.zeros_like(grad, dtype=np.float64))
            v = self.second_moment.setdefault(name, np.zeros_like(grad, dtype=np.float64))
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * np.square(grad)
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.config.epsilon)
            params[name] -= update.astype(params[name].dtype)
        return norm

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"num_updates": np.array([float(self.num_updates)])}
        state.update({f"m.{name}": value for name, value in self.first_moment.items()})
        state.update({f"v.{name}": value for name, value in self.second_moment.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.num_updates = int(state["num_updates"][0]) if "num_updates" in state else 0
        self.first_moment = {k[2:]: np.array(v, dtype=np.float64) for k, v in state.items() if k.startswith("m.")}
        self.second_moment = {k[2:]: np.array(v, dtype=np.float64) for k, v in state.items() if k.startswith("v.")}
