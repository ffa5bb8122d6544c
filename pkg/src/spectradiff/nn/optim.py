"""Adam optimizer over a ``{path: Parameter}`` store."""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import TrainingError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")


def adam_step(state, params):
    """Apply one bias-corrected Adam update in place and zero the gradients.

    Raises :class:`TrainingError` naming the first parameter whose gradient
    is not finite; in that case no parameter is modified.
    """
    for path, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {path!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_t = state.epsilon * np.sqrt(1.0 - b2 ** t)
    for path, p in params.items():
        m = state.first_moment.get(path)
        if m is None:
            m = state.first_moment[path] = np.zeros_like(p.value)
            state.second_moment[path] = np.zeros_like(p.value)
        v = state.second_moment[path]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # algebraically equal to lr * m_hat / (sqrt(v_hat) + eps)
        p.value -= lr_t * m / (np.sqrt(v) + eps_t)
        p.zero_grad()


class Adam:
    """Thin stateful wrapper binding an :class:`AdamState` to a parameter store."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.state = AdamState(lr, betas[0], betas[1], eps)

    def step(self):
        adam_step(self.state, self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
