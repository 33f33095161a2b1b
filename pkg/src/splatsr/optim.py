"""Minimal Adam over dicts of arrays, with per-key (possibly broadcast) rates.

Learning rates may be scalars, callables of the step count (schedules), or
arrays broadcastable to the parameter shape (e.g. per-coefficient rates for
spherical harmonics).  State survives resizing through select/append so
densification can drop and add rows without restarting moment history.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class Adam:
    lr: dict  # key -> scalar | array | callable(step)->scalar
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def _rate(self, key):
        rate = self.lr[key]
        if callable(rate):
            return rate(self.step_count)
        return rate

    def step(self, params, grads):
        """One update, in place on ``params``. Keys missing a rate error out."""
        self.step_count += 1
        t = self.step_count
        for key, g in grads.items():
            if key not in self.lr:
                raise InvalidInputError(f"no learning rate configured for '{key}'")
            p = params[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self._rate(key) * m_hat / (np.sqrt(v_hat) + self.eps)

    def select(self, mask):
        """Keep moment rows where mask is True (axis 0)."""
        for key in self.m:
            self.m[key] = self.m[key][mask]
            self.v[key] = self.v[key][mask]

    def append(self, counts):
        """Grow moments with zero rows for freshly created parameters.

        counts: key -> number of new rows (must cover every tracked key).
        """
        for key in self.m:
            n_new = counts[key]
            pad_m = np.zeros((n_new,) + self.m[key].shape[1:])
            self.m[key] = np.concatenate([self.m[key], pad_m])
            self.v[key] = np.concatenate([self.v[key], np.zeros_like(pad_m)])


def exponential_schedule(lr_init, lr_final, max_steps):
    """Log-linear interpolation from lr_init to lr_final over max_steps."""
    if lr_init <= 0 or lr_final <= 0 or max_steps < 1:
        raise InvalidInputError("schedule requires positive rates and steps")

    def rate(step):
        t = min(max(step / max_steps, 0.0), 1.0)
        return float(lr_init * (lr_final / lr_init) ** t)

    return rate
