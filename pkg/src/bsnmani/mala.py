"""Metropolis-adjusted Langevin updates with windowed step-size tuning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .numerics import ConfigurationError, SingularityError


@dataclass
class MalaConfig:
    """Step-size settings. ``omega0=None`` means ``0.01 / sqrt(N q)``."""

    omega0: Optional[float] = None
    rho_target: float = 0.574
    k0: int = 50
    shrink: float = 0.9
    grow: float = 1.1

    def __post_init__(self):
        if self.omega0 is not None and not self.omega0 > 0:
            raise ConfigurationError("omega0 must be positive")
        if not 0 < self.rho_target < 1:
            raise ConfigurationError("rho_target must lie in (0, 1)")
        if int(self.k0) < 1:
            raise ConfigurationError("k0 must be >= 1")
        self.k0 = int(self.k0)

    def initial_step(self, n, q):
        return self.omega0 if self.omega0 is not None else 0.01 / np.sqrt(n * q)


class Transition(NamedTuple):
    x: np.ndarray
    accepted: bool
    logp: float
    grad: np.ndarray
    log_ratio: float


def _sq(a):
    return float(np.sum(a * a))


def log_accept_ratio(x, q, logp_x, grad_x, logp_q, grad_q, omega):
    """Log Metropolis-Hastings ratio for a Langevin move ``x -> q``."""
    h = 0.5 * omega ** 2
    forward = -_sq(q - x - h * grad_x) / (2.0 * omega ** 2)
    backward = -_sq(x - q - h * grad_q) / (2.0 * omega ** 2)
    return (logp_q - logp_x) + backward - forward


def _evaluate(value_and_grad, x):
    try:
        logp, grad = value_and_grad(x)
    except (SingularityError, np.linalg.LinAlgError, FloatingPointError):
        return -np.inf, None
    if not np.isfinite(logp) or grad is None or not np.all(np.isfinite(grad)):
        return -np.inf, None
    return float(logp), grad


def mala_transition(x, omega, value_and_grad, rng, current=None):
    """One MALA step; ``current`` optionally caches ``(logp, grad)`` at ``x``.

    Draws the Gaussian innovation before the uniform, so a fixed stream gives
    the same decision sequence for targets that differ by a constant.
    """
    if not omega > 0:
        raise ConfigurationError("step size must be positive")
    if current is None:
        logp_x, grad_x = _evaluate(value_and_grad, x)
        if grad_x is None:
            raise SingularityError("MALA started from a state with non-finite target")
    else:
        logp_x, grad_x = current
    noise = rng.standard_normal(x.shape)
    v = rng.random()
    prop = x + 0.5 * omega ** 2 * grad_x + omega * noise
    logp_q, grad_q = _evaluate(value_and_grad, prop)
    if grad_q is None:
        return Transition(x, False, logp_x, grad_x, -np.inf)
    log_ratio = log_accept_ratio(x, prop, logp_x, grad_x, logp_q, grad_q, omega)
    if np.log(v) < log_ratio:
        return Transition(prop, True, logp_q, grad_q, log_ratio)
    return Transition(x, False, logp_x, grad_x, log_ratio)


def mala_step(x, omega, log_target, grad_log_target, rng):
    """Langevin proposal plus Metropolis correction. Returns ``(new_x, accepted)``."""
    t = mala_transition(x, omega, lambda z: (log_target(z), grad_log_target(z)), rng)
    return t.x, t.accepted


def adapt_step(omega, accepts_in_window, window, rho_target=0.574, shrink=0.9, grow=1.1):
    """Shrink the step if the window's acceptance rate is below target, otherwise grow it."""
    if window < 1:
        raise ConfigurationError("window must be >= 1")
    rate = accepts_in_window / window
    return omega * shrink if rate < rho_target else omega * grow


class MalaKernel:
    """Stateful MALA chain over ``X`` with tuning every ``k0`` steps until frozen."""

    def __init__(self, config, omega, rng):
        self.config = config
        self.omega = float(omega)
        self.rng = rng
        self.adapting = True
        self._window_accepts = 0
        self._window_steps = 0

    def step(self, x, value_and_grad, current=None):
        t = mala_transition(x, self.omega, value_and_grad, self.rng, current)
        if self.adapting:
            self._window_accepts += int(t.accepted)
            self._window_steps += 1
            if self._window_steps == self.config.k0:
                self.omega = adapt_step(self.omega, self._window_accepts, self._window_steps,
                                        self.config.rho_target, self.config.shrink, self.config.grow)
                self._window_accepts = self._window_steps = 0
        return t

    def freeze(self):
        self.adapting = False
