"""Embedded Dormand-Prince 5(4) stepping with a PI step-size controller."""

import numpy as np

from .errors import DivergenceError, NumericError

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4

# PI controller gains for an error-per-unit-step estimate of order 4
_ALPHA = 0.7 / 4
_BETA = 0.4 / 4
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _dopri_step(fun, t, y, f0, h):
    k = [f0]
    for i in range(1, 7):
        a = _A[i]
        yi = y + h * sum(a[j] * k[j] for j in range(i) if a[j] != 0.0)
        k.append(fun(t + _C[i] * h, yi))
    y_new = y + h * sum(_B[j] * k[j] for j in range(6) if _B[j] != 0.0)
    # k[6] was evaluated at y_new (FSAL)
    err = h * sum(_E[j] * k[j] for j in range(7) if _E[j] != 0.0)
    return y_new, k[6], err


def _error_norm(err, y0, y1, tol, h):
    scale = 1.0 + np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(np.abs(err) / scale)) / (tol * abs(h))


class Stepper:
    """Adaptive integrator state for one direction of time.

    ``bound_slice`` selects the entries whose norm is checked against
    ``bound`` after every accepted step.
    """

    def __init__(self, fun, t0, y0, tol, direction=1.0, h0=None, f0=None,
                 bound=None, bound_slice=slice(None), max_steps=10_000_000):
        if tol <= 0:
            raise ValueError("tol must be positive")
        self.fun = fun
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float).copy()
        self.f = fun(self.t, self.y) if f0 is None else f0
        self.tol = tol
        self.direction = 1.0 if direction >= 0 else -1.0
        self.h = abs(h0) if h0 else self._initial_step()
        self.bound = bound
        self.bound_slice = bound_slice
        self.err_prev = 1.0
        self.max_steps = max_steps
        self.n_steps = 0

    def _initial_step(self):
        scale = 1.0 + np.abs(self.y)
        d0 = np.max(np.abs(self.y) / scale)
        d1 = np.max(np.abs(self.f) / scale)
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        return float(min(max(h, 1e-6), 0.1))

    def set_state(self, y, f=None):
        self.y = np.asarray(y, dtype=float)
        self.f = self.fun(self.t, self.y) if f is None else f

    def advance_to(self, t_target, record=None):
        """Step until ``t_target`` is reached exactly.

        ``record(t, y, f)`` is called after every accepted step.
        """
        while self.direction * (t_target - self.t) > 0:
            if self.n_steps >= self.max_steps:
                raise NumericError(f"step budget exhausted at t={self.t:.17g}")
            remaining = abs(t_target - self.t)
            h = min(self.h, remaining)
            last = h >= remaining * (1 - 1e-12)
            if last:
                h = remaining
            hs = self.direction * h
            y_new, f_new, err = _dopri_step(self.fun, self.t, self.y, self.f, hs)
            en = _error_norm(err, self.y, y_new, self.tol, h)
            if not np.isfinite(en):
                en = 1e10
            if en <= 1.0:
                self.t = t_target if last else self.t + hs
                self.y, self.f = y_new, f_new
                self.n_steps += 1
                if self.bound is not None:
                    if np.linalg.norm(y_new[self.bound_slice]) > self.bound:
                        raise DivergenceError(self.t - hs, self.bound)
                if record is not None:
                    record(self.t, self.y, self.f)
                en = max(en, 1e-10)
                factor = _SAFETY * en ** (-_ALPHA) * self.err_prev ** _BETA
                self.err_prev = en
                factor = min(max(factor, _MIN_FACTOR), _MAX_FACTOR)
                # a clipped final step says nothing about the natural step size
                self.h = max(self.h, h * factor) if last else h * factor
            else:
                factor = max(_SAFETY * en ** (-1 / 4), _MIN_FACTOR)
                self.h = h * factor
                if self.h < 1e-14 * max(1.0, abs(self.t)):
                    raise NumericError(f"step size underflow at t={self.t:.17g}")
        return self.y
