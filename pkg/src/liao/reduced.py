"""Reduced linearized system along a transported frame, Liao qualitative
functions, hyperbolicity certification and dichotomy constants."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InconsistencyError, InsufficientWindowError, PreconditionError, \
    ValidationError

TRIANGULAR_TOL = 1e-10


def triangular_log(F, max_terms=400):
    """Principal logarithm of a batch of upper-triangular matrices near ``I``.

    The diagonal is taken exactly; the strictly upper part comes from the
    series of ``log(I + X)`` (the diagonal of the series is discarded).
    """
    F = np.asarray(F, dtype=float)
    p = F.shape[-1]
    d = np.diagonal(F, axis1=-2, axis2=-1)
    if np.any(d <= 0):
        raise InconsistencyError("step factor has a non-positive diagonal entry")
    L = np.zeros_like(F)
    idx = np.arange(p)
    if p > 1:
        X = F - np.eye(p)
        if np.max(np.abs(X)) >= 0.9:
            raise PreconditionError("step factor too far from the identity; reduce h")
        term = X.copy()
        for k in range(1, max_terms + 1):
            L += ((-1) ** (k + 1) / k) * term
            term = term @ X
            if np.max(np.abs(term)) <= 1e-18 * max(1.0, np.max(np.abs(L))):
                break
        L = np.triu(L, 1)
    L[..., idx, idx] = np.log(d)
    return L


def generator_on_grid(spec, frames):
    """Exact ``R*(t)`` at the frame grid times from the Jacobian along the orbit.

    With ``Q`` the frame and ``M = Q^T S' Q``: the diagonal is ``M_ii`` and the
    entry above it is ``M_ij + M_ji``.
    """
    J = spec.jacobian(frames.base)
    M = np.einsum("kni,knm,kmj->kij", frames.frames, J, frames.frames)
    return np.triu(M + np.swapaxes(M, 1, 2), 1) + np.triu(np.tril(M))


def frame_rates_exact(spec, frames):
    """``d/dt`` of the transported frame at grid times (no differencing)."""
    J = spec.jacobian(frames.base)
    Q = frames.frames
    s = frames.speed
    shat = s / np.linalg.norm(s, axis=1)[:, None]
    JQ = J @ Q
    PiJQ = JQ - shat[:, :, None] * np.einsum("kn,knp->kp", shat, JQ)[:, None, :]
    Js = np.einsum("knm,km->kn", J, shat)
    R = generator_on_grid(spec, frames)
    return PiJQ - shat[:, :, None] * np.einsum("kn,knp->kp", Js, Q)[:, None, :] - Q @ R


@dataclass(frozen=True)
class ReducedCocycle:
    """Reduced linearized system sampled along one frame path.

    ``R_samples[k]`` is the generator over ``[times[k], times[k+1]]``;
    ``log_growth[k, i]`` is the integral of ``omega_i`` from 0 to
    ``times[k]``; ``C_accum[k]`` carries frame coordinates at time 0 to
    those at ``times[k]``.
    """

    times: np.ndarray
    h: float
    p_minus: int
    step_factors: np.ndarray
    R_samples: np.ndarray
    log_growth: np.ndarray
    C_accum: np.ndarray
    R_grid: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self):
        return self.R_samples.shape[-1] if len(self.R_samples) else self.C_accum.shape[-1]

    @property
    def index0(self):
        return int(np.argmin(np.abs(self.times)))

    @property
    def sample_times(self):
        return 0.5 * (self.times[1:] + self.times[:-1])

    @property
    def omega(self):
        return np.diagonal(self.R_samples, axis1=1, axis2=2).copy()

    def generator_at_grid(self):
        """``R*`` at grid times: exact if available, else averaged from neighbours."""
        if self.R_grid is not None:
            return self.R_grid
        R = self.R_samples
        out = np.empty((len(self.times),) + R.shape[1:])
        out[1:-1] = 0.5 * (R[1:] + R[:-1])
        out[0], out[-1] = R[0], R[-1]
        return out

    def window_integrals(self, T, stride):
        """Integrals of each ``omega_k`` over ``[t0, t0 + T]`` for ``t0`` on a stride."""
        m = int(round(T / self.h))
        if m <= 0 or m >= len(self.times):
            raise InsufficientWindowError(f"window T={T} does not fit the cocycle grid")
        starts = np.arange(0, len(self.times) - m, stride)
        return self.times[starts], self.log_growth[starts + m] - self.log_growth[starts]

    def shifted(self, k):
        """The cocycle of the path re-based at grid index ``k``."""
        C = self.C_accum @ np.linalg.inv(self.C_accum[k])
        return ReducedCocycle(self.times - self.times[k], self.h, self.p_minus,
                              self.step_factors, self.R_samples,
                              self.log_growth - self.log_growth[k], C, self.R_grid)

    def omega_rows(self):
        """Rows ``(t, omega_1, ..., omega_p)`` at step midpoints."""
        return np.column_stack([self.sample_times, self.omega])


def reduced_cocycle(frames, propagators=None, h=None, p_minus=0, spec=None,
                    consistency_tol=1e-6):
    """Reduced cocycle from the QR step factors cached on ``frames``.

    With ``propagators`` the accumulated product is checked against the
    projected variational flow (relative tolerance ``consistency_tol``).
    With ``spec`` the exact generator at grid times is attached as well.
    """
    h = frames.h if h is None else float(h)
    if abs(h - frames.h) > 1e-12 * frames.h:
        raise ValidationError("h does not match the frame path step")
    p = frames.dim
    if not 0 <= p_minus <= p:
        raise ValidationError(f"p_minus must lie in [0, {p}]")
    F = np.asarray(frames.step_factors, dtype=float)
    if len(F):
        lower = np.max(np.abs(np.tril(F, -1)))
        if lower > TRIANGULAR_TOL:
            raise InconsistencyError(f"step factor is not upper triangular (|lower| = {lower:.3g})")
    R = triangular_log(F) / h if len(F) else np.zeros((0, p, p))

    logd = np.log(np.diagonal(F, axis1=1, axis2=2)) if len(F) else np.zeros((0, p))
    cum = np.vstack([np.zeros((1, p)), np.cumsum(logd, axis=0)])
    k0 = frames.index0
    cum -= cum[k0]

    N = len(frames.times)
    C = np.empty((N, p, p))
    C[k0] = np.eye(p)
    for k in range(k0, N - 1):
        C[k + 1] = F[k] @ C[k]
    for k in range(k0, 0, -1):
        C[k - 1] = np.linalg.solve(F[k - 1], C[k])

    if propagators is not None:
        P = np.asarray(propagators.matrices)
        if P.shape != C.shape:
            raise ValidationError("propagators are not aligned with the frame grid")
        scale = np.linalg.norm(P, axis=(1, 2))
        resid = np.linalg.norm(P - C, axis=(1, 2)) / scale
        if np.max(resid) > consistency_tol:
            k = int(np.argmax(resid))
            raise InconsistencyError(
                f"QR products disagree with the transversal propagator at t={frames.times[k]:.6g}"
                f" (relative residual {resid[k]:.3g})")
    R_grid = generator_on_grid(spec, frames) if spec is not None else None
    return ReducedCocycle(frames.times.copy(), h, int(p_minus), F, R, cum, C, R_grid)


# -- hyperbolicity certificate ------------------------------------------------

@dataclass(frozen=True)
class HyperbolicityCertificate:
    eta_hat: float
    d_hat: float
    window_T: float
    passed: bool
    worst_stable: float
    worst_unstable: float
    d_grid: tuple
    rates: tuple  # per window length, the binding average rate
    stride: int

    @property
    def pass_(self):
        return self.passed

    def to_dict(self):
        return {"eta_hat": self.eta_hat, "d_hat": self.d_hat, "window_T": self.window_T,
                "pass": self.passed, "worst_stable_average": self.worst_stable,
                "worst_unstable_average": self.worst_unstable,
                "d_grid": list(self.d_grid), "rates": list(self.rates),
                "t0_stride": self.stride,
                "note": "window starts sampled on a grid, not over all real t0"}


def certify_hyperbolic(cocycle, d_grid=(1.0, 2.0, 5.0, 10.0), window_T=None, stride=10):
    """Sliding-window test that stable averages stay below ``-eta`` and unstable
    averages above ``eta`` for every window length ``T >= d`` in ``d_grid``.

    Window starts ``t0`` run over grid times spaced ``stride`` steps apart
    with ``[t0, t0 + T]`` inside ``[-window_T, window_T]``.
    """
    d_grid = tuple(sorted(float(d) for d in d_grid))
    if not d_grid or d_grid[0] <= 0:
        raise ValidationError("d_grid must hold positive window lengths")
    if window_T is None:
        window_T = min(-cocycle.times[0], cocycle.times[-1])
    window_T = float(window_T)
    if window_T < d_grid[-1]:
        raise InsufficientWindowError(f"window_T={window_T} is shorter than max(d_grid)")
    if cocycle.times[0] > -window_T + 1e-9 or cocycle.times[-1] < window_T - 1e-9:
        raise InsufficientWindowError("cocycle does not cover [-window_T, window_T]")
    lo = int(np.searchsorted(cocycle.times, -window_T - 1e-9))
    hi = int(np.searchsorted(cocycle.times, window_T + 1e-9))
    sub = ReducedCocycle(cocycle.times[lo:hi], cocycle.h, cocycle.p_minus,
                         cocycle.step_factors[lo:hi - 1], cocycle.R_samples[lo:hi - 1],
                         cocycle.log_growth[lo:hi], cocycle.C_accum[lo:hi])
    pm = cocycle.p_minus
    rates, worst_s, worst_u = [], -np.inf, np.inf
    for T in d_grid:
        _, I = sub.window_integrals(T, stride)
        avg = I / T
        r = np.inf
        if pm > 0:
            ws = float(np.max(avg[:, :pm]))
            worst_s = max(worst_s, ws)
            r = min(r, -ws)
        if pm < sub.dim:
            wu = float(np.min(avg[:, pm:]))
            worst_u = min(worst_u, wu)
            r = min(r, wu)
        rates.append(float(r))
    # eta(d) = min over T >= d; take the smallest d with a positive rate
    eta_hat, d_hat = 0.0, float("nan")
    for i, d in enumerate(d_grid):
        eta = min(rates[i:])
        if eta > 0:
            eta_hat, d_hat = float(eta), d
            break
    return HyperbolicityCertificate(eta_hat, d_hat, window_T, eta_hat > 0,
                                    float(worst_s), float(worst_u), d_grid, tuple(rates),
                                    int(stride))


# -- dichotomy constants ------------------------------------------------------

def _phi(x):
    """``(1 - exp(-x)) / x`` with the removable singularity at 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


def green_integrals(log_growth, h, p_minus):
    """Per grid time, the truncated integrals ``int exp(Omega(t) - Omega(s)) ds``.

    Stable components integrate over ``s`` from the first grid time up to
    ``t``; unstable ones from ``t`` to the last grid time. ``Omega`` is
    taken piecewise linear between grid times, so each piece is exact.
    """
    Om = np.asarray(log_growth, dtype=float)
    N, p = Om.shape
    dO = np.diff(Om, axis=0)               # omega_j * h per step
    piece = h * _phi(dO)                   # int over a step of exp(-(Omega(s) - Omega_j))
    out = np.zeros((N, p))
    for i in range(p):
        if i < p_minus:
            g = np.exp(dO[:, i])
            for k in range(N - 1):
                out[k + 1, i] = g[k] * (out[k, i] + piece[k, i])
        else:
            g = np.exp(-dO[:, i])
            for k in range(N - 2, -1, -1):
                out[k, i] = piece[k, i] + g[k] * out[k + 1, i]
    return out


@dataclass(frozen=True)
class DichotomyConstants:
    eta_A: float
    xi_A: float
    tail_bound: float
    horizon: float
    flagged: bool

    def to_dict(self):
        return {"eta_A": self.eta_A, "xi_A": self.xi_A, "tail_bound": self.tail_bound,
                "horizon": self.horizon, "tail_flagged": self.flagged}


def dichotomy_constants(cocycle, certificate, horizon=None):
    """``eta_A = max sum |R*_ij|`` and the truncated Green-integral supremum ``xi_A``.

    The tails beyond the horizon are bounded through the certified rate
    ``eta_hat`` at the maximising time and reported separately.
    """
    if not certificate.passed:
        raise PreconditionError("hyperbolicity certificate failed; no dichotomy constants")
    t = cocycle.times
    if horizon is None:
        horizon = min(-t[0], t[-1])
    horizon = float(horizon)
    lo = int(np.searchsorted(t, -horizon - 1e-9))
    hi = int(np.searchsorted(t, horizon + 1e-9))
    if t[lo] > -horizon + 1e-9 or t[hi - 1] < horizon - 1e-9:
        raise InsufficientWindowError("cocycle does not cover the requested horizon")
    Rg = cocycle.generator_at_grid()[lo:hi]
    eta_A = float(np.max(np.sum(np.abs(Rg), axis=(1, 2))))
    if len(cocycle.R_samples[lo:hi - 1]):
        eta_A = max(eta_A, float(np.max(np.sum(np.abs(cocycle.R_samples[lo:hi - 1]),
                                                axis=(1, 2)))))
    G = green_integrals(cocycle.log_growth[lo:hi], cocycle.h, cocycle.p_minus).sum(axis=1)
    k = int(np.argmax(G))
    xi_A = float(G[k])
    pm, p = cocycle.p_minus, cocycle.dim
    eta = certificate.eta_hat
    tk = t[lo + k]
    tail = (pm * np.exp(-eta * (tk + horizon)) + (p - pm) * np.exp(-eta * (horizon - tk))) / eta
    return DichotomyConstants(eta_A, xi_A, float(tail), horizon, bool(tail > 0.01 * xi_A))
