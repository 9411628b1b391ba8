"""Bounded solutions of ``z' = A(t) z + f(t, z)`` for upper-triangular ``A``
with an exponential dichotomy, the correspondence between perturbed and
unperturbed trajectories, and its parameter continuity.

The infinite line is replaced by the window ``[center - T, center + T]``
on a uniform grid. Because ``A`` is triangular, the bounded solution of the
linear problem is found one component at a time from the last one up: each
component solves a scalar equation with a known forcing, integrated
forward from the left end when its rate is contracting and backward from
the right end when it is expanding.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DichotomyOverflowError, NonContractionError, \
    NumericError, PreconditionError, UnreliableDeltaError, ValidationError
from .reduced import green_integrals

# cubic-interpolation weights for one grid interval, in units of h / 24
_W_FIRST = np.array([9.0, 19.0, -5.0, 1.0]) / 24.0     # points k .. k+3
_W_MID = np.array([-1.0, 13.0, 13.0, -1.0]) / 24.0     # points k-1 .. k+2
_W_LAST = np.array([1.0, -5.0, 19.0, 9.0]) / 24.0      # points k-2 .. k+1
_MAX_EXPONENT = 700.0


def epsilon_bound(eta_A, xi_A, eta_f, p):
    """Closeness bound ``eta_f xi_A (1 + 2 eta_A xi_A)^p`` and the Lipschitz
    threshold ``1 / (xi_A (1 + eta_A xi_A)^p)`` below which the map is a
    homeomorphism."""
    for name, v in (("eta_A", eta_A), ("xi_A", xi_A), ("eta_f", eta_f)):
        if v < 0:
            raise ValidationError(f"{name} must be non-negative")
    eps = eta_f * xi_A * (1.0 + 2.0 * eta_A * xi_A) ** p
    threshold = 1.0 / (xi_A * (1.0 + eta_A * xi_A) ** p) if xi_A > 0 else np.inf
    return float(eps), float(threshold)


@dataclass
class DichotomyProblem:
    """``z' = A(t) z + f(t, z)`` with its dichotomy and forcing constants.

    ``A(t)`` and ``f(t, z)`` are vectorized over a 1-D array of times
    (``z`` of shape ``(len(t), p)``). ``log_growth(t)``, when given, returns
    the integrals of the diagonal of ``A`` from a fixed origin, which lets
    callers supply them exactly.
    """

    p: int
    p_minus: int
    A: Callable
    f: Callable
    eta_A: float
    xi_A: float
    eta_f: float = 0.0
    L_f: float = 0.0
    horizon: float = 40.0
    step: float = 0.01
    center: float = 0.0
    log_growth: Optional[Callable] = None
    state_independent: bool = False

    def __post_init__(self):
        if self.p < 1 or not 0 <= self.p_minus <= self.p:
            raise ValidationError("need p >= 1 and 0 <= p_minus <= p")
        if self.horizon <= 0 or self.step <= 0:
            raise ValidationError("horizon and step must be positive")
        if round(self.horizon / self.step) < 4:
            raise ValidationError("horizon must span at least four steps")

    @property
    def green_norm(self):
        """Operator bound ``xi_A (1 + 2 eta_A xi_A)^p`` of the solution operator."""
        return self.xi_A * (1.0 + 2.0 * self.eta_A * self.xi_A) ** self.p

    @property
    def contraction(self):
        return self.L_f * self.green_norm

    def grid(self):
        K = int(round(self.horizon / self.step))
        return self.center + self.step * np.arange(-K, K + 1, dtype=float)

    def with_forcing(self, f, state_independent=True, **changes):
        kw = dict(self.__dict__)
        kw.update(f=f, state_independent=state_independent, **changes)
        return DichotomyProblem(**kw)


@dataclass(frozen=True)
class BoundedSolution:
    times: np.ndarray
    z: np.ndarray
    x: np.ndarray
    iterations: int
    defect: float
    increments: tuple = ()
    defects: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.z, axis=1)))

    def at(self, t):
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValidationError(f"t={t} is not on the solution grid")
        return self.z[k]

    def to_csv(self, path):
        p = self.z.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"z_{i + 1}" for i in range(p)] + ["defect"])
            dd = self.defects if self.defects is not None else np.full(len(self.times), np.nan)
            for t, z, d in zip(self.times, self.z, dd):
                w.writerow([format(float(v), ".17g") for v in (t, *z, d)])


# -- linear solver ---------------------------------------------------------------

def _diag_log_growth(Ad, h):
    """Cumulative integrals of the grid samples ``Ad`` (N, p) by cubic quadrature."""
    N = len(Ad)
    inc = np.empty((N - 1,) + Ad.shape[1:])
    inc[0] = _W_FIRST @ Ad[0:4]
    inc[-1] = _W_LAST @ Ad[N - 4:N]
    if N > 3:
        inc[1:-1] = (_W_MID[0] * Ad[0:N - 3] + _W_MID[1] * Ad[1:N - 2]
                     + _W_MID[2] * Ad[2:N - 1] + _W_MID[3] * Ad[3:N])
    return np.vstack([np.zeros((1,) + Ad.shape[1:]), np.cumsum(h * inc, axis=0)])


def _interval_integrals(Om, r, h, anchor):
    """``int_{t_k}^{t_{k+1}} exp(Om(anchor) - Om(s)) r(s) ds`` for every interval.

    ``anchor`` is ``+1`` for the right end of each interval and ``0`` for the
    left; the integrand is sampled on four neighbouring grid points.
    """
    N = len(Om)
    ref = Om[1:] if anchor else Om[:-1]
    q = np.empty(N - 1)

    def part(lo, weights, idx):
        pts = np.arange(4)[None, :] + lo[:, None]
        e = ref[idx][:, None] - Om[pts]
        if np.any(np.abs(e) > _MAX_EXPONENT):
            raise DichotomyOverflowError("local growth exponent exceeds 700; reduce the step")
        return h * np.sum(weights * np.exp(e) * r[pts], axis=1)

    k = np.arange(1, N - 2)
    q[1:N - 2] = part(k - 1, _W_MID, k)
    q[0] = part(np.array([0]), _W_FIRST, np.array([0]))[0]
    q[N - 2] = part(np.array([N - 4]), _W_LAST, np.array([N - 2]))[0]
    return q


def _scalar_bounded(Om, r, h, stable):
    """Bounded (on the window) solution of ``z' = a(t) z + r(t)`` with ``Om' = a``.

    The recurrence ``z_{k+1} = exp(dOm_k) z_k + q_k`` is summed in closed
    form when the exponents allow it; the rounding error of that sum is
    bounded by the same Green integral as the solution itself.
    """
    N = len(Om)
    z = np.zeros(N)
    if stable:
        q = _interval_integrals(Om, r, h, anchor=1)
        if np.max(np.abs(Om)) < 600:
            z[1:] = np.exp(Om[1:]) * np.cumsum(np.exp(-Om[1:]) * q)
            return z
        g = np.exp(np.diff(Om))
        acc = 0.0
        for k in range(N - 1):
            acc = g[k] * acc + q[k]
            z[k + 1] = acc
    else:
        q = _interval_integrals(Om, r, h, anchor=0)
        if np.max(np.abs(Om)) < 600:
            z[:-1] = -np.exp(Om[:-1]) * np.cumsum((np.exp(-Om[:-1]) * q)[::-1])[::-1]
            return z
        g = np.exp(-np.diff(Om))
        acc = 0.0
        for k in range(N - 2, -1, -1):
            acc = g[k] * acc - q[k]
            z[k] = acc
    return z


def solve_linear(Aq, Om, g, h, p_minus):
    """Bounded solution of ``z' = A z + g`` on the grid by back-substitution."""
    N, p = g.shape
    z = np.zeros((N, p))
    for i in range(p - 1, -1, -1):
        r = g[:, i].copy()
        if i + 1 < p:
            r += np.einsum("kj,kj->k", Aq[:, i, i + 1:], z[:, i + 1:])
        z[:, i] = _scalar_bounded(Om[:, i], r, h, i < p_minus)
    return z


def _fd_weights(offsets, at):
    """First-derivative weights on the stencil ``offsets`` (unit spacing) at ``at``."""
    x = np.asarray(offsets, dtype=float) - at
    V = np.vander(x, increasing=True).T
    rhs = np.zeros(len(x))
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


_D_EDGE = [_fd_weights(range(7), k) for k in range(3)]


def _derivative(z, h):
    """Sixth-order derivative of grid samples along axis 0 (7-point stencils)."""
    d = np.empty_like(z)
    if len(z) < 7:
        return np.gradient(z, h, axis=0)
    d[3:-3] = (-z[:-6] + 9 * z[1:-5] - 45 * z[2:-4] + 45 * z[4:-2] - 9 * z[5:-1]
               + z[6:]) / (60 * h)
    for k in range(3):
        d[k] = np.tensordot(_D_EDGE[k], z[:7], axes=1) / h
        d[-1 - k] = -np.tensordot(_D_EDGE[k], z[::-1][:7], axes=1) / h
    return d


class _Prepared:
    def __init__(self, problem):
        self.problem = problem
        self.t = problem.grid()
        self.h = problem.step
        Aq = np.asarray(problem.A(self.t), dtype=float)
        if Aq.shape != (len(self.t), problem.p, problem.p):
            raise ValidationError("A(t) must return an array of shape (len(t), p, p)")
        self.Aq = Aq
        if problem.log_growth is not None:
            Om = np.asarray(problem.log_growth(self.t), dtype=float)
        else:
            Om = _diag_log_growth(np.diagonal(Aq, axis1=1, axis2=2), self.h)
        # local exponents only ever appear as differences
        self.Om = Om - Om[len(Om) // 2]

    def forcing(self, z):
        g = np.asarray(self.problem.f(self.t, z), dtype=float)
        if g.shape != z.shape or not np.all(np.isfinite(g)):
            raise NumericError("forcing returned a non-finite value or wrong shape")
        return g

    def defect(self, z, g=None):
        g = self.forcing(z) if g is None else g
        r = _derivative(z, self.h) - np.einsum("kij,kj->ki", self.Aq, z) - g
        return np.linalg.norm(r, axis=1)


def bounded_solution(problem, tol=1e-10, max_iter=30, initial=None, check_defect=True):
    """Picard iteration for the bounded solution on the problem window.

    Stops when the sup-norm increment is at most ``tol (1 - q)``, ``q`` the
    contraction factor (the theoretical one if below 1, otherwise the
    observed increment ratio). The a-posteriori defect of the ODE at the
    interior grid points must then be at most ``10 tol``.
    """
    prep = _Prepared(problem)
    N, p = len(prep.t), problem.p
    z = np.zeros((N, p)) if initial is None else np.array(initial, dtype=float).reshape(N, p)
    q_theory = problem.contraction
    increments = []
    it = 0
    while True:
        it += 1
        if it > max_iter:
            ratio = increments[-1] / increments[-2] if len(increments) > 1 else np.nan
            raise NonContractionError(
                f"Picard iteration did not converge in {max_iter} iterations", ratio)
        g = prep.forcing(z)
        z_new = solve_linear(prep.Aq, prep.Om, g, prep.h, problem.p_minus)
        inc = float(np.max(np.abs(z_new - z)))
        increments.append(inc)
        z = z_new
        if problem.state_independent and initial is None:
            break
        if q_theory < 1:
            q = q_theory
        elif len(increments) > 1 and increments[-2] > 0:
            q = min(increments[-1] / increments[-2], 0.99)
        else:
            q = 0.99
        if inc <= tol * (1 - q) or inc == 0.0:
            break
    defects = prep.defect(z)
    # one-sided stencils at the window ends differentiate the end-interval
    # quadrature error; the check uses the centred stencils only
    defect = float(np.max(defects[3:-3])) if len(defects) > 6 else float(np.max(defects))
    if check_defect and defect > 10 * tol:
        raise NumericError(f"a-posteriori defect {defect:.3g} exceeds 10*tol; refine the step")
    k0 = len(prep.t) // 2
    return BoundedSolution(prep.t, z, z[k0].copy(), it, defect, tuple(increments), defects)


# -- perturbed trajectories and the correspondence map ---------------------------

def _integrate_perturbed(problem, s, u, times, tol=1e-12, bound=1e15):
    """Solution of the full nonlinear equation through ``(s, u)`` at ``times``."""
    def rhs(t, z):
        tt = np.array([t])
        return (problem.A(tt)[0] @ z) + np.asarray(problem.f(tt, z[None]), dtype=float)[0]

    def blowup(t, z):
        return bound - np.linalg.norm(z)
    blowup.terminal = True

    u = np.asarray(u, dtype=float)
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), len(u)))
    for mask, end in ((times >= s, times.max()), (times < s, times.min())):
        if not np.any(mask):
            continue
        if end == s:
            out[mask] = u
            continue
        sol = solve_ivp(rhs, (s, end), u, method="DOP853", t_eval=times[mask][::1 if end > s else -1],
                        rtol=tol, atol=tol * 1e-2, events=blowup)
        if sol.status != 0:
            raise UnreliableDeltaError(
                f"perturbed trajectory from s={s} leaves the window near t={sol.t[-1]:.6g}")
        out[mask] = sol.y.T[::1 if end > s else -1]
    return out


def delta_map(problem, s, u, window=25.0, tol=1e-10):
    """The unperturbed initial value at ``s`` whose trajectory stays at bounded
    distance from the perturbed trajectory through ``(s, u)``.

    The linear bounded-solution problem lives on ``[s - window, s + window]``;
    its truncation error at ``s`` decays like ``exp(-rate * window)``.
    """
    K = int(round(window / problem.step))
    times = s + problem.step * np.arange(-K, K + 1, dtype=float)
    z = _integrate_perturbed(problem, s, u, times)
    g = np.asarray(problem.f(times, z), dtype=float)
    sub = problem.with_forcing(lambda t, _z: g, center=s, horizon=window)
    sol = bounded_solution(sub, tol=tol)
    return np.asarray(u, dtype=float) - sol.x


def linear_flow(problem, s, u, t, tol=1e-12):
    """``z_A(t; s, u)``: the unperturbed trajectory through ``(s, u)``."""
    lin = problem.with_forcing(lambda tt, z: np.zeros_like(z))
    times = np.sort(np.array([s, t], dtype=float)) if t != s else np.array([s])
    z = _integrate_perturbed(lin, s, u, times, tol=tol)
    return z[int(np.argmin(np.abs(times - t)))]


def perturbed_flow(problem, s, u, t, tol=1e-12):
    """``z_{A,f}(t; s, u)``: the perturbed trajectory through ``(s, u)``."""
    times = np.sort(np.array([s, t], dtype=float)) if t != s else np.array([s])
    z = _integrate_perturbed(problem, s, u, times, tol=tol)
    return z[int(np.argmin(np.abs(times - t)))]


# -- class validation -------------------------------------------------------------

@dataclass(frozen=True)
class ClassReport:
    checks: dict  # condition -> (passed, value, witness)

    @property
    def passed(self):
        return all(v[0] for v in self.checks.values())

    def to_dict(self):
        return {k: {"pass": bool(v[0]), "value": v[1], "witness": v[2]}
                for k, v in self.checks.items()}


def validate_class(problem, sample_budget=400, seed=0, z_radius=1.0, rel=1e-6):
    """Sample-based check of triangularity, the bounds on ``A`` and ``f``,
    the dichotomy integral ``xi_A`` and the Lipschitz constant of ``f``."""
    if sample_budget < 100:
        raise ValidationError("sample_budget must be at least 100")
    rng = np.random.default_rng(seed)
    prep = _Prepared(problem)
    t, Aq = prep.t, prep.Aq
    checks = {}

    lower = np.abs(np.tril(Aq, -1)).max(axis=(1, 2))
    k = int(np.argmax(lower))
    checks["triangular"] = (bool(lower[k] <= 1e-12 * max(1.0, np.abs(Aq).max())),
                            float(lower[k]), float(t[k]))

    sums = np.abs(Aq).sum(axis=(1, 2))
    k = int(np.argmax(sums))
    checks["bounded"] = (bool(sums[k] <= problem.eta_A * (1 + rel)), float(sums[k]), float(t[k]))

    G = green_integrals(prep.Om, prep.h, problem.p_minus).sum(axis=1)
    mid = slice(len(G) // 4, 3 * len(G) // 4)
    xi = float(np.max(G[mid]))
    checks["hyperbolic"] = (bool(xi <= problem.xi_A * (1 + rel)), xi,
                            float(t[mid][int(np.argmax(G[mid]))]))

    n = sample_budget
    ts = rng.choice(t, n)
    zs = rng.standard_normal((n, problem.p))
    zs *= (z_radius * rng.random(n) ** (1 / problem.p) / np.linalg.norm(zs, axis=1))[:, None]
    fv = np.linalg.norm(np.asarray(problem.f(ts, zs), dtype=float), axis=1)
    k = int(np.argmax(fv))
    checks["forcing_bound"] = (bool(fv[k] <= problem.eta_f * (1 + rel) + 1e-15), float(fv[k]),
                               [float(ts[k]), *map(float, zs[k])])

    near = zs * rng.random((n, 1)) * 0.1
    dz = rng.standard_normal((n, problem.p)) * 1e-4 * z_radius
    z1 = np.vstack([zs, near])
    z2 = z1 + np.vstack([rng.standard_normal((n, problem.p)) * 0.1 * z_radius, dz])
    tt = np.concatenate([ts, ts])
    f1 = np.asarray(problem.f(tt, z1), dtype=float)
    f2 = np.asarray(problem.f(tt, z2), dtype=float)
    quot = np.linalg.norm(f1 - f2, axis=1) / np.linalg.norm(z1 - z2, axis=1)
    k = int(np.argmax(quot))
    checks["lipschitz"] = (bool(quot[k] <= problem.L_f * (1 + rel) + 1e-15), float(quot[k]),
                           [float(tt[k]), *map(float, z1[k])])
    return ClassReport(checks)


# -- parameter continuity ----------------------------------------------------------

@dataclass(frozen=True)
class ContinuityTable:
    parameters: np.ndarray
    values: np.ndarray          # bounded-solution initial value per parameter
    failed: tuple               # indices whose solve failed
    spacings: np.ndarray        # multiples of the parameter step
    modulus: np.ndarray         # max |value_i - value_j| at each spacing

    def to_rows(self):
        return [(float(s), float(m)) for s, m in zip(self.spacings, self.modulus)]


def continuity_probe(family, parameters, tol=1e-10):
    """Initial values ``x(lam)`` of the bounded solutions over a parameter grid and
    their modulus of continuity per grid spacing."""
    lam = np.asarray(parameters, dtype=float)
    vals, failed = [], []
    for i, l in enumerate(lam):
        try:
            vals.append(bounded_solution(family(float(l)), tol=tol).x)
        except (NumericError, PreconditionError):
            failed.append(i)
            vals.append(None)
    p = next((len(v) for v in vals if v is not None), 0)
    X = np.array([v if v is not None else np.full(p, np.nan) for v in vals])
    steps = np.diff(lam)
    base = float(np.min(steps)) if len(steps) else 0.0
    spacings, modulus = [], []
    for m in range(1, len(lam)):
        d = np.linalg.norm(X[m:] - X[:-m], axis=1)
        d = d[np.isfinite(d)]
        if len(d):
            spacings.append(m * base)
            modulus.append(float(np.max(d)))
    return ContinuityTable(lam, X, tuple(failed), np.array(spacings), np.array(modulus))
