"""Moving-frame charts around an orbit and the standard system of a field.

The chart sends section time ``t`` and transversal coordinates ``y`` to
``phi_t(w) + gamma(t) y``. Pulling a field ``V`` back through it and
dividing by the longitudinal component gives an ODE in ``y`` with section
time as the independent variable.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ChartDegeneracyError, NotInNeighborhoodError, OutOfChartError, \
    ValidationError
from .reduced import frame_rates_exact

SPEED_WINDOW = (0.5, 2.0)
MAX_CHART_CONDITION = 1e8


def smoothstep(s):
    """C2 smoothstep ``s^3 (10 - 15 s + 6 s^2)`` clipped to ``[0, 1]``."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def bump(r):
    """1 on ``[0, 1/2]``, 0 on ``[1, inf)``, smoothstep in between."""
    r = np.asarray(r, dtype=float)
    return smoothstep(2.0 * (1.0 - r))


class SectionChart:
    """Chart ``(t, y) -> phi_t(w) + gamma(t) y`` over a transported frame path.

    Section times are restricted to the grid of the frame path; callers pass
    grid indices. ``frame_rates`` defaults to the exact frame derivative
    computed from ``spec``; without ``spec`` the path is differenced.
    """

    def __init__(self, frames, radius=np.inf, spec=None, frame_rates=None):
        if not radius > 0:
            raise ValidationError("chart radius must be positive")
        self.frames = frames
        self.radius = float(radius)
        self.spec = spec
        if frame_rates is None:
            frame_rates = frame_rates_exact(spec, frames) if spec is not None \
                else frames.frame_rates()
        self.frame_rates = frame_rates

    @property
    def n(self):
        return self.frames.base.shape[1]

    @property
    def times(self):
        return self.frames.times

    def index(self, t):
        return self.frames.index_of(t)

    def _check_radius(self, y):
        r = np.linalg.norm(y, axis=-1)
        if np.any(r >= self.radius):
            raise OutOfChartError(f"|y| = {float(np.max(r)):.6g} reaches the chart radius "
                                  f"{self.radius:.6g}")

    def embed(self, k, y):
        """Ambient point(s) for grid index ``k`` and coordinates ``y`` (batched)."""
        y = np.asarray(y, dtype=float)
        self._check_radius(y)
        F = self.frames
        return F.base[k] + np.einsum("...np,...p->...n", F.frames[k], y)

    def coordinates(self, k, x):
        """Frame coordinates of an ambient point on the section at index ``k``."""
        F = self.frames
        return np.einsum("...np,...n->...p", F.frames[k], np.asarray(x) - F.base[k])

    def jacobian(self, k, y):
        """``[dP/dt, dP/dy]`` at ``(t_k, y)`` (batched)."""
        y = np.asarray(y, dtype=float)
        F = self.frames
        dt_col = F.speed[k] + np.einsum("...np,...p->...n", self.frame_rates[k], y)
        G = np.broadcast_to(F.frames[k], dt_col.shape[:-1] + F.frames.shape[1:])
        return np.concatenate([dt_col[..., None], G], axis=-1)

    def lift(self, V, k, y, check=True):
        """Pull-back ``V_hat = J^{-1} V(P(t, y))`` of the field ``V``."""
        k = np.asarray(k)
        y = np.asarray(y, dtype=float)
        k, y = np.broadcast_arrays(k[..., None], y)
        k = k[..., 0]
        x = self.embed(k, y)
        J = self.jacobian(k, y)
        Jinv = np.linalg.inv(J)
        if check:
            # Frobenius condition number bounds the spectral one from above
            cond = np.linalg.norm(J, axis=(-2, -1)) * np.linalg.norm(Jinv, axis=(-2, -1))
            if not np.all(cond <= MAX_CHART_CONDITION):
                raise ChartDegeneracyError(
                    f"chart Jacobian condition {float(np.max(cond)):.3g} exceeds "
                    f"{MAX_CHART_CONDITION:.0e}; shrink the chart radius")
        return np.einsum("...ij,...j->...i", Jinv, V(x))


def section_embed(chart, t, y):
    return chart.embed(chart.index(t), y)


def lift_field(chart, V, t, y):
    return chart.lift(V, chart.index(t), y)


class StandardSystem:
    """Standard system of ``V`` in a chart, with the cocycle giving ``R*``.

    ``rhs``, ``speed`` and ``remainder`` take grid indices ``k`` and
    coordinates ``y`` and broadcast over leading axes.
    """

    def __init__(self, chart, V, cocycle, window=SPEED_WINDOW):
        if len(cocycle.times) != len(chart.times) or \
                np.max(np.abs(cocycle.times - chart.times)) > 1e-9:
            raise ValidationError("cocycle and chart must share the grid")
        self.chart = chart
        self.V = V
        self.cocycle = cocycle
        self.window = window
        self._R = cocycle.generator_at_grid()

    def evaluate(self, k, y):
        """Return ``(V*, V*_rem, V_hat^0)``."""
        y = np.asarray(y, dtype=float)
        lifted = self.chart.lift(self.V, k, y)
        speed = lifted[..., 0]
        lo, hi = self.window
        if np.any(speed < lo) or np.any(speed > hi):
            bad = speed[(speed < lo) | (speed > hi)].ravel()[0]
            raise NotInNeighborhoodError(
                f"longitudinal speed {bad:.6g} outside the window [{lo}, {hi}]")
        rhs = lifted[..., 1:] / speed[..., None]
        lin = np.einsum("...ij,...j->...i", self._R[np.asarray(k)], y)
        return rhs, rhs - lin, speed

    @property
    def h(self):
        return self.chart.frames.h

    def rhs(self, k, y):
        return self.evaluate(k, y)[0]

    def remainder(self, k, y):
        return self.evaluate(k, y)[1]

    def speed(self, k, y):
        return self.evaluate(k, y)[2]


class StackedSystem:
    """Several standard systems of the same field on a common grid, evaluated
    together: ``evaluate(k, Y)`` takes one grid index and one row of ``Y``
    per system."""

    def __init__(self, systems):
        if not systems:
            raise ValidationError("need at least one system")
        first = systems[0]
        for s in systems[1:]:
            if len(s.chart.times) != len(first.chart.times) or s.h != first.h:
                raise ValidationError("stacked systems must share the grid")
        self.systems = systems
        self.V = first.V
        self.window = first.window
        self.h = first.h
        self.base = np.stack([s.chart.frames.base for s in systems], axis=1)
        self.speed_vec = np.stack([s.chart.frames.speed for s in systems], axis=1)
        self.frames = np.stack([s.chart.frames.frames for s in systems], axis=1)
        self.rates = np.stack([s.chart.frame_rates for s in systems], axis=1)
        self.R = np.stack([s._R for s in systems], axis=1)
        self.radius = min(s.chart.radius for s in systems)

    def evaluate(self, k, Y):
        Y = np.asarray(Y, dtype=float)
        if np.any(np.linalg.norm(Y, axis=-1) >= self.radius):
            raise OutOfChartError("a trajectory reached the chart radius")
        G = self.frames[k]
        x = self.base[k] + np.einsum("mnp,mp->mn", G, Y)
        dt_col = self.speed_vec[k] + np.einsum("mnp,mp->mn", self.rates[k], Y)
        J = np.concatenate([dt_col[..., None], G], axis=-1)
        Jinv = np.linalg.inv(J)
        cond = np.linalg.norm(J, axis=(-2, -1)) * np.linalg.norm(Jinv, axis=(-2, -1))
        if not np.all(cond <= MAX_CHART_CONDITION):
            raise ChartDegeneracyError("chart Jacobian is ill conditioned")
        lifted = np.einsum("mij,mj->mi", Jinv, self.V(x))
        speed = lifted[:, 0]
        lo, hi = self.window
        if np.any(speed < lo) or np.any(speed > hi):
            raise NotInNeighborhoodError(f"longitudinal speed outside the window [{lo}, {hi}]")
        rhs = lifted[:, 1:] / speed[:, None]
        return rhs, rhs - np.einsum("mij,mj->mi", self.R[k], Y), speed


def standard_rhs_and_remainder(chart, V, cocycle, t, y):
    system = StandardSystem(chart, V, cocycle)
    return system.evaluate(chart.index(t), y)


def bump_modify(rem, xi, radius=np.inf):
    """``(k, y) -> b(|y| / xi) rem(k, y)``, zero wherever the bump vanishes."""
    if not 0 < xi <= radius:
        raise ValidationError("need 0 < xi <= chart radius")

    def modified(k, y):
        y = np.asarray(y, dtype=float)
        k = np.broadcast_to(np.asarray(k), y.shape[:-1])
        r = np.linalg.norm(y, axis=-1) / xi
        out = np.zeros_like(y)
        live = r < 1.0
        if np.any(live):
            out[live] = bump(r[live])[..., None] * rem(k[live], y[live])
        return out

    return modified


def integrate_standard(system, k0, y0, k1, stride=2):
    """Classical RK4 on the standard system between grid indices ``k0`` and ``k1``.

    Each step spans ``stride`` grid intervals (``stride`` even) so that the
    midpoint stages sit on grid times. Ambient time is integrated alongside
    from ``d(tau)/dt = 1 / V_hat^0``. Returns indices, coordinates and
    ambient times at every step.
    """
    if stride % 2:
        raise ValidationError("stride must be even")
    steps = k1 - k0
    if steps % stride:
        raise ValidationError("index span must be a multiple of the stride")
    direction = 1 if steps >= 0 else -1
    h = system.h * stride * direction
    half = stride // 2 * direction

    def f(k, y):
        rhs, _, speed = system.evaluate(k, y)
        return rhs, 1.0 / speed

    y = np.asarray(y0, dtype=float).copy()
    tau = np.zeros(y.shape[:-1])
    ks, ys, taus = [k0], [y.copy()], [tau]
    k = k0
    for _ in range(abs(steps) // stride):
        a, ta = f(k, y)
        b, tb = f(k + half, y + 0.5 * h * a)
        c, tc = f(k + half, y + 0.5 * h * b)
        d, td = f(k + 2 * half, y + h * c)
        y = y + h / 6.0 * (a + 2 * b + 2 * c + d)
        tau = tau + h / 6.0 * (ta + 2 * tb + 2 * tc + td)
        k += 2 * half
        ks.append(k)
        ys.append(y.copy())
        taus.append(tau)
    return np.array(ks), np.array(ys), np.array(taus)


# -- diagnostics ----------------------------------------------------------------

def _ball_samples(rng, count, dim, radius):
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = radius * rng.random(count) ** (1.0 / dim)
    return d * r[:, None]


def remainder_lipschitz(system, xi, n_pairs=400, n_times=20, seed=0):
    """Largest observed ``|rem(t, y1) - rem(t, y2)| / |y1 - y2|`` for ``|y| <= xi``."""
    rng = np.random.default_rng(seed)
    N = len(system.chart.times)
    ks = rng.integers(0, N, n_pairs)
    if n_times:
        ks = np.linspace(0, N - 1, n_times).astype(int)[rng.integers(0, n_times, n_pairs)]
    p = system.cocycle.dim
    y1 = _ball_samples(rng, n_pairs, p, xi)
    # half the pairs are close together to catch local slopes
    y2 = _ball_samples(rng, n_pairs, p, xi)
    close = np.arange(n_pairs) % 2 == 0
    step = _ball_samples(rng, n_pairs, p, 1e-3 * xi)
    y2[close] = y1[close] + step[close]
    y2 *= np.minimum(1.0, xi / np.maximum(np.linalg.norm(y2, axis=1), 1e-300))[:, None]
    r1 = system.remainder(ks, y1)
    r2 = system.remainder(ks, y2)
    dist = np.linalg.norm(y1 - y2, axis=1)
    ok = dist > 1e-12 * xi
    if not np.any(ok):
        return 0.0
    return float(np.max(np.linalg.norm(r1 - r2, axis=1)[ok] / dist[ok]))


def remainder_sup(system, xi, n_samples=400, n_times=20, seed=0):
    """Largest observed ``|V*_rem|`` over ``|y| <= xi``, origin included."""
    rng = np.random.default_rng(seed)
    N = len(system.chart.times)
    ks_t = np.linspace(0, N - 1, n_times).astype(int)
    p = system.cocycle.dim
    ys = np.vstack([np.zeros((1, p)), _ball_samples(rng, n_samples - 1, p, xi)])
    ks = ks_t[rng.integers(0, n_times, n_samples)]
    ks = np.concatenate([ks_t, ks])
    ys = np.vstack([np.zeros((n_times, p)), ys])
    return float(np.max(np.linalg.norm(system.remainder(ks, ys), axis=1)))


def estimate_chart_radius(chart, candidates=(1.0, 0.5, 0.25, 0.1, 0.05, 0.01), n_probe=64,
                          n_times=20, seed=0, max_condition=1e6):
    """Largest candidate radius whose probes keep the chart Jacobian well conditioned."""
    rng = np.random.default_rng(seed)
    N = len(chart.times)
    p = chart.frames.dim
    ks = np.linspace(0, N - 1, n_times).astype(int)
    for c in sorted(candidates, reverse=True):
        y = _ball_samples(rng, n_probe, p, c)
        d = y / np.maximum(np.linalg.norm(y, axis=1), 1e-300)[:, None]
        y = np.vstack([y, 0.999 * c * d])
        kk = ks[rng.integers(0, n_times, len(y))]
        cond = np.linalg.cond(chart.jacobian(kk, y))
        if np.all(np.isfinite(cond)) and np.max(cond) < max_condition:
            return float(c)
    raise ChartDegeneracyError("no candidate chart radius keeps the Jacobian well conditioned")


@dataclass(frozen=True)
class FieldDistance:
    distance: float
    flat_ratio: float  # |S - V|_C1 estimate over the probed tube / distance
    sample_count: int

    def to_dict(self):
        return {"distance": self.distance, "flat_ratio": self.flat_ratio,
                "sample_count": self.sample_count,
                "note": "estimate over sampled chart points, not a supremum over the space"}


def field_distance(S, V, charts, y_samples, index_stride=50, fd_step=1e-5):
    """Estimated C1 distance between the lifts of ``S`` and ``V`` over sampled charts."""
    if not charts:
        raise ValidationError("need at least one chart")
    y_samples = np.atleast_2d(np.asarray(y_samples, dtype=float))
    best, amb, count = 0.0, 0.0, 0
    for chart in charts:
        ks = np.arange(0, len(chart.times), index_stride)
        K, Y = np.meshgrid(ks, np.arange(len(y_samples)), indexing="ij")
        K, Y = K.ravel(), y_samples[Y.ravel()]
        diff = chart.lift(S, K, Y) - chart.lift(V, K, Y)
        total = np.linalg.norm(diff, axis=-1)
        dsum = np.zeros_like(total)
        p = Y.shape[1]
        Jd = np.empty(diff.shape + (p,))
        for j in range(p):
            e = np.zeros(p)
            e[j] = fd_step
            dp = chart.lift(S, K, Y + e) - chart.lift(V, K, Y + e)
            dm = chart.lift(S, K, Y - e) - chart.lift(V, K, Y - e)
            Jd[..., j] = (dp - dm) / (2 * fd_step)
        dsum = np.linalg.norm(Jd, ord=2, axis=(-2, -1))
        best = max(best, float(np.max(total + dsum)))
        x = chart.embed(K, Y)
        c1 = np.linalg.norm(S(x) - V(x), axis=-1) + \
            np.linalg.norm(S.jacobian(x) - V.jacobian(x), ord=2, axis=(-2, -1))
        amb = max(amb, float(np.max(c1)))
        count += len(K)
    ratio = amb / best if best > 0 else float("nan")
    return FieldDistance(best, ratio, count)
