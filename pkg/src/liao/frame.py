"""Transversal orthonormal frames and their Gram-Schmidt transport along orbits.

A frame at ``w`` is an ``n x (n-1)`` matrix ``gamma`` with orthonormal
columns spanning the hyperplane orthogonal to ``S(w)``. Transport pushes
the columns with the variational flow over a step ``h``, projects them
back onto the new transversal hyperplane and re-orthonormalises with a
positive-diagonal QR. The triangular QR factors are kept; they are the
one-step transversal cocycle in frame coordinates.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from ._ode import Stepper
from .errors import DegenerateTransportError, DivergenceError, SingularityError, \
    ValidationError
from .field import DEFAULT_BOUND, integrate_flow

ORTHO_TOL = 1e-12
MAX_CONDITION = 1e12
BURN_STEP = 0.01  # coarsest grid step used while settling stable-first frames


@dataclass(frozen=True)
class TransversalFrame:
    base: np.ndarray
    columns: np.ndarray  # n x (n-1)

    @property
    def dim(self):
        return self.columns.shape[1]

    def embed(self, y):
        """Coordinates -> transversal vector (``y -> gamma y``)."""
        return self.columns @ np.asarray(y, dtype=float)

    def coordinates(self, v):
        return self.columns.T @ np.asarray(v, dtype=float)

    def check(self, speed, tol=ORTHO_TOL):
        g = self.columns
        ortho = np.max(np.abs(g.T @ g - np.eye(g.shape[1])))
        trans = np.max(np.abs(np.asarray(speed) @ g)) / np.linalg.norm(speed)
        return ortho <= tol and trans <= tol

    def rotated(self, rotation):
        """Frame ``gamma @ rotation`` (``rotation`` orthogonal)."""
        return TransversalFrame(self.base, self.columns @ rotation)


def orthonormal_complement(S_w, base=None):
    """Deterministic orthonormal basis of ``S_w``'s orthogonal complement.

    Householder reflection sending ``S_w/|S_w|`` to ``-sign(v_1) e_1``;
    the remaining reflected axes are the columns.
    """
    s = np.asarray(S_w, dtype=float)
    norm = np.linalg.norm(s)
    if not norm > 0.0:
        raise SingularityError("cannot build a transversal frame at a zero field vector")
    v = s / norm
    sign = 1.0 if v[0] >= 0 else -1.0
    u = v.copy()
    u[0] += sign
    H = np.eye(len(v)) - 2.0 * np.outer(u, u) / (u @ u)
    base = np.zeros_like(s) if base is None else np.asarray(base, dtype=float)
    return TransversalFrame(base, H[:, 1:].copy())


def positive_qr(P):
    """Batched reduced QR with a positive diagonal in ``R``."""
    Q, R = np.linalg.qr(P)
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    d[d == 0] = 1.0
    return Q * d[..., None, :], R * d[..., :, None]


@dataclass(frozen=True)
class FramePath:
    """Frames ``chi(t, (w, gamma))`` on the uniform grid ``times``.

    ``step_factors[k]`` is the upper-triangular matrix carrying frame
    coordinates at ``times[k]`` to those at ``times[k+1]``.
    """

    times: np.ndarray
    base: np.ndarray
    speed: np.ndarray
    frames: np.ndarray
    step_factors: np.ndarray
    h: float

    @property
    def index0(self):
        return int(np.argmin(np.abs(self.times)))

    @property
    def dim(self):
        return self.frames.shape[2]

    def frame(self, k):
        return TransversalFrame(self.base[k].copy(), self.frames[k].copy())

    def index_of(self, t, atol=1e-9):
        k = int(round((t - self.times[0]) / self.h))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > atol * max(1.0, abs(t)):
            raise ValidationError(f"t={t} is not a grid time of the frame path")
        return k

    def shifted(self, k):
        """The same path re-based at grid index ``k``."""
        return FramePath(self.times - self.times[k], self.base, self.speed, self.frames,
                         self.step_factors, self.h)

    def window(self, lo, hi):
        """Sub-path over grid indices ``lo..hi`` inclusive."""
        return FramePath(self.times[lo:hi + 1], self.base[lo:hi + 1], self.speed[lo:hi + 1],
                         self.frames[lo:hi + 1], self.step_factors[lo:hi], self.h)

    def frame_rates(self):
        """Centered-difference derivative of the frames along the grid."""
        F, h = self.frames, self.h
        D = np.empty_like(F)
        if len(F) < 3:
            D[:] = 0.0 if len(F) == 1 else (F[1] - F[0]) / h
            return D
        D[1:-1] = (F[2:] - F[:-2]) / (2 * h)
        D[0] = (-3 * F[0] + 4 * F[1] - F[2]) / (2 * h)
        D[-1] = (3 * F[-1] - 4 * F[-2] + F[-3]) / (2 * h)
        return D

    def max_orthonormality_defect(self):
        p = self.dim
        G = np.einsum("kni,knj->kij", self.frames, self.frames)
        return float(np.max(np.abs(G - np.eye(p))))

    def max_transversality_defect(self):
        dots = np.einsum("kn,knj->kj", self.speed, self.frames)
        return float(np.max(np.abs(dots) / np.linalg.norm(self.speed, axis=1)[:, None]))

    def to_csv(self, path):
        n, p = self.base.shape[1], self.dim
        header = (["t"] + [f"w_{i + 1}" for i in range(n)]
                  + [f"g_{i + 1}_{j + 1}" for j in range(p) for i in range(n)])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.base[k], *self.frames[k].T.ravel()]
                writer.writerow([format(float(x), ".17g") for x in row])


class _VariationalRHS:
    """``(W, Q) -> (S(W), S'(W) Q)`` for a batch, caching the last evaluation."""

    def __init__(self, spec, m, p):
        self.spec, self.m, self.n, self.p = spec, m, spec.dimension, p
        self._key = None
        self._val = None

    def field(self, W):
        key = W.tobytes()
        if key != self._key:
            if self.p == 0:
                self._val = (self.spec(W), None)
            else:
                self._val = self.spec.evaluate(W)
            self._key = key
        return self._val

    def __call__(self, t, y):
        m, n, p = self.m, self.n, self.p
        W = y[:m * n].reshape(m, n)
        Q = y[m * n:].reshape(m, n, p)
        S, J = self.field(W)
        if self.p == 0:
            return S.ravel()
        return np.concatenate([S.ravel(), (J @ Q).ravel()])

    def pack(self, W, Q):
        return np.concatenate([W.ravel(), Q.ravel()])

    def unpack(self, y):
        m, n, p = self.m, self.n, self.p
        return y[:m * n].reshape(m, n), y[m * n:].reshape(m, n, p)


def _sweep(spec, W0, G0, h, nsteps, direction, tol, anchors=None, bound=DEFAULT_BOUND):
    """Transport a batch of frames ``nsteps`` grid steps in one time direction.

    Returns base points, speeds, frames (each with ``nsteps + 1`` entries,
    in the order visited) and the raw QR factors of every step. With
    ``anchors`` (shape ``(nsteps + 1, m, n)``) every step restarts from the
    given base point instead of the integrated one.
    """
    m, n = W0.shape
    p = G0.shape[2]
    rhs = _VariationalRHS(spec, m, p)
    W, Q = W0.copy(), G0.copy()
    bases, speeds, frames, factors = [W.copy()], [rhs.field(W)[0].copy()], [Q.copy()], []
    stepper = Stepper(rhs, 0.0, rhs.pack(W, Q), tol, direction=direction, h0=h,
                      bound=bound, bound_slice=slice(0, m * n))
    for k in range(nsteps):
        if anchors is not None:
            W = anchors[k]
        stepper.set_state(rhs.pack(W, Q))
        stepper.advance_to(stepper.t + direction * h)
        W1, P = rhs.unpack(stepper.y)
        W1 = W1.copy() if anchors is None else anchors[k + 1]
        S1 = rhs.field(W1)[0]
        speed = np.linalg.norm(S1, axis=1)
        if np.any(speed < 1e-12):
            raise SingularityError(f"field vanishes along the orbit near step {k + 1}")
        W = W1
        bases.append(W.copy())
        speeds.append(S1.copy())
        if p == 0:
            continue
        shat = S1 / speed[:, None]
        P = P - shat[:, :, None] * np.einsum("mn,mnp->mp", shat, P)[:, None, :]
        Q, R = positive_qr(P)
        diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
        if np.any(diag.min(axis=1) <= diag.max(axis=1) / MAX_CONDITION):
            raise DegenerateTransportError(
                f"pushed frame columns lost rank at step {k + 1}; use a smaller h")
        frames.append(Q.copy())
        factors.append(R)
    return bases, speeds, frames, factors


def _grid_counts(span, h):
    t_min, t_max = float(span[0]), float(span[1])
    if not t_min <= 0.0 <= t_max:
        raise ValidationError("span must contain 0")
    if h <= 0:
        raise ValidationError("h must be positive")
    n_fwd = int(np.ceil(t_max / h - 1e-9))
    n_back = int(np.ceil(-t_min / h - 1e-9))
    return n_back, n_fwd


def _assemble(n_back, n_fwd, h, fwd, back, sample):
    """Merge forward and backward sweeps of one batch member into a FramePath."""
    fb, fs, ff, fr = fwd
    bb, bs, bf, br = back
    base = [b[sample] for b in bb[::-1]] + [b[sample] for b in fb[1:]]
    speed = [s[sample] for s in bs[::-1]] + [s[sample] for s in fs[1:]]
    frames = [f[sample] for f in bf[::-1]] + [f[sample] for f in ff[1:]]
    # a backward factor maps coordinates at t_k to t_{k-1}; invert for forward
    steps = [np.linalg.inv(r[sample]) for r in br[::-1]] + [r[sample] for r in fr]
    times = h * np.arange(-n_back, n_fwd + 1, dtype=float)
    p = frames[0].shape[1]
    return FramePath(times, np.array(base), np.array(speed), np.array(frames),
                     np.array(steps).reshape(-1, p, p), float(h))


def transport_frames(spec, W0, G0, span, h, tol=1e-11):
    """Batched ``frame_transport``: one FramePath per row of ``W0``."""
    W0 = np.atleast_2d(np.asarray(W0, dtype=float))
    G0 = np.asarray(G0, dtype=float).reshape(W0.shape[0], W0.shape[1], -1)
    n_back, n_fwd = _grid_counts(span, h)
    fwd = _sweep(spec, W0, G0, h, n_fwd, 1.0, tol)
    back = _sweep(spec, W0, G0, h, n_back, -1.0, tol)
    return [_assemble(n_back, n_fwd, h, fwd, back, i) for i in range(W0.shape[0])]


def frame_transport(spec, w0, frame0, span, h, tol=1e-11):
    """Gram-Schmidt transport of ``frame0`` along the orbit of ``w0``."""
    w0 = np.asarray(w0, dtype=float)
    cols = frame0.columns if isinstance(frame0, TransversalFrame) else np.asarray(frame0)
    if cols.shape != (spec.dimension, spec.dimension - 1):
        raise ValidationError("frame must be an n x (n-1) matrix")
    if isinstance(frame0, TransversalFrame) and not np.allclose(frame0.base, w0):
        raise ValidationError("frame0 must be based at w0")
    return transport_frames(spec, w0[None], cols[None], span, h, tol)[0]


def random_block_rotation(p, p_minus, rng):
    """Random orthogonal matrix, block-diagonal over stable and unstable blocks."""
    Rm = np.zeros((p, p))
    for lo, hi in ((0, p_minus), (p_minus, p)):
        k = hi - lo
        if k == 0:
            continue
        Z = rng.standard_normal((k, k))
        Qz, Rz = np.linalg.qr(Z)
        Qz = Qz * np.sign(np.diag(Rz))
        Rm[lo:hi, lo:hi] = Qz
    return Rm


def stable_first_frame_paths(spec, W0, span, h, burn_in=10.0, tol=1e-11, seed=0):
    """Frame paths whose leading columns span the stable bundle, one per row of ``W0``.

    The frame is swept backward in time from ``span[1] + burn_in``, the
    direction in which Gram-Schmidt converges onto the stable subspace, with
    every step anchored on a forward-integrated base trajectory from ``w0``.
    The burn-in part runs on a grid no finer than ``BURN_STEP`` and is
    discarded. The first ``k`` columns end up spanning
    the most backward-expanded ``k``-dimensional subspace, which is the
    stable bundle when ``k`` is the stable index.
    """
    W0 = np.atleast_2d(np.asarray(W0, dtype=float))
    m, n = W0.shape
    n_back, n_fwd = _grid_counts(span, h)
    # the burn-in only settles the frame, so it runs on a coarser grid
    h_burn = max(h, BURN_STEP)
    n_burn = int(np.ceil(burn_in / h_burn - 1e-9))
    fine = h * np.arange(-n_back, n_fwd + 1, dtype=float)
    grid = np.concatenate([fine, fine[-1] + h_burn * np.arange(1, n_burn + 1)])
    anchors = _anchor_states(spec, W0, grid, n_back, tol)
    rng = np.random.default_rng(seed)
    end = anchors[-1]
    G = np.empty((m, n, n - 1))
    for i in range(m):
        g = orthonormal_complement(spec(end[i]), end[i]).columns
        G[i] = g @ random_block_rotation(n - 1, n - 1, rng)
    if n_burn:
        burn = _sweep(spec, end, G, h_burn, n_burn, -1.0, tol,
                      anchors=anchors[-1:-n_burn - 2:-1])
        G = burn[2][-1]
    anchors = anchors[:len(fine)]
    bases, speeds, frames, factors = _sweep(spec, anchors[-1], G, h, len(fine) - 1, -1.0, tol,
                                            anchors=anchors[::-1])
    keep = n_back + n_fwd + 1
    speeds = np.array(speeds[::-1])[:keep]
    frames = np.array(frames[::-1])[:keep]
    steps = np.linalg.inv(np.array(factors[::-1])[:keep - 1])
    times = h * np.arange(-n_back, n_fwd + 1, dtype=float)
    base = anchors[:keep]
    return [FramePath(times, base[:, i].copy(), speeds[:, i].copy(), frames[:, i].copy(),
                      steps[:, i].copy(), float(h)) for i in range(m)]


def _anchor_states(spec, W0, grid, k0, tol):
    """Batched flow states on ``grid`` (``grid[k0] == 0``) via DOP853 dense output."""
    m, n = W0.shape
    out = np.empty((len(grid), m, n))
    out[k0] = W0

    def rhs(t, y):
        return spec(y.reshape(m, n)).ravel()

    def blowup(t, y):
        return DEFAULT_BOUND - np.max(np.linalg.norm(y.reshape(m, n), axis=1))
    blowup.terminal = True

    for sel in (slice(k0 + 1, None), slice(None, k0)):
        ts = grid[sel]
        if not len(ts):
            continue
        forward = ts[0] > 0
        sol = solve_ivp(rhs, (0.0, ts[-1] if forward else ts[0]), W0.ravel(), method="DOP853",
                        t_eval=ts if forward else ts[::-1], rtol=tol, atol=tol * 1e-2,
                        events=blowup)
        if sol.status != 0:
            raise DivergenceError(float(sol.t[-1]), DEFAULT_BOUND)
        Y = sol.y.T.reshape(-1, m, n)
        out[sel] = Y if forward else Y[::-1]
    return out


def stable_first_frame_path(spec, w0, span, h, burn_in=10.0, tol=1e-11, seed=0):
    """Single-orbit version of :func:`stable_first_frame_paths`."""
    return stable_first_frame_paths(spec, np.asarray(w0, dtype=float)[None], span, h,
                                    burn_in, tol, seed)[0]


# -- transversal linear skew-product flow -----------------------------------------

@dataclass(frozen=True)
class TransversalPropagatorPath:
    times: np.ndarray
    matrices: np.ndarray  # C*(t) per grid time

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValidationError(f"t={t} is not a grid time")
        return self.matrices[k]


def transversal_propagator(traj, frames):
    """``C*(t) = gamma(t)^T Pi(t) D phi_t gamma(0)`` on the frame grid."""
    if traj.fundamentals is None:
        raise ValidationError("trajectory must carry fundamental matrices")
    g0 = frames.frames[frames.index0]
    out = []
    for k, t in enumerate(frames.times):
        X = traj.fundamental_at(float(t))
        w = traj.state_at(float(t))
        s = np.asarray(frames.speed[k])
        speed = np.linalg.norm(s)
        if speed < 1e-12:
            raise SingularityError(f"field vanishes along the orbit at t={t}")
        shat = s / speed
        Pi = np.eye(len(s)) - np.outer(shat, shat)
        out.append(frames.frames[k].T @ Pi @ X @ g0)
    return TransversalPropagatorPath(frames.times.copy(), np.array(out))
