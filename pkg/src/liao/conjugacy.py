"""Time-preserving conjugacy between a hyperbolic orbit set of ``S`` and a
nearby field ``V``.

For every sample ``w`` the orbit of ``w`` is put in a moving-frame chart,
``V`` is rewritten there as its standard system, and the remainder of that
system (cut off by a bump of radius ``xi``) forces the reduced linear
system. The unique bounded solution gives transversal coordinates ``x``;
the offset ``gamma x`` moves ``w`` onto an orbit of ``V`` that stays near
the orbit of ``w`` for all time, at matching section times.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dichotomy import DichotomyProblem, bounded_solution
from .errors import LiaoError, NumericError, PreconditionError, ValidationError
from .frame import FramePath, positive_qr, random_block_rotation, stable_first_frame_paths
from .reduced import certify_hyperbolic, dichotomy_constants, reduced_cocycle
from .standard import SectionChart, StandardSystem, bump_modify, estimate_chart_radius, \
    StackedSystem, integrate_standard, remainder_lipschitz, remainder_sup


@dataclass(frozen=True)
class ConjugacyConfig:
    """Closeness target, cutoff radius and numerical settings.

    ``eta_lambda`` and ``xi_lambda`` are the uniform dichotomy constants of
    the orbit set; left as ``None`` they are estimated from the samples.
    """

    epsilon: float
    xi: float
    eta_lambda: Optional[float] = None
    xi_lambda: Optional[float] = None
    n: int = 3
    horizon: float = 25.0
    tol: float = 1e-10
    h: float = 0.01
    strict: bool = False
    chart_radius: Optional[float] = None
    burn_in: float = 10.0
    d_grid: tuple = (1.0, 2.0, 5.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not 0 < self.xi < 1:
            raise ValidationError("xi must lie in (0, 1)")
        if self.chart_radius is not None and self.xi > self.chart_radius:
            raise ValidationError("xi must not exceed the chart radius")
        if self.horizon <= 0 or self.h <= 0 or self.tol <= 0:
            raise ValidationError("horizon, h and tol must be positive")

    @property
    def kappa(self):
        if self.eta_lambda is None or self.xi_lambda is None:
            raise PreconditionError("dichotomy constants of the orbit set are not set")
        return 1.0 / (4.0 * self.xi_lambda
                      * (1.0 + 2.0 * self.eta_lambda * self.xi_lambda) ** (self.n - 1))

    @property
    def rho_xi(self):
        return self.xi * self.kappa

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("epsilon", "xi", "eta_lambda", "xi_lambda", "n",
                                              "horizon", "tol", "h", "strict", "chart_radius",
                                              "burn_in", "seed")}
        out["d_grid"] = list(self.d_grid)
        if self.eta_lambda is not None and self.xi_lambda is not None:
            out["kappa"] = self.kappa
            out["rho_xi"] = self.rho_xi
        return out


# -- frame paths ---------------------------------------------------------------

def rotate_path(path, B):
    """Frame path starting from ``gamma(0) B`` for a block-orthogonal ``B``.

    Works in frame coordinates: the new frames are ``gamma(t) Q(t)`` where
    ``Q`` follows Gram-Schmidt of the cached step factors. Block-triangular
    factors keep ``Q`` exactly block diagonal, so a stable-first frame stays
    stable-first.
    """
    B = np.asarray(B, dtype=float)
    N, p = len(path.times), path.dim
    k0 = path.index0
    Q = np.empty((N, p, p))
    steps = np.empty_like(path.step_factors)
    Q[k0] = B
    for k in range(k0, N - 1):
        Q[k + 1], steps[k] = positive_qr(path.step_factors[k] @ Q[k])
    for k in range(k0, 0, -1):
        Qb, U = positive_qr(np.linalg.solve(path.step_factors[k - 1], Q[k]))
        Q[k - 1] = Qb
        steps[k - 1] = np.linalg.inv(U)
    frames = path.frames @ Q
    return FramePath(path.times.copy(), path.base, path.speed, frames, steps, path.h)


def _align(path, frame_columns, p_minus, tol=1e-6):
    """Rotate ``path`` so that it starts from the given stable-first frame."""
    g0 = path.frames[path.index0]
    B = g0.T @ np.asarray(frame_columns, dtype=float)
    off = max(np.max(np.abs(B[p_minus:, :p_minus]), initial=0.0),
              np.max(np.abs(B[:p_minus, p_minus:]), initial=0.0))
    if off > tol or np.max(np.abs(B.T @ B - np.eye(len(B)))) > tol:
        raise PreconditionError("frame is not a stable-first transversal frame at w")
    # snap to exact block structure
    B[p_minus:, :p_minus] = 0.0
    B[:p_minus, p_minus:] = 0.0
    return rotate_path(path, B)


def sample_paths(S, samples, config, t_pad=0.0):
    """Stable-first frame paths covering ``horizon + t_pad`` on both sides."""
    span = config.horizon + t_pad
    return stable_first_frame_paths(S, samples, (-span, span), config.h,
                                    burn_in=config.burn_in, seed=config.seed)


# -- per-orbit setup -------------------------------------------------------------

@dataclass(eq=False)
class OrbitSetup:
    path: FramePath
    cocycle: object
    chart: SectionChart
    system: StandardSystem
    p_minus: int

    @property
    def index0(self):
        return self.path.index0

    def problem(self, config, center=0.0, eta_f=0.0, L_f=0.0):
        """Bounded-solution problem for the bump-modified remainder, centred at
        section time ``center``."""
        k0 = self.path.index0
        h = self.path.h
        Rg = self.cocycle.generator_at_grid()
        Om = self.cocycle.log_growth
        N = len(self.path.times)
        forcing = bump_modify(self.system.remainder, config.xi,
                              min(self.chart.radius, np.inf))

        def idx(t):
            k = np.rint(np.asarray(t) / h).astype(int) + k0
            if np.any(k < 0) or np.any(k >= N):
                raise ValidationError("time outside the frame path")
            return k

        return DichotomyProblem(
            p=self.path.dim, p_minus=self.p_minus,
            A=lambda t: Rg[idx(t)], f=lambda t, z: forcing(idx(t), z),
            eta_A=config.eta_lambda, xi_A=config.xi_lambda, eta_f=eta_f, L_f=L_f,
            horizon=config.horizon, step=h, center=center,
            log_growth=lambda t: Om[idx(t)])


def orbit_setup(S, V, path, p_minus, config):
    cocycle = reduced_cocycle(path, p_minus=p_minus, spec=S)
    radius = config.chart_radius
    chart = SectionChart(path, radius=np.inf, spec=S)
    if radius is None:
        radius = estimate_chart_radius(chart, seed=config.seed)
    chart.radius = float(radius)
    if config.xi > chart.radius:
        raise PreconditionError(f"xi={config.xi} exceeds the chart radius {chart.radius}")
    return OrbitSetup(path, cocycle, chart, StandardSystem(chart, V, cocycle), p_minus)


def orbit_constants(setups, config):
    """Uniform ``eta`` and ``xi`` over the sampled orbits, with their certificates."""
    certs, etas, xis, tails = [], [], [], []
    window = min(config.horizon, max(config.d_grid))
    for s in setups:
        cert = certify_hyperbolic(s.cocycle, config.d_grid, window_T=max(window, max(config.d_grid)))
        if not cert.passed:
            raise PreconditionError("hyperbolicity certificate failed on a sampled orbit")
        const = dichotomy_constants(s.cocycle, cert, horizon=config.horizon)
        certs.append(cert)
        etas.append(const.eta_A)
        xis.append(const.xi_A)
        tails.append(const.tail_bound)
    return certs, float(max(etas)), float(max(xis)), float(max(tails))


# -- preconditions -------------------------------------------------------------------

@dataclass(frozen=True)
class NeighborhoodCheck:
    remainder_sup: float
    remainder_bound: float     # epsilon * rho_xi
    lipschitz: float
    lipschitz_bound: float     # kappa
    speed_ok: bool

    @property
    def small_remainder(self):
        return self.remainder_sup <= self.remainder_bound

    @property
    def small_lipschitz(self):
        return self.lipschitz <= self.lipschitz_bound

    def to_dict(self):
        return {"remainder_sup": self.remainder_sup, "remainder_bound": self.remainder_bound,
                "remainder_ok": self.small_remainder, "lipschitz": self.lipschitz,
                "lipschitz_bound": self.lipschitz_bound, "lipschitz_ok": self.small_lipschitz,
                "speed_window_ok": self.speed_ok}


def check_neighborhood(setup, config, seed=0):
    sup = remainder_sup(setup.system, config.xi, seed=seed)
    lip = remainder_lipschitz(setup.system, config.xi, seed=seed)
    return NeighborhoodCheck(sup, config.epsilon * config.rho_xi, lip, config.kappa, True)


def _enforce(check, strict):
    if not strict:
        return
    if not check.small_remainder:
        raise PreconditionError(
            f"remainder bound violated: sup |V*_rem| = {check.remainder_sup:.3g} > "
            f"epsilon*rho_xi = {check.remainder_bound:.3g}")
    if not check.small_lipschitz:
        raise PreconditionError(
            f"remainder Lipschitz bound violated: {check.lipschitz:.3g} > "
            f"kappa = {check.lipschitz_bound:.3g}")


# -- offsets --------------------------------------------------------------------------

@dataclass(frozen=True)
class Offset:
    w: np.ndarray
    frame: np.ndarray
    x: np.ndarray
    h: np.ndarray
    sup_norm: float
    iterations: int
    defect: float
    check: NeighborhoodCheck
    solution: object = field(repr=False, default=None)

    def to_dict(self):
        return {"w": self.w.tolist(), "frame": self.frame.tolist(), "x": self.x.tolist(),
                "h": self.h.tolist(), "sup_norm": self.sup_norm, "iterations": self.iterations,
                "defect": self.defect, "neighborhood": self.check.to_dict()}


def _solve(setup, config, check, center=0.0, initial=None):
    prob = setup.problem(config, center=center, eta_f=check.remainder_sup, L_f=check.lipschitz)
    return bounded_solution(prob, tol=config.tol, initial=initial)


def _offset(setup, config, check):
    sol = _solve(setup, config, check)
    k0 = setup.index0
    g0 = setup.path.frames[k0]
    return Offset(setup.path.base[k0].copy(), g0.copy(), sol.x.copy(), g0 @ sol.x,
                  sol.sup_norm, sol.iterations, sol.defect, check, sol)


def _with_constants(S, setups, config):
    if config.eta_lambda is not None and config.xi_lambda is not None:
        return config, None
    certs, eta, xi, _ = orbit_constants(setups, config)
    return replace(config, eta_lambda=eta, xi_lambda=xi), certs


def conjugacy_offset(S, V, w, frame=None, config=None, p_minus=1):
    """Offset ``h = gamma x`` at one sample ``w``; returns ``(x, h, bounded solution)``.

    ``frame`` (columns or a TransversalFrame) must be stable-first; by
    default the stable-first frame from the backward sweep is used.
    """
    if config is None:
        raise ValidationError("a ConjugacyConfig is required")
    w = np.asarray(w, dtype=float)
    path = sample_paths(S, w[None], config)[0]
    if frame is not None:
        cols = getattr(frame, "columns", frame)
        path = _align(path, cols, p_minus)
    setup = orbit_setup(S, V, path, p_minus, config)
    config, _ = _with_constants(S, [setup], config)
    check = check_neighborhood(setup, config, seed=config.seed)
    _enforce(check, config.strict)
    off = _offset(setup, config, check)
    return off.x, off.h, off.solution


# -- verification ------------------------------------------------------------------------

def equivariance_residuals(setups, config, checks, xs, t_grid):
    """``|psi_V(t, H(w)) - H(t.w)|`` for every setup and section time in ``t_grid``.

    The left side integrates the standard system of ``V`` from ``x`` (all
    setups at once); the right side is an independent bounded solve
    centred at ``t``. Returns an array of shape ``(len(setups), len(t_grid))``.
    """
    h = setups[0].path.h
    k0 = setups[0].index0
    t_grid = np.asarray(t_grid, dtype=float)
    steps = np.rint(t_grid / h).astype(int)
    if np.any(steps % 2):
        raise ValidationError("equivariance times must be multiples of 2h")
    stacked = StackedSystem([s.system for s in setups])
    X = np.array(xs, dtype=float)
    reach = {k0: X}
    for direction in (1, -1):
        far = max((direction * s for s in steps), default=0)
        if far <= 0:
            continue
        ks, ys, _ = integrate_standard(stacked, k0, X, k0 + direction * far)
        for k, y in zip(ks, ys):
            reach[int(k)] = y
    out = np.empty((len(setups), len(t_grid)))
    for i, (setup, check) in enumerate(zip(setups, checks)):
        for j, (t, s) in enumerate(zip(t_grid, steps)):
            sol = _solve(setup, config, check, center=float(t))
            out[i, j] = np.linalg.norm(reach[k0 + int(s)][i] - sol.x)
    return out


def verify_equivariance(S, V, w, h, t_grid, config, p_minus=1):
    """Residual series for one sample: the offset ``h`` at ``w`` evolved by the
    section flow of ``V`` against the offset computed at ``t.w``."""
    w = np.asarray(w, dtype=float)
    pad = float(np.max(np.abs(t_grid))) if len(t_grid) else 0.0
    path = sample_paths(S, w[None], config, t_pad=pad)[0]
    setup = orbit_setup(S, V, path, p_minus, config)
    config, _ = _with_constants(S, [setup], config)
    check = check_neighborhood(setup, config, seed=config.seed)
    x = path.frames[path.index0].T @ np.asarray(h, dtype=float)
    return equivariance_residuals([setup], config, [check], [x], t_grid)[0]


@dataclass
class ConjugacyResult:
    offsets: list
    residuals: list               # per sample: (t_grid, residual array) or None
    config: ConjugacyConfig
    certificate_ref: dict
    failures: list = field(default_factory=list)
    injectivity: Optional[dict] = None
    frame_independence: Optional[dict] = None
    setups: list = field(default_factory=list, repr=False)

    @property
    def max_offset(self):
        return max((float(np.linalg.norm(o.h)) for o in self.offsets), default=0.0)

    def images(self):
        return np.array([o.w + o.h for o in self.offsets])

    def closedness(self):
        X = self.images()
        if len(X) < 2:
            return {"min_separation": None}
        D = np.linalg.norm(X[:, None] - X[None], axis=-1)
        D[np.diag_indices(len(X))] = np.inf
        return {"min_separation": float(D.min())}

    def to_dict(self):
        samples = [o.to_dict() for o in self.offsets]
        resid = [{"sample": i, "t": list(map(float, r[0])), "residual": list(map(float, r[1]))}
                 for i, r in enumerate(self.residuals) if r is not None]
        return {
            "samples": [s["w"] for s in samples],
            "offsets": samples,
            "residuals": resid,
            "config": self.config.to_dict(),
            "certificate_ref": self.certificate_ref,
            "max_offset": self.max_offset,
            "closedness": self.closedness(),
            "injectivity": self.injectivity,
            "frame_independence": self.frame_independence,
            "failures": self.failures,
            "note": "orbit set represented by finite samples with finite horizons",
        }

    def write_json(self, path):
        from .report import write_json
        write_json(path, self.to_dict())

    def write_residual_csv(self, path):
        from .report import write_csv
        n = len(self.offsets[0].w) if self.offsets else 0
        rows = [[i, *map(float, self.offsets[i].w), float(t), float(v)]
                for i, r in enumerate(self.residuals) if r is not None for t, v in zip(*r)]
        write_csv(path, ["sample"] + [f"w_{i + 1}" for i in range(n)] + ["t", "residual"], rows)


def conjugacy_map(S, V, samples, config, p_minus=1, t_grid=None, frame_checks=5,
                  certificate_ref=None):
    """Offsets at every sample plus the verification suite.

    Per-sample failures are collected rather than raised, unless
    ``config.strict`` is set.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != S.dimension:
        raise ValidationError("samples have the wrong dimension")
    t_grid = np.array([] if t_grid is None else t_grid, dtype=float)
    pad = float(np.max(np.abs(t_grid))) if len(t_grid) else 0.0
    paths = sample_paths(S, samples, config, t_pad=pad)
    setups = [orbit_setup(S, V, p, p_minus, config) for p in paths]
    config, certs = _with_constants(S, setups, config)
    if certificate_ref is None:
        certificate_ref = {"eta_lambda": config.eta_lambda, "xi_lambda": config.xi_lambda}
        if certs:
            certificate_ref["eta_hat_min"] = float(min(c.eta_hat for c in certs))

    offsets, failures, kept, checks = [], [], [], []
    for i, setup in enumerate(setups):
        try:
            check = check_neighborhood(setup, config, seed=config.seed + i)
            _enforce(check, config.strict)
            off = _offset(setup, config, check)
        except LiaoError as exc:
            if config.strict:
                raise
            failures.append({"sample": i, "w": samples[i].tolist(), "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        offsets.append(off)
        kept.append(setup)
        checks.append(check)
    residuals = [None] * len(offsets)
    if len(t_grid) and offsets:
        try:
            R = equivariance_residuals(kept, config, checks, [o.x for o in offsets], t_grid)
            residuals = [(t_grid, r) for r in R]
        except LiaoError as exc:
            if config.strict:
                raise
            failures.append({"sample": None, "error": type(exc).__name__,
                             "message": f"equivariance check failed: {exc}"})
    result = ConjugacyResult(offsets, residuals, config, certificate_ref, failures,
                             setups=kept)
    if offsets:
        result.injectivity = injectivity_report(result)
        result.frame_independence = frame_independence_report(result, count=frame_checks,
                                                              seed=config.seed)
    return result


def injectivity_report(result):
    W = np.array([o.w for o in result.offsets])
    X = result.images()
    if len(W) < 2:
        return {"injective": True, "min_image_separation": None, "pairs_checked": 0,
                "violations": []}
    eps = result.config.epsilon
    hmax = result.max_offset
    Dw = np.linalg.norm(W[:, None] - W[None], axis=-1)
    Dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    iu = np.triu_indices(len(W), 1)
    far = Dw[iu] >= eps
    bad = far & (Dx[iu] < Dw[iu] - 2 * hmax - 1e-12)
    violations = [[int(iu[0][k]), int(iu[1][k])] for k in np.flatnonzero(bad)]
    min_sep = float(Dx[iu].min())
    return {"injective": bool(min_sep > 0 and not violations), "min_image_separation": min_sep,
            "pairs_checked": int(far.sum()), "violations": violations,
            "tube_time": 2 * eps / float(np.min(np.linalg.norm(
                np.array([s.path.speed[s.index0] for s in result.setups]), axis=1)))}


def frame_independence_report(result, count=5, seed=0, rotations=None):
    """Recompute offsets from block-rotated frames at up to ``count`` samples."""
    rng = np.random.default_rng(seed)
    n = len(result.offsets)
    picks = np.sort(rng.choice(n, size=min(count, n), replace=False))
    diffs = []
    for j, i in enumerate(picks):
        setup = result.setups[i]
        p, pm = setup.path.dim, setup.p_minus
        B = rotations[j] if rotations is not None else random_block_rotation(p, pm, rng)
        h_rot = _rotated_offset(setup, B, result.config, result.offsets[i].check)
        diffs.append(float(np.linalg.norm(h_rot - result.offsets[i].h)))
    return {"samples": picks.tolist(), "max_difference": max(diffs, default=0.0),
            "differences": diffs}


def _rotated_offset(setup, B, config, check):
    other = orbit_setup_from(setup, rotate_path(setup.path, B))
    return _offset(other, config, check).h


def orbit_setup_from(setup, path):
    cocycle = reduced_cocycle(path, p_minus=setup.p_minus, spec=setup.chart.spec)
    chart = SectionChart(path, radius=setup.chart.radius, spec=setup.chart.spec)
    return OrbitSetup(path, cocycle, chart, StandardSystem(chart, setup.system.V, cocycle),
                      setup.p_minus)


def verify_injectivity_and_frame_independence(result, S=None, config=None, count=5,
                                              rotations=None):
    if not result.offsets:
        raise ValidationError("result holds no offsets")
    seed = (config or result.config).seed
    return {"injectivity": injectivity_report(result),
            "frame_independence": frame_independence_report(result, count, seed, rotations)}
