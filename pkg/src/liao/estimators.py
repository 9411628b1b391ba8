"""Estimator-style wrappers around certification and conjugacy construction.

Samples of the invariant set are the rows of ``X``. Fitting runs the
expensive per-orbit work once; fitted attributes end in an underscore.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .conjugacy import ConjugacyConfig, conjugacy_map
from .errors import NumericError, PreconditionError, ValidationError
from .field import VectorFieldSpec
from .frame import stable_first_frame_paths
from .reduced import certify_hyperbolic, dichotomy_constants, reduced_cocycle


def _as_spec(field, name):
    if isinstance(field, VectorFieldSpec):
        return field
    if isinstance(field, dict):
        return VectorFieldSpec.from_dict(field)
    if isinstance(field, (list, tuple)):
        return VectorFieldSpec.from_strings([str(c) for c in field], name=name)
    raise ValidationError(f"{name} must be a VectorFieldSpec, a dict or a list of components")


def _samples(X, n):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n:
        raise ValidationError(f"X has {X.shape[1]} columns, the field has dimension {n}")
    return X


class HyperbolicityEstimator(TransformerMixin, BaseEstimator):
    """Certify hyperbolicity along the orbits through the rows of ``X``.

    Parameters
    ----------
    field : VectorFieldSpec, dict or list of str
        The vector field ``S``.
    p_minus : int
        Stable dimension of the transversal splitting.
    h : float
        Frame grid step.
    horizon : float
        Half-length of the time window; also the dichotomy-constant horizon.
    window_T : float
        Half-length of the window used by the sliding-average certificate.
    d_grid : tuple of float
        Candidate window lengths.
    burn_in : float
        Backward burn-in used to settle the stable-first frames.
    seed : int
        Seed of the random initial frames.

    Attributes
    ----------
    certificates_ : list of HyperbolicityCertificate
    constants_ : list of DichotomyConstants
    eta_hat_ : float
        Smallest certified rate over the samples.
    eta_A_, xi_A_ : float
        Uniform dichotomy constants (maxima over the samples).
    """

    def __init__(self, field=None, p_minus=1, h=0.01, horizon=40.0, window_T=10.0,
                 d_grid=(1.0, 2.0, 5.0, 10.0), burn_in=10.0, seed=0):
        self.field = field
        self.p_minus = p_minus
        self.h = h
        self.horizon = horizon
        self.window_T = window_T
        self.d_grid = d_grid
        self.burn_in = burn_in
        self.seed = seed

    def _validate(self):
        spec = _as_spec(self.field, "S")
        if not 0 <= int(self.p_minus) <= spec.dimension - 1:
            raise ValidationError(f"p_minus must lie in [0, {spec.dimension - 1}]")
        for name in ("h", "horizon", "window_T", "burn_in"):
            if not float(getattr(self, name)) > 0:
                raise ValidationError(f"{name} must be positive")
        if float(self.window_T) < max(self.d_grid):
            raise ValidationError("window_T must be at least max(d_grid)")
        return spec

    def _cocycles(self, spec, X):
        span = max(float(self.window_T), float(self.horizon))
        paths = stable_first_frame_paths(spec, X, (-span, span), float(self.h),
                                         burn_in=float(self.burn_in), seed=int(self.seed))
        return [reduced_cocycle(p, p_minus=int(self.p_minus), spec=spec) for p in paths]

    def fit(self, X, y=None):
        spec = self._validate()
        X = _samples(X, spec.dimension)
        self.spec_ = spec
        self.n_features_in_ = spec.dimension
        self.cocycles_ = self._cocycles(spec, X)
        self.certificates_ = [certify_hyperbolic(c, self.d_grid, window_T=float(self.window_T))
                              for c in self.cocycles_]
        self.passed_ = all(c.passed for c in self.certificates_)
        self.eta_hat_ = float(min(c.eta_hat for c in self.certificates_))
        if self.passed_:
            self.constants_ = [dichotomy_constants(c, cert, horizon=float(self.horizon))
                               for c, cert in zip(self.cocycles_, self.certificates_)]
            self.eta_A_ = float(max(c.eta_A for c in self.constants_))
            self.xi_A_ = float(max(c.xi_A for c in self.constants_))
        else:
            self.constants_ = []
            self.eta_A_ = self.xi_A_ = float("nan")
        return self

    def transform(self, X):
        """Average reduced exponents over the window, one row per sample."""
        check_is_fitted(self, "cocycles_")
        X = _samples(X, self.n_features_in_)
        out = []
        for c in self._cocycles(self.spec_, X):
            Om = c.log_growth
            out.append((Om[-1] - Om[0]) / (c.times[-1] - c.times[0]))
        return np.array(out)


class StructuralConjugacy(TransformerMixin, BaseEstimator):
    """Time-preserving conjugacy from the sampled set of ``S`` to the nearby
    invariant set of ``V``.

    ``fit`` certifies the samples and fixes the uniform dichotomy constants;
    ``transform`` maps rows of ``X`` to ``w + h(w)``.

    Parameters
    ----------
    field, perturbation : VectorFieldSpec, dict or list of str
        The fields ``S`` and ``V``.
    p_minus : int
        Stable dimension.
    epsilon, xi : float
        Closeness target and cutoff radius.
    h, horizon, tol : float
        Grid step, half-window and Picard tolerance.
    chart_radius : float or None
        Tubular chart radius; estimated when ``None``.
    strict : bool
        Raise on failed neighbourhood checks instead of recording them.
    t_grid : sequence of float or None
        Times at which ``fit`` checks equivariance.
    seed : int
        Seed for frames and probe sampling.

    Attributes
    ----------
    result_ : ConjugacyResult
        Offsets and verification output on the fitted samples.
    config_ : ConjugacyConfig
        Configuration with the fitted dichotomy constants.
    offsets_ : ndarray of shape (n_samples, n)
    """

    def __init__(self, field=None, perturbation=None, p_minus=1, epsilon=0.1, xi=0.05,
                 h=0.01, horizon=25.0, tol=1e-10, chart_radius=None, strict=False,
                 t_grid=None, burn_in=10.0, d_grid=(1.0, 2.0, 5.0, 10.0), seed=0):
        self.field = field
        self.perturbation = perturbation
        self.p_minus = p_minus
        self.epsilon = epsilon
        self.xi = xi
        self.h = h
        self.horizon = horizon
        self.tol = tol
        self.chart_radius = chart_radius
        self.strict = strict
        self.t_grid = t_grid
        self.burn_in = burn_in
        self.d_grid = d_grid
        self.seed = seed

    def _config(self, n):
        return ConjugacyConfig(epsilon=float(self.epsilon), xi=float(self.xi), n=n,
                               horizon=float(self.horizon), tol=float(self.tol),
                               h=float(self.h), strict=bool(self.strict),
                               chart_radius=self.chart_radius, burn_in=float(self.burn_in),
                               d_grid=tuple(self.d_grid), seed=int(self.seed))

    def fit(self, X, y=None):
        S = _as_spec(self.field, "S")
        V = _as_spec(self.perturbation, "V")
        if V.dimension != S.dimension:
            raise ValidationError("field and perturbation dimensions differ")
        if not 0 <= int(self.p_minus) <= S.dimension - 1:
            raise ValidationError(f"p_minus must lie in [0, {S.dimension - 1}]")
        X = _samples(X, S.dimension)
        result = conjugacy_map(S, V, X, self._config(S.dimension), p_minus=int(self.p_minus),
                               t_grid=self.t_grid)
        if not result.offsets:
            raise PreconditionError("no sample admitted a conjugacy offset")
        self.S_, self.V_ = S, V
        self.n_features_in_ = S.dimension
        self.result_ = result
        self.config_ = result.config
        self.samples_ = X
        self.offsets_ = np.array([o.h for o in result.offsets])
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        X = _samples(X, self.n_features_in_)
        if X.shape == self.samples_.shape and np.array_equal(X, self.samples_) \
                and not self.result_.failures:
            return X + self.offsets_
        res = conjugacy_map(self.S_, self.V_, X, self.config_, p_minus=int(self.p_minus),
                            frame_checks=0)
        if res.failures:
            raise NumericError(f"{len(res.failures)} sample(s) failed: {res.failures[0]['message']}")
        return X + np.array([o.h for o in res.offsets])
