"""Vector fields given as finite term lists, their flows and uniformity checks.

A component is a sum of terms ``coef * x_i^k * ... [* sin|cos(a.x + b)]``.
Term lists admit an exact Jacobian and can be written in scenario files,
e.g. ``VectorFieldSpec.from_strings(["1", "y + 0.01*sin(x)", "-z"],
variables=["x", "y", "z"])``.
"""

import re
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ._ode import Stepper
from .errors import (EvaluationOverflowError, HyperbolicityPreconditionError,
                     ValidationError)

DEFAULT_BOUND = 1e8


@dataclass(frozen=True)
class Term:
    """One additive term of a field component."""

    component: int
    coef: Fraction
    powers: tuple
    trig: Optional[str] = None  # "sin", "cos" or None
    freq: tuple = ()
    phase: Fraction = Fraction(0)


@dataclass(frozen=True)
class VectorFieldSpec:
    dimension: int
    terms: tuple
    name: str = "S"
    variables: tuple = ()
    _compiled: dict = dc_field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError("dimension must be at least 2")
        if not self.variables:
            object.__setattr__(self, "variables", tuple(f"x{i}" for i in range(self.dimension)))
        if len(self.variables) != self.dimension:
            raise ValidationError("one variable name per dimension is required")
        for term in self.terms:
            if not 0 <= term.component < self.dimension:
                raise ValidationError(f"term component {term.component} out of range")
            if len(term.powers) != self.dimension:
                raise ValidationError("term powers must have one entry per variable")
            if any(k < 0 for k in term.powers):
                raise ValidationError("negative powers are not allowed")
            if term.trig is not None and len(term.freq) != self.dimension:
                raise ValidationError("trig frequency must have one entry per variable")
        object.__setattr__(self, "_compiled", _compile(self))

    # -- construction ---------------------------------------------------
    @classmethod
    def from_strings(cls, components, variables=None, name="S"):
        components = list(components)
        n = len(components)
        variables = tuple(variables) if variables else tuple(f"x{i}" for i in range(n))
        if len(variables) != n:
            raise ValidationError(
                f"{n} components given for {len(variables)} variables")
        terms = []
        for c, text in enumerate(components):
            terms.extend(parse_component(text, variables, c))
        return cls(dimension=n, terms=tuple(terms), name=name, variables=variables)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"name", "variables", "components"}
        if unknown:
            raise ValidationError(f"unknown field keys: {sorted(unknown)}")
        if "components" not in data:
            raise ValidationError("field needs 'components'")
        return cls.from_strings(data["components"], data.get("variables"),
                                data.get("name", "S"))

    def to_dict(self):
        return {"name": self.name, "variables": list(self.variables),
                "components": self.component_strings()}

    def component_strings(self):
        out = []
        for c in range(self.dimension):
            parts = [_format_term(t, self.variables) for t in self.terms if t.component == c]
            out.append(" + ".join(parts).replace("+ -", "- ") if parts else "0")
        return out

    def __add__(self, other):
        if other.dimension != self.dimension:
            raise ValidationError("dimension mismatch")
        return VectorFieldSpec(self.dimension, self.terms + other.terms,
                               name=f"{self.name}+{other.name}", variables=self.variables)

    # -- evaluation -----------------------------------------------------
    def __call__(self, w):
        return self._evaluate(w, jacobian=False)[0]

    def jacobian(self, w):
        return self._evaluate(w, jacobian=True)[1]

    def evaluate(self, w):
        """Return ``(S(w), S'(w))``; ``w`` may carry leading batch axes."""
        return self._evaluate(w, jacobian=True)

    def _evaluate(self, w, jacobian):
        return _evaluate_compiled(self._compiled, w, jacobian, self.dimension, self.name)


class TermMap:
    """``m`` term-list expressions in ``k`` named variables, evaluated on arrays.

    Used for time-dependent coefficient matrices and forcings, e.g.
    ``TermMap(["0", "0.01*sin(t)"], ["t", "z1", "z2"])``.
    """

    def __init__(self, components, variables, name="map"):
        self.variables = tuple(variables)
        self.components = [str(c) for c in components]
        self.name = name
        terms = []
        for c, text in enumerate(self.components):
            terms.extend(parse_component(text, self.variables, c))
        self.terms = tuple(terms)
        self._compiled = _compile_terms(self.terms, len(self.variables), len(self.components))

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return _evaluate_compiled(self._compiled, X, False, len(self.variables), self.name)[0]

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        return _evaluate_compiled(self._compiled, X, True, len(self.variables), self.name)[1]


def _evaluate_compiled(cp, w, jacobian, n, name):
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != n:
        raise ValidationError(f"point has {w.shape[-1]} coordinates, {name} needs {n}")
    ncomp = cp["onehot"].shape[1]
    if cp["m"] == 0:
        return np.zeros(w.shape[:-1] + (ncomp,)), \
            (np.zeros(w.shape[:-1] + (ncomp, n)) if jacobian else None)
    with np.errstate(all="ignore"):
        P = w[..., None, :] ** cp["powers"]               # (..., m, n)
        mono = np.prod(P, axis=-1)                         # (..., m)
        if cp["has_trig"]:
            arg = w @ cp["freq"].T + cp["phase"]           # (..., m)
            sin, cos = np.sin(arg), np.cos(arg)
            kind = cp["kind"]
            trig = np.where(kind == 1, sin, np.where(kind == 2, cos, 1.0))
        else:
            trig = 1.0
        vals = cp["coef"] * mono * trig
        S = vals @ cp["onehot"]
        J = None
        if jacobian:
            Pm = w[..., None, :] ** cp["powers_m1"]        # w_j^(k_j-1)
            others = np.where(cp["eye"], 1.0, P[..., :, None, :])  # (..., m, n, n)
            dmono = cp["powers"] * Pm * np.prod(others, axis=-1)
            if cp["has_trig"]:
                dtrig = np.where(kind == 1, cos, np.where(kind == 2, -sin, 0.0))
                dterm = cp["coef"][:, None] * (dmono * trig[..., None]
                                              + (mono * dtrig)[..., None] * cp["freq"])
            else:
                dterm = cp["coef"][:, None] * dmono
            J = np.swapaxes(dterm, -1, -2) @ cp["onehot"]
            J = np.swapaxes(J, -1, -2)
    bad = ~np.isfinite(S)
    if jacobian:
        bad = bad | ~np.all(np.isfinite(J), axis=-1)
    if bad.any():
        comp = int(np.argwhere(bad)[0][-1])
        raise EvaluationOverflowError(name, comp)
    return S, J


def _compile(spec):
    return _compile_terms(spec.terms, spec.dimension, spec.dimension)


def _compile_terms(terms, n, ncomp):
    m = len(terms)
    powers = np.zeros((m, n))
    freq = np.zeros((m, n))
    coef = np.zeros(m)
    phase = np.zeros(m)
    kind = np.zeros(m, dtype=int)
    onehot = np.zeros((m, ncomp))
    for i, t in enumerate(terms):
        powers[i] = t.powers
        coef[i] = float(t.coef)
        onehot[i, t.component] = 1.0
        if t.trig is not None:
            kind[i] = 1 if t.trig == "sin" else 2
            freq[i] = [float(a) for a in t.freq]
            phase[i] = float(t.phase)
    return {"m": m, "powers": powers, "powers_m1": np.maximum(powers - 1, 0),
            "freq": freq, "coef": coef, "phase": phase, "kind": kind,
            "onehot": onehot, "eye": np.eye(n, dtype=bool), "has_trig": bool(kind.any())}


# -- term grammar -------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^()]))")


def _tokenize(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValidationError(f"cannot parse {text[pos:]!r} in {text!r}")
        num, name, op = m.groups()
        if num is not None:
            out.append(("num", Fraction(num)))
        elif name is not None:
            out.append(("name", name))
        else:
            out.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text, variables):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.var_index = {v: j for j, v in enumerate(variables)}
        self.n = len(variables)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ValidationError(f"unexpected token {tok[1]!r} in {self.text!r}")
        self.i += 1
        return tok

    def number(self):
        value = self.take("num")[1]
        if self.peek() == ("op", "/"):
            self.take()
            denom = self.take("num")[1]
            if denom == 0:
                raise ValidationError(f"division by zero in {self.text!r}")
            value /= denom
        return value

    def sum_of_terms(self):
        """Returns a list of (coef, powers, trig) triples; trig is None or (kind, freq, phase)."""
        terms = []
        sign = Fraction(1)
        if self.peek() in (("op", "+"), ("op", "-")):
            sign = Fraction(-1) if self.take()[1] == "-" else Fraction(1)
        while True:
            coef, powers, trig = self.term()
            terms.append((sign * coef, powers, trig))
            tok = self.peek()
            if tok in (("op", "+"), ("op", "-")):
                self.take()
                sign = Fraction(-1) if tok[1] == "-" else Fraction(1)
                continue
            return terms

    def term(self):
        coef = Fraction(1)
        powers = [0] * self.n
        trig = None
        while True:
            kind, val = self.peek()
            if kind == "num":
                coef *= self.number()
            elif kind == "op" and val == "-":
                self.take()
                coef = -coef
                continue
            elif kind == "name" and val in ("sin", "cos"):
                if trig is not None:
                    raise ValidationError(f"at most one trig factor per term: {self.text!r}")
                self.take()
                self.take("op", "(")
                freq, phase = self.linear_form()
                self.take("op", ")")
                trig = (val, freq, phase)
            elif kind == "name":
                if val not in self.var_index:
                    raise ValidationError(f"unknown variable {val!r} in {self.text!r}")
                self.take()
                k = 1
                if self.peek() == ("op", "^"):
                    self.take()
                    e = self.take("num")[1]
                    if e.denominator != 1 or e < 0:
                        raise ValidationError(f"powers must be non-negative integers: {self.text!r}")
                    k = int(e)
                powers[self.var_index[val]] += k
            else:
                raise ValidationError(f"unexpected token {val!r} in {self.text!r}")
            if self.peek() == ("op", "*"):
                self.take()
                continue
            return coef, tuple(powers), trig

    def linear_form(self):
        freq = [Fraction(0)] * self.n
        phase = Fraction(0)
        for coef, powers, trig in self.sum_of_terms():
            if trig is not None or sum(powers) > 1:
                raise ValidationError(f"trig argument must be linear: {self.text!r}")
            if sum(powers) == 0:
                phase += coef
            else:
                freq[powers.index(1)] += coef
        return tuple(freq), phase


def parse_component(text, variables, component):
    """Parse one component string into a list of ``Term``."""
    text = str(text)
    p = _Parser(text, tuple(variables))
    if not p.toks:
        raise ValidationError("empty component expression")
    raw = p.sum_of_terms()
    if p.i != len(p.toks):
        raise ValidationError(f"trailing input in {text!r}")
    out = []
    for coef, powers, trig in raw:
        if coef == 0:
            continue
        if trig is None:
            out.append(Term(component, coef, powers))
        else:
            out.append(Term(component, coef, powers, trig[0], trig[1], trig[2]))
    return out


def _fmt_num(q):
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _format_term(t, variables):
    factors = []
    for v, k in zip(variables, t.powers):
        if k == 1:
            factors.append(v)
        elif k > 1:
            factors.append(f"{v}^{k}")
    if t.trig:
        lin = [v if a == 1 else f"{_fmt_num(a)}*{v}" for a, v in zip(t.freq, variables) if a != 0]
        if t.phase != 0 or not lin:
            lin.append(_fmt_num(t.phase))
        factors.append(f"{t.trig}({' + '.join(lin).replace('+ -', '- ')})")
    if not factors or abs(t.coef) != 1:
        factors.insert(0, _fmt_num(abs(t.coef)))
    return ("-" if t.coef < 0 else "") + "*".join(factors)


# -- flow -----------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Sampled flow line through ``w0`` with optional fundamental matrices."""

    w0: np.ndarray
    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    fundamentals: Optional[np.ndarray] = None
    fundamental_rates: Optional[np.ndarray] = None

    @property
    def index0(self):
        return int(np.searchsorted(self.times, 0.0))

    def _locate(self, t):
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValidationError(f"t={t} outside trajectory span [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < len(ts) and ts[j] == t:
            return j, None
        j = min(max(j, 1), len(ts) - 1)
        return j - 1, j

    @staticmethod
    def _hermite(t, t0, t1, y0, y1, f0, f1):
        h = t1 - t0
        s = (t - t0) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1

    def state_at(self, t):
        i, j = self._locate(t)
        if j is None:
            return self.states[i].copy()
        return self._hermite(t, self.times[i], self.times[j], self.states[i], self.states[j],
                             self.velocities[i], self.velocities[j])

    def fundamental_at(self, t):
        if self.fundamentals is None:
            raise ValidationError("trajectory was integrated without the variational equation")
        i, j = self._locate(t)
        if j is None:
            return self.fundamentals[i].copy()
        return self._hermite(t, self.times[i], self.times[j], self.fundamentals[i],
                             self.fundamentals[j], self.fundamental_rates[i],
                             self.fundamental_rates[j])


def eval_field_and_jacobian(spec, w):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValidationError("point must be finite")
    return spec.evaluate(w)


def integrate_flow(spec, w0, span, tol=1e-10, with_variational=False,
                   bound=DEFAULT_BOUND, t_eval=None):
    """Integrate ``w' = S(w)`` (and ``X' = S'(w) X``) over ``span`` from ``t = 0``.

    Accepted step times, plus any ``t_eval`` times, form the returned grid.
    """
    t_min, t_max = float(span[0]), float(span[1])
    if not t_min <= 0.0 <= t_max:
        raise ValidationError("span must contain 0")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    w0 = np.asarray(w0, dtype=float)
    n = spec.dimension
    if w0.shape != (n,):
        raise ValidationError(f"w0 must have shape ({n},)")

    if with_variational:
        def rhs(t, y):
            S, J = spec.evaluate(y[:n])
            return np.concatenate([S, (J @ y[n:].reshape(n, n)).ravel()])
        y0 = np.concatenate([w0, np.eye(n).ravel()])
    else:
        def rhs(t, y):
            return spec(y)
        y0 = w0

    t_eval = np.unique(np.asarray([] if t_eval is None else t_eval, dtype=float))
    if t_eval.size and (t_eval[0] < t_min or t_eval[-1] > t_max):
        raise ValidationError("t_eval must lie inside span")
    f0 = rhs(0.0, y0)
    records = {0.0: (y0, f0)}

    for direction, end in ((1.0, t_max), (-1.0, t_min)):
        if end == 0.0:
            continue
        stepper = Stepper(rhs, 0.0, y0, tol, direction=direction, f0=f0,
                          bound=bound, bound_slice=slice(0, n))
        targets = t_eval[t_eval > 0] if direction > 0 else t_eval[t_eval < 0][::-1]
        targets = list(targets) + [end]

        def record(t, y, f):
            records[t] = (y.copy(), f.copy())

        for tt in targets:
            stepper.advance_to(float(tt), record)

    times = np.array(sorted(records))
    ys = np.array([records[t][0] for t in times])
    fs = np.array([records[t][1] for t in times])
    states, vel = ys[:, :n], fs[:, :n]
    if with_variational:
        return Trajectory(w0, times, states, vel,
                          ys[:, n:].reshape(-1, n, n), fs[:, n:].reshape(-1, n, n))
    return Trajectory(w0, times, states, vel)


# -- uniformity checks ---------------------------------------------------------

@dataclass(frozen=True)
class UniformityReport:
    inf_speed: float
    sup_speed: float
    sup_jacobian: float
    continuity_modulus: list
    sample_count: int

    def to_dict(self):
        return {"inf_speed": self.inf_speed, "sup_speed": self.sup_speed,
                "sup_jacobian": self.sup_jacobian,
                "continuity_modulus": [[d, m] for d, m in self.continuity_modulus],
                "sample_count": self.sample_count}


def _probe_directions(n, n_random, rng):
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    rand = rng.standard_normal((n_random, n))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    return np.concatenate([axes, rand])


def check_uniformity(spec, samples, deltas=(0.01, 0.1, 1.0), n_random=16, seed=0,
                     radii_fractions=(0.25, 0.5, 1.0)):
    """Estimate the constants behind the uniformity conditions over a finite sample of the set."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] == 0:
        raise ValidationError("samples must be nonempty")
    S, J = spec.evaluate(X)
    speeds = np.linalg.norm(S, axis=1)
    if speeds.min() <= 0.0:
        k = int(np.argmin(speeds))
        raise HyperbolicityPreconditionError(
            f"sample {k} at {X[k].tolist()} is a singularity (violates inf ||S|| > 0)")
    jnorm = np.linalg.norm(J, ord=2, axis=(1, 2))

    rng = np.random.default_rng(seed)
    dirs = _probe_directions(spec.dimension, n_random, rng)
    modulus = []
    running = 0.0
    for d in sorted(float(x) for x in deltas):
        worst = 0.0
        for r in radii_fractions:
            probes = X[:, None, :] + (r * d) * dirs[None, :, :]
            Jp = spec.jacobian(probes)
            diff = np.linalg.norm(Jp - J[:, None], ord=2, axis=(2, 3))
            worst = max(worst, float(diff.max()))
        running = max(running, worst)
        modulus.append((d, running))
    return UniformityReport(float(speeds.min()), float(speeds.max()), float(jnorm.max()),
                            modulus, int(X.shape[0]))
