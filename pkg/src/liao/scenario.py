"""Scenario files: loading, validation against the shipped schema, hashing."""

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ScenarioError, ValidationError
from .dichotomy import DichotomyProblem
from .field import TermMap, VectorFieldSpec

NUMERIC_DEFAULTS = {
    "h": 0.01,
    "tol": 1e-10,
    "horizon": 25.0,
    "xi": 0.05,
    "epsilon": 0.1,
    "window_T": 10.0,
    "d_grid": [1.0, 2.0, 5.0, 10.0],
    "t_grid": [],
    "burn_in": 10.0,
    "chart_radius": None,
    "strict": False,
    "frame_checks": 5,
    "uniformity_deltas": [0.01, 0.1, 1.0],
}

DICHOTOMY_DEFAULTS = {
    "eta_f": 0.0,
    "L_f": 0.0,
    "horizon": 40.0,
    "step": 0.01,
    "tol": 1e-10,
    "delta_samples": 10,
    "delta_window": 25.0,
}


def load_schema(name):
    text = resources.files("liao").joinpath("schemas", f"{name}.schema.json").read_text(
        encoding="utf-8")
    return json.loads(text)


def validate_document(doc, name):
    """Validate ``doc`` against a shipped schema; unknown keys are listed together."""
    schema = load_schema(name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    unknown = []
    other = []
    for err in errors:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            unknown.extend(f"{where}/{k}" if where != "<root>" else k for k in extra)
        else:
            other.append(f"{where}: {err.message}")
    parts = []
    if unknown:
        parts.append("unknown keys: " + ", ".join(unknown))
    parts.extend(other)
    raise ScenarioError("; ".join(parts))


@dataclass(frozen=True)
class DichotomyBlock:
    A: TermMap
    forcing: TermMap
    p: int
    p_minus: int
    eta_A: float
    xi_A: float
    eta_f: float
    L_f: float
    horizon: float
    step: float
    tol: float
    delta_samples: int
    delta_window: float
    family: Optional[tuple] = None  # (parameter name, TermMap, values)

    def matrix(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.A(t[:, None]).reshape(len(t), self.p, self.p)

    def forcing_fn(self, t, z):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.forcing(np.column_stack([t, np.atleast_2d(z)]))

    def state_independent(self, fmap=None, probes=16, seed=0):
        """True when the forcing has zero derivative in ``z`` at random probes."""
        fmap = self.forcing if fmap is None else fmap
        rng = np.random.default_rng(seed)
        X = rng.uniform(-2.0, 2.0, size=(probes, len(fmap.variables)))
        return bool(np.all(fmap.jacobian(X)[:, :, 1:self.p + 1] == 0.0))

    def problem(self, forcing=None, state_independent=None):
        f = self.forcing_fn if forcing is None else forcing
        if state_independent is None:
            state_independent = self.state_independent()
        return DichotomyProblem(p=self.p, p_minus=self.p_minus, A=self.matrix, f=f,
                                eta_A=self.eta_A, xi_A=self.xi_A, eta_f=self.eta_f,
                                L_f=self.L_f, horizon=self.horizon, step=self.step,
                                state_independent=state_independent)

    def family_problem(self, value):
        return self.problem(self.family_forcing(value),
                            self.state_independent(self.family[1]))

    def family_forcing(self, value):
        name, fmap, _ = self.family

        def f(t, z):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            lam = np.full((len(t), 1), float(value))
            return fmap(np.column_stack([t, np.atleast_2d(z), lam]))
        return f


@dataclass(frozen=True)
class Scenario:
    field: VectorFieldSpec
    perturbation: Optional[VectorFieldSpec]
    samples: np.ndarray
    p_minus: int
    numeric: dict
    dichotomy: Optional[DichotomyBlock]
    output: Optional[str]
    seed: int
    name: str
    digest: str
    source: dict = field(repr=False, default_factory=dict)


def scenario_hash(doc):
    """SHA-256 of the canonical JSON form (sorted keys, compact separators)."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _field(data, name):
    comps = [str(c) for c in data["components"]]
    try:
        return VectorFieldSpec.from_strings(comps, data.get("variables"), data.get("name", name))
    except ValidationError as exc:
        raise ScenarioError(f"field {name}: {exc}") from exc


def _dichotomy(data):
    kw = dict(DICHOTOMY_DEFAULTS)
    kw.update(data)
    A_rows = kw["A"]
    p = len(A_rows)
    if any(len(r) != p for r in A_rows):
        raise ScenarioError("dichotomy A must be square")
    if len(kw["forcing"]) != p:
        raise ScenarioError("dichotomy forcing must have one entry per row of A")
    if not 0 <= kw["p_minus"] <= p:
        raise ScenarioError(f"dichotomy p_minus must lie in [0, {p}]")
    zvars = [f"z{i + 1}" for i in range(p)]
    A = TermMap([str(e) for r in A_rows for e in r], ["t"], "A")
    forcing = TermMap([str(e) for e in kw["forcing"]], ["t"] + zvars, "forcing")
    family = None
    if "family" in kw:
        fam = kw["family"]
        if len(fam["forcing"]) != p:
            raise ScenarioError("family forcing must have one entry per row of A")
        if fam["parameter"] in ["t"] + zvars:
            raise ScenarioError("family parameter name clashes with t or z variables")
        fmap = TermMap([str(e) for e in fam["forcing"]], ["t"] + zvars + [fam["parameter"]],
                       "family")
        family = (fam["parameter"], fmap, tuple(float(v) for v in fam["values"]))
    return DichotomyBlock(A, forcing, p, int(kw["p_minus"]), float(kw["eta_A"]),
                          float(kw["xi_A"]), float(kw["eta_f"]), float(kw["L_f"]),
                          float(kw["horizon"]), float(kw["step"]), float(kw["tol"]),
                          int(kw["delta_samples"]), float(kw["delta_window"]), family)


def parse_scenario(doc):
    validate_document(doc, "scenario")
    S = _field(doc["field"], "S")
    n = S.dimension
    V = _field(doc["perturbation"], "V") if "perturbation" in doc else None
    if V is not None and V.dimension != n:
        raise ScenarioError("perturbation dimension differs from the field dimension")
    samples = np.array(doc["lambda_samples"], dtype=float)
    if samples.ndim != 2 or samples.shape[1] != n:
        raise ScenarioError(f"every lambda sample must have {n} coordinates")
    p_minus = doc["p_minus"]
    if not 0 <= p_minus <= n - 1:
        raise ScenarioError(f"p_minus={p_minus} out of range [0, {n - 1}]")
    numeric = dict(NUMERIC_DEFAULTS)
    numeric.update(doc.get("numeric", {}))
    if numeric["window_T"] < max(numeric["d_grid"]):
        raise ScenarioError("window_T must be at least max(d_grid)")
    if numeric["chart_radius"] is not None and numeric["xi"] > numeric["chart_radius"]:
        raise ScenarioError("xi must not exceed chart_radius")
    dich = _dichotomy(doc["dichotomy"]) if "dichotomy" in doc else None
    return Scenario(S, V, samples, int(p_minus), numeric, dich, doc.get("output"),
                    int(doc.get("seed", 0)), doc.get("name", "scenario"), scenario_hash(doc), doc)


def load_scenario(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    try:
        return parse_scenario(doc)
    except ValidationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc


def bundled_scenario(name):
    """Path of a scenario shipped with the package (e.g. ``saddle_constant``)."""
    res = resources.files("liao").joinpath("scenarios", f"{name}.json")
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Path(str(res))
