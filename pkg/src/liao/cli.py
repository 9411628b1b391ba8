"""Command-line front end: ``liao <subcommand> --scenario <path>``.

Exit status is 0 on success, 2 when the scenario or arguments fail
validation and 3 on a numerical failure. Every report embeds the scenario
hash and the seed it ran with.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conjugacy import ConjugacyConfig, conjugacy_map
from .dichotomy import bounded_solution, continuity_probe, delta_map, epsilon_bound
from .errors import LiaoError, NumericError, ValidationError
from .field import check_uniformity
from .frame import stable_first_frame_paths
from .reduced import certify_hyperbolic, dichotomy_constants, reduced_cocycle
from .report import dumps, omega_csv, write_csv
from .scenario import load_scenario, validate_document

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = ("certify", "exponents", "delta", "conjugate")


def _header(scenario, command, seed):
    return {"schema_version": 1, "command": command, "tool_version": __version__,
            "scenario": scenario.name, "scenario_hash": scenario.digest, "seed": seed}


def _emit(out, name, kind, payload):
    # validate exactly what lands on disk
    text = dumps(payload)
    validate_document(json.loads(text), kind)
    with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _cocycles(scenario, seed, half_span):
    num = scenario.numeric
    paths = stable_first_frame_paths(scenario.field, scenario.samples, (-half_span, half_span),
                                     num["h"], burn_in=num["burn_in"], seed=seed)
    return [reduced_cocycle(p, p_minus=scenario.p_minus, spec=scenario.field) for p in paths]


# -- subcommands -------------------------------------------------------------------

def run_certify(scenario, out, seed):
    num = scenario.numeric
    uni = check_uniformity(scenario.field, scenario.samples, num["uniformity_deltas"], seed=seed)
    cocycles = _cocycles(scenario, seed, max(num["window_T"], num["horizon"]))
    rows, ok = [], True
    for w, cc in zip(scenario.samples, cocycles):
        cert = certify_hyperbolic(cc, num["d_grid"], window_T=num["window_T"])
        const = None
        if cert.passed:
            const = dichotomy_constants(cc, cert, horizon=num["horizon"]).to_dict()
        ok = ok and cert.passed
        rows.append({"w": w.tolist(), "certificate": cert.to_dict(), "constants": const})
    payload = _header(scenario, "certify", seed)
    payload.update({
        "uniformity": uni.to_dict(),
        "samples": rows,
        "pass": ok,
        "eta_hat": min(r["certificate"]["eta_hat"] for r in rows),
        "eta": max(r["constants"]["eta_A"] for r in rows) if ok else None,
        "xi": max(r["constants"]["xi_A"] for r in rows) if ok else None,
    })
    _emit(out, "certify.json", "certify", payload)
    if not ok:
        raise NumericError("hyperbolicity certificate failed on at least one sample")
    return payload


def run_exponents(scenario, out, seed):
    num = scenario.numeric
    cocycles = _cocycles(scenario, seed, num["horizon"])
    files, means = [], []
    for i, cc in enumerate(cocycles):
        name = f"omega_{i:03d}.csv"
        omega_csv(out / name, cc)
        files.append(name)
        Om = cc.log_growth
        means.append(((Om[-1] - Om[0]) / (cc.times[-1] - cc.times[0])).tolist())
    payload = _header(scenario, "exponents", seed)
    payload.update({"files": files, "samples": scenario.samples.tolist(),
                    "mean_exponents": means, "p_minus": scenario.p_minus,
                    "h": num["h"], "horizon": num["horizon"]})
    _emit(out, "exponents.json", "exponents", payload)
    return payload


def run_delta(scenario, out, seed):
    block = scenario.dichotomy
    if block is None:
        raise ValidationError("the delta subcommand needs a 'dichotomy' block in the scenario")
    problem = block.problem()
    sol = bounded_solution(problem, tol=block.tol)
    sol.to_csv(out / "bounded_solution.csv")

    eps, threshold = epsilon_bound(block.eta_A, block.xi_A, block.eta_f, block.p)
    rng = np.random.default_rng(seed)
    reach = max(0.0, block.horizon - block.delta_window)
    rows, shifts = [], []
    for _ in range(block.delta_samples):
        s = float(rng.uniform(-reach, reach)) if reach > 0 else 0.0
        u = rng.uniform(-1.0, 1.0, size=block.p)
        d = delta_map(problem, s, u, window=block.delta_window, tol=block.tol)
        shift = float(np.linalg.norm(d - u))
        shifts.append(shift)
        rows.append([s, *map(float, u), *map(float, d), shift])
    header = (["s"] + [f"u_{i + 1}" for i in range(block.p)]
              + [f"delta_{i + 1}" for i in range(block.p)] + ["shift"])
    write_csv(out / "delta_map.csv", header, rows)

    payload = _header(scenario, "delta", seed)
    payload.update({
        "bounded_solution": {"file": "bounded_solution.csv", "x": sol.x.tolist(),
                             "sup_norm": sol.sup_norm, "iterations": sol.iterations,
                             "defect": sol.defect},
        "delta_map": {"file": "delta_map.csv", "samples": len(rows),
                      "max_shift": max(shifts, default=0.0), "window": block.delta_window},
        "epsilon_bound": eps, "forcing_threshold": threshold,
        "within_bound": bool(all(v <= eps * (1 + 1e-9) for v in shifts)),
        "continuity": None,
    })
    if block.family is not None:
        name, _, values = block.family
        table = continuity_probe(block.family_problem, values, tol=block.tol)
        write_csv(out / "continuity.csv", ["spacing", "modulus"],
                  [[float(a), float(b)] for a, b in table.to_rows()])
        payload["continuity"] = {
            "file": "continuity.csv", "parameter": name,
            "values": [float(v) for v in values],
            "initial_values": table.values.tolist(), "failed": list(table.failed)}
    _emit(out, "delta.json", "delta", payload)
    return payload


def run_conjugate(scenario, out, seed):
    if scenario.perturbation is None:
        raise ValidationError("the conjugate subcommand needs a 'perturbation' field")
    num = scenario.numeric
    config = ConjugacyConfig(epsilon=num["epsilon"], xi=num["xi"], n=scenario.field.dimension,
                             horizon=num["horizon"], tol=num["tol"], h=num["h"],
                             strict=num["strict"], chart_radius=num["chart_radius"],
                             burn_in=num["burn_in"], d_grid=tuple(num["d_grid"]), seed=seed)
    result = conjugacy_map(scenario.field, scenario.perturbation, scenario.samples, config,
                           p_minus=scenario.p_minus, t_grid=num["t_grid"],
                           frame_checks=num["frame_checks"])
    payload = _header(scenario, "conjugate", seed)
    payload.update(result.to_dict())
    _emit(out, "conjugacy.json", "conjugate", payload)
    result.write_residual_csv(out / "residuals.csv")
    if result.failures:
        raise NumericError(f"{len(result.failures)} sample(s) failed; see conjugacy.json")
    return payload


RUNNERS = {"certify": run_certify, "exponents": run_exponents, "delta": run_delta,
           "conjugate": run_conjugate}


def run_scenario(path, subcommand, out=None, seed=None):
    """Run one subcommand on a scenario file and write its reports.

    Returns the main report as a dict. Raises ``ValidationError`` or
    ``NumericError`` subclasses on failure.
    """
    if subcommand not in RUNNERS:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    scenario = load_scenario(path)
    seed = scenario.seed if seed is None else int(seed)
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    out = Path(out if out is not None else (scenario.output or "liao_out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return RUNNERS[subcommand](scenario, out, seed)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="liao",
        description="Certify hyperbolicity along sampled orbits, solve dichotomy problems "
                    "and build the conjugacy to a perturbed field.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"certify": "uniformity, hyperbolicity certificate and dichotomy constants (JSON)",
             "exponents": "reduced exponents along each sample (CSV)",
             "delta": "bounded solution and correspondence map of the dichotomy block (CSV)",
             "conjugate": "conjugacy offsets and equivariance residuals (JSON + CSV)"}
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--scenario", required=True, help="scenario JSON file (schema v1)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        run_scenario(args.scenario, args.command, args.out, args.seed)
    except ValidationError as exc:
        print(f"liao: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"liao: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LiaoError as exc:
        print(f"liao: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"liao: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
