"""Command-line driver: ``semidae <mode> --config run.json [--t-end X] [--out DIR] [--seed N]``.

Exit status is 0 on success, 2 when a certificate is falsified or a run
expected to stay bounded escapes, and 1 on errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .circuit import (CircuitParams, SourceSpec, build_filter_dae, chart_ab, chart_x1x2,
                      closed_form_decomposition, omega_region, stability_presets)
from .dae import ConstraintError, InconsistentInitialValue, SemilinearDAE, consistent_initialize
from .integrate import EscapeDetected, IntegrationOptions, SolverFailure, integrate
from .pencil import MatrixPencil, PencilError, verify_decomposition
from .stability import (BoxSampler, ComparisonFunction, GaugeFunction, GridSampler, RegionSampler,
                        Verdict, check_boundedness_condition, instability_certificate,
                        stability_certificate)

MODES = ("decompose", "simulate", "check-stability", "check-instability", "sweep")
EXIT_OK, EXIT_ERROR, EXIT_REGRESSION = 0, 1, 2


class ConfigError(ValueError):
    pass


def _get(cfg, path, default=KeyError):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if default is KeyError:
                raise ConfigError(f"{path}: required field missing")
            return default
        node = node[key]
    return node


def load_config(path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError(f"{path}: empty configuration document")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


# ----------------------------------------------------------------------------
# model construction


def _matrix(value, field):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{field}: not a numeric matrix") from None
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"{field}: must be a square row-major array, got shape {M.shape}")
    return M


def _polynomial_f(coeffs, n, forcing):
    """``f_i(t, x) = e_i(t) + sum_j sum_k C[i][j][k] x_j**k``."""
    C = np.array(coeffs, dtype=float)
    if C.ndim != 3 or C.shape[:2] != (n, n):
        raise ConfigError(f"model.nonlinearity.coefficients: expected shape ({n}, {n}, K), got {C.shape}")
    K = C.shape[2]
    powers = np.arange(K)
    dC = C[:, :, 1:] * powers[1:]

    def f(t, x):
        x = np.asarray(x, dtype=float)
        V = x[:, None] ** powers[None, :]
        out = np.einsum("ijk,jk->i", C, V)
        return out + np.array([e(t) for e in forcing])

    def jac(t, x):
        x = np.asarray(x, dtype=float)
        V = x[:, None] ** powers[None, :-1] if K > 1 else np.zeros((n, 0))
        return np.einsum("ijk,jk->ij", dC, V)

    return f, jac


def build_model(cfg: dict):
    """Return ``(dae, circuit_params or None)`` from the ``model`` section."""
    model = _get(cfg, "model")
    if "builtin" in model:
        if model["builtin"] != "filter":
            raise ConfigError(f"model.builtin: unknown builtin {model['builtin']!r}")
        try:
            params = CircuitParams.from_dict(_get(cfg, "model.params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model.params: {exc}") from None
        return build_filter_dae(params, backend=model.get("backend", "auto")), params
    if "matrices" in model:
        A = _matrix(_get(cfg, "model.matrices.A"), "model.matrices.A")
        B = _matrix(_get(cfg, "model.matrices.B"), "model.matrices.B")
        if A.shape != B.shape:
            raise ConfigError("model.matrices: A and B differ in size")
        n = A.shape[0]
        nl = model.get("nonlinearity", {"kind": "zero"})
        forcing = [SourceSpec(**s) if s else SourceSpec() for s in nl.get("forcing", [None] * n)]
        if len(forcing) != n:
            raise ConfigError(f"model.nonlinearity.forcing: expected {n} entries")
        if nl.get("kind") == "zero":
            coeffs = np.zeros((n, n, 1))
        elif nl.get("kind") == "polynomial":
            coeffs = _get(cfg, "model.nonlinearity.coefficients")
        else:
            raise ConfigError(f"model.nonlinearity.kind: unknown kind {nl.get('kind')!r}")
        f, jac = _polynomial_f(coeffs, n, forcing)
        return SemilinearDAE(MatrixPencil(A, B), None, f, jac), None
    raise ConfigError("model: needs either 'builtin' or 'matrices'")


def _initial_state(cfg, dae):
    t0 = float(_get(cfg, "initial.t0", 0.0))
    init = cfg.get("initial", {})
    if "z0" in init:
        z0 = np.asarray(init["z0"], dtype=float)
        if z0.shape != (dae.a,):
            raise ConfigError(f"initial.z0: expected {dae.a} entries")
        return t0, consistent_initialize(dae, t0, dae.assemble(z0, np.zeros(dae.d)))
    x0 = np.asarray(_get(cfg, "initial.x0", [0.0] * dae.n), dtype=float)
    if x0.shape != (dae.n,):
        raise ConfigError(f"initial.x0: expected {dae.n} entries")
    if init.get("project", False):
        x0 = consistent_initialize(dae, t0, x0)
    return t0, x0


def _options(cfg):
    integ = dict(cfg.get("integration", {}))
    integ.setdefault("t_end", 50.0)
    if "record_every" in cfg.get("output", {}):
        integ.setdefault("record_every", cfg["output"]["record_every"])
    try:
        return IntegrationOptions(**integ)
    except TypeError as exc:
        raise ConfigError(f"integration: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"integration: {exc}") from None


# ----------------------------------------------------------------------------
# modes


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def run_decompose(cfg, out: Path) -> int:
    dae, params = build_model(cfg)
    dec = dae.dec
    report = verify_decomposition(dae.pencil, dec)
    doc = {"decomposition": dec.to_dict(), "identities": report.to_dict()}
    if params is not None:
        cf = closed_form_decomposition(params)
        doc["closed_form_max_abs_difference"] = {
            name: float(np.abs(getattr(dec, name) - getattr(cf, name)).max())
            for name in ("P1", "P2", "Q1", "Q2", "G_inv")}
    _write_json(out / "decomposition.json", doc)
    return EXIT_OK if report.passed else EXIT_ERROR


_GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 't'
plot {plots}
"""


def simulate_to(cfg, out: Path) -> dict:
    dae, _ = build_model(cfg)
    t0, x0 = _initial_state(cfg, dae)
    traj = integrate(dae, t0, x0, _options(cfg))
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    summary = traj.summary()
    _write_json(out / "summary.json", summary)
    plots = ", ".join(f"'trajectory.csv' using 1:{i + 2} with lines" for i in range(dae.n))
    (out / "plot.gp").write_text(_GNUPLOT.format(plots=plots))
    return summary


def _exit_for_summary(cfg, summary) -> int:
    kind = summary["status"]["kind"]
    if kind == SolverFailure.kind:
        return EXIT_ERROR
    expect = cfg.get("expect")
    # "global" marks runs that may grow without bound but must not escape
    if expect in ("bounded", "global") and kind == EscapeDetected.kind:
        return EXIT_REGRESSION
    if expect == "escape" and kind != EscapeDetected.kind:
        return EXIT_REGRESSION
    return EXIT_OK


def run_simulate(cfg, out: Path) -> int:
    return _exit_for_summary(cfg, simulate_to(cfg, out))


def _sampler(cfg, dae, params, region=None, seed=0):
    spec = dict(_get(cfg, "certificate.sampler", {"kind": "box"}))
    kind = spec.pop("kind", "box")
    chart_name = spec.pop("chart", "x1x2" if params is not None else "basis")
    if chart_name == "basis":
        chart = None
    elif params is None:
        raise ConfigError("certificate.sampler.chart: circuit charts need the filter model")
    elif chart_name == "x1x2":
        chart = chart_x1x2(params)
    elif chart_name == "ab":
        chart = chart_ab(params)
    else:
        raise ConfigError(f"certificate.sampler.chart: unknown chart {chart_name!r}")
    t_range = tuple(spec.pop("t_range", (0.0, 100.0)))
    count = int(spec.pop("count", 10_000))
    if kind == "box":
        lower = spec.pop("lower", [-10.0] * dae.a)
        upper = spec.pop("upper", [10.0] * dae.a)
        sampler = BoxSampler(lower, upper, t_range, count, seed, chart)
    elif kind == "grid":
        sampler = GridSampler(spec.pop("t_values", [0.0]), spec.pop("axes"), chart)
    elif kind == "region":
        if region is None:
            raise ConfigError("certificate.sampler: region sampling needs a region")
        sampler = RegionSampler(region, dae.a, t_range, count, seed)
    else:
        raise ConfigError(f"certificate.sampler.kind: unknown kind {kind!r}")
    if spec:
        raise ConfigError(f"certificate.sampler: unknown fields {sorted(spec)}")
    return sampler


def _H(cfg, presets, which):
    H = _get(cfg, "certificate.H", "preset")
    if H == "preset":
        if presets is None:
            raise ConfigError("certificate.H: presets need the filter model")
        return getattr(presets, which)
    return _matrix(H, "certificate.H")


def _U(cfg, default):
    spec = _get(cfg, "certificate.U", None)
    if spec is None:
        if default is None:
            raise ConfigError("certificate.U: required field missing")
        return default
    kind = spec.get("kind")
    if kind == "linear":
        return ComparisonFunction.linear(spec.get("alpha", 1.0))
    if kind == "power":
        return ComparisonFunction.power(spec["p"], spec.get("alpha", 1.0))
    if kind == "loglinear":
        return ComparisonFunction.loglinear(spec.get("alpha", 1.0))
    raise ConfigError(f"certificate.U.kind: unknown kind {kind!r}")


def _k(cfg, presets, params):
    spec = _get(cfg, "certificate.k", {"kind": "preset"})
    kind = spec.get("kind")
    if kind == "constant":
        return GaugeFunction.constant(float(spec["value"]))
    if kind == "source_affine":
        if params is None:
            raise ConfigError("certificate.k: source_affine needs the filter model")
        c0, c1 = float(spec["c0"]), float(spec["c1"])
        src = params.source
        return GaugeFunction(lambda t: c0 + c1 * abs(float(src(t))), spec.get("integral_finite"),
                             label=f"{c0:g} + {c1:g}|e(t)|")
    if kind == "preset":
        if presets is None:
            raise ConfigError("certificate.k: presets need the filter model")
        if cfg["mode"] == "check-instability":
            return presets.k_instability
        if presets.c0 is None:
            raise ConfigError("certificate.k: no stability gauge preset for unbounded nonlinearities")
        return presets.k_stability(params.source)
    raise ConfigError(f"certificate.k.kind: unknown kind {kind!r}")


def _write_certificate(out: Path, report) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "certificate.json").write_text(report.to_json() + "\n")
    (out / "certificate.txt").write_text(report.summary() + "\n")
    return EXIT_REGRESSION if report.verdict is Verdict.FALSIFIED else EXIT_OK


def run_check_stability(cfg, out: Path, seed: int) -> int:
    dae, params = build_model(cfg)
    R = float(_get(cfg, "certificate.R", 1.0))
    presets = stability_presets(params, R) if params is not None else None
    H = _H(cfg, presets, "H_stability")
    U = _U(cfg, presets.U_stability if presets else None)
    k = _k(cfg, presets, params)
    sampler = _sampler(cfg, dae, params, seed=seed)
    u_range = tuple(_get(cfg, "certificate.u_range", (-10.0, 10.0)))
    report = stability_certificate(dae, H, k, U, R, sampler,
                                   require_boundedness=bool(_get(cfg, "certificate.require_boundedness", False)),
                                   u_range=u_range)
    u_tilde = _get(cfg, "certificate.boundedness_u", None)
    if u_tilde is not None:
        report.entries.append(check_boundedness_condition(
            dae, np.atleast_1d(u_tilde), float(_get(cfg, "certificate.boundedness_M", 10.0)), sampler))
    return _write_certificate(out, report)


def run_check_instability(cfg, out: Path, seed: int) -> int:
    dae, params = build_model(cfg)
    if _get(cfg, "certificate.region", "omega") != "omega" or params is None:
        raise ConfigError("certificate.region: only the built-in 'omega' region of the filter is available")
    presets = stability_presets(params)
    region = omega_region(params, **_get(cfg, "certificate.region_extent", {}))
    H = _H(cfg, presets, "H_instability")
    U = _U(cfg, presets.U_instability)
    k = _k(cfg, presets, params)
    sampler = _sampler(cfg, dae, params, region=region, seed=seed)
    report = instability_certificate(dae, H, k, U, region, sampler, seed=seed)
    return _write_certificate(out, report)


def _set_path(cfg, path, value):
    if "." not in path:
        path = "model.params." + path
    node = cfg
    keys = path.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _sweep_one(job):
    cfg, out, value = job
    try:
        summary = simulate_to(cfg, Path(out))
        return {"value": value, "directory": out, "status": summary["status"],
                "max_norm": summary["max_norm"], "exit": _exit_for_summary(cfg, summary)}
    except (ConfigError, PencilError, ConstraintError, InconsistentInitialValue, ValueError) as exc:
        return {"value": value, "directory": out, "error": str(exc), "exit": EXIT_ERROR}


def run_sweep(cfg, out: Path, workers: int | None = None) -> int:
    param = _get(cfg, "sweep.parameter")
    values = _get(cfg, "sweep.values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: must be a non-empty list")
    jobs = []
    for i, v in enumerate(values):
        sub = copy.deepcopy(cfg)
        sub.pop("sweep")
        _set_path(sub, param, v)
        jobs.append((sub, str(out / f"run_{i:03d}"), v))
    out.mkdir(parents=True, exist_ok=True)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_sweep_one, jobs))
    _write_json(out / "index.json", {"parameter": param, "runs": results})
    return max(r["exit"] for r in results)


def run(cfg: dict, out: Path, seed: int = 0) -> int:
    mode = cfg.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
    out.mkdir(parents=True, exist_ok=True)
    if mode == "decompose":
        return run_decompose(cfg, out)
    if mode == "simulate":
        return run_simulate(cfg, out)
    if mode == "check-stability":
        return run_check_stability(cfg, out, seed)
    if mode == "check-instability":
        return run_check_instability(cfg, out, seed)
    return run_sweep(cfg, out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="semidae", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--t-end", type=float, help="override integration.t_end")
    ap.add_argument("--out", help="override output.directory")
    ap.add_argument("--seed", type=int, help="override the sampler seed")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg["mode"] = args.mode
        if args.t_end is not None:
            cfg.setdefault("integration", {})["t_end"] = args.t_end
        out = Path(args.out or _get(cfg, "output.directory", "out"))
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        return run(cfg, out, seed)
    except (ConfigError, PencilError, ConstraintError, InconsistentInitialValue, OSError, ValueError) as exc:
        print(f"semidae: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
