"""Command-line interface.

Exit codes: 0 success, 1 failed validation check, 2 configuration error,
3 numerical failure (leakage, trace drift, step-size underflow).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._version import version_string
from .errors import NumericalError, ScenarioError, UscsimError
from .scenarios import (
    ResultBundle,
    SweepSpec,
    apply_overrides,
    list_presets,
    load_preset,
    load_scenario_file,
    run_family,
    run_sweep,
    scenario_to_dict,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# --------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def write_series_csv(path: Path, times, series: dict) -> None:
    """``time_ns`` first, then one column per real series or a ``_re``/``_im`` pair per complex one."""
    cols, data = ["time_ns"], [np.asarray(times, float)]
    for name in sorted(series):
        arr = np.asarray(series[name])
        if np.iscomplexobj(arr):
            cols += [f"{name}_re", f"{name}_im"]
            data += [arr.real, arr.imag]
        else:
            cols.append(name)
            data.append(arr.astype(float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([_fmt(x) for x in row])


def write_qgrid_csv(path: Path, q) -> None:
    """Header row ``im\\re`` plus the real axis; each row starts with its imaginary coordinate."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["im\\re"] + [_fmt(x) for x in q.re])
        for y, row in zip(q.im, q.values):
            w.writerow([_fmt(y)] + [_fmt(x) for x in row])


def write_table_csv(path: Path, table: dict) -> None:
    cols = list(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(np.asarray(table[c]) for c in cols)):
            w.writerow([_fmt(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_bundle(bundle: ResultBundle, out_dir: Path) -> list[str]:
    """Write every output of a bundle into ``out_dir``; returns the file names."""
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if bundle.series:
        write_series_csv(out_dir / "series.csv", bundle.times, bundle.series)
        files.append("series.csv")
    for name, (ts, vals) in sorted(bundle.metric_series.items()):
        fn = f"{name}.csv"
        write_series_csv(out_dir / fn, ts, {name: vals})
        files.append(fn)
    for name, q in sorted(bundle.qgrids.items()):
        fn = f"qfunc_{name}.csv"
        write_qgrid_csv(out_dir / fn, q)
        files.append(fn)
    for name, table in sorted(bundle.tables.items()):
        fn = f"{name}.csv"
        write_table_csv(out_dir / fn, table)
        files.append(fn)
    summary = {"summary": bundle.summary, "metadata": bundle.metadata}
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True),
                                          encoding="utf-8")
    files.append("summary.json")
    return files


def write_manifest(out: Path, entries: list, command: str, wall: float) -> None:
    """Write ``manifest.json``; entries from earlier runs into the same directory are kept
    unless a new entry has the same ``run_id``."""
    path = out / "manifest.json"
    previous = []
    if path.exists():
        try:
            previous = json.loads(path.read_text(encoding="utf-8")).get("runs", [])
        except (json.JSONDecodeError, AttributeError):
            previous = []
    new_ids = {e.get("run_id") for e in entries if "run_id" in e}
    kept = [e for e in previous if "run_id" in e and e["run_id"] not in new_ids]
    manifest = {
        "version": version_string(),
        "command": command,
        "wall_time_s": wall,
        "runs": kept + entries,
    }
    path.write_text(json.dumps(_jsonable(manifest), indent=2), encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("USCSIM_JOBS", "1")))
    except ValueError:
        return 1


def _load(args):
    if bool(args.preset) == bool(args.scenario):
        raise ScenarioError("give exactly one of a preset name or --scenario PATH")
    fam = load_preset(args.preset, desk=args.desk) if args.preset else load_scenario_file(args.scenario, desk=args.desk)
    overrides = {}
    if args.sigma is not None:
        overrides["measurement.sigma"] = args.sigma
    if getattr(args, "metric", None):
        overrides["outputs.metrics"] = ["negativity", "discord", "qfunc"] if args.metric == "all" else [args.metric]
    scenarios = [apply_overrides(s, overrides) if overrides else s for s in fam]
    if overrides:
        scenarios = _merge_identical(scenarios, args.sigma)
    if getattr(args, "variant", None):
        scenarios = [s for s in scenarios if s.label in args.variant]
        if not scenarios:
            raise ScenarioError(f"no variant matches {args.variant}")
    return fam.name, scenarios


def _merge_identical(scenarios, sigma) -> list:
    """Drop variants that an override made identical; merged runs are relabelled by the override."""
    seen, out = {}, []
    for s in scenarios:
        key = json.dumps(_jsonable(scenario_to_dict(replace(s, label=""))), sort_keys=True)
        if key in seen:
            first = seen[key]
            if sigma is not None:
                out[first] = replace(out[first], label=f"sigma{sigma}")
            continue
        seen[key] = len(out)
        out.append(s)
    return out


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    preset, scenarios = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.keep_going or args.jobs > 1:
        results = run_family(scenarios, jobs=args.jobs, keep_going=True)
    else:
        # stop at the first failure but still record it in the manifest
        results = []
        for s in scenarios:
            results += run_family([s], keep_going=True)
            if isinstance(results[-1][1], Exception):
                break
    entries, code = [], EXIT_OK
    for s, r in results:
        entry = {"run_id": s.run_id, "preset": preset, "label": s.label, "desk": args.desk,
                 "tolerances": {"rtol": s.rtol, "atol": s.atol}}
        if isinstance(r, Exception):
            entry.update(status="numerical_error" if isinstance(r, NumericalError) else "config_error", error=str(r))
            code = max(code, EXIT_NUMERICAL if isinstance(r, NumericalError) else EXIT_CONFIG)
            print(f"{s.run_id}: FAILED ({r})", file=sys.stderr)
        else:
            sub = out / s.run_id
            files = write_bundle(r, sub)
            entry.update(status="ok", files=[f"{s.run_id}/{f}" for f in files],
                         wall_time_s=r.metadata.get("wall_time_s"),
                         parameters=r.metadata.get("declared_parameters"))
            print(f"{s.run_id}: ok ({len(files)} files)")
        entries.append(entry)
    write_manifest(out, entries, "run", time.perf_counter() - t0)
    if args.keep_going:
        return EXIT_OK
    return code


def _parse_values(text: str) -> list:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            vals.append(float(tok))
        except ValueError:
            vals.append(tok)
    return vals


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    _, scenarios = _load(args)
    if len(scenarios) != 1:
        raise ScenarioError(f"sweep needs a single scenario; select one with --variant (found {len(scenarios)})")
    spec = SweepSpec(args.param, tuple(_parse_values(args.values)), jobs=args.jobs)
    points = run_sweep(scenarios[0], spec, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries, failed = [], []
    rows = []
    for i, pt in enumerate(points):
        entry = {"run_id": f"point{i:03d}", "index": i, "value": pt.value, "status": pt.status}
        if pt.bundle is not None:
            sub = out / f"point{i:03d}"
            files = write_bundle(pt.bundle, sub)
            entry.update(files=[f"point{i:03d}/{f}" for f in files],
                         tolerances={"rtol": pt.scenario.rtol, "atol": pt.scenario.atol},
                         wall_time_s=pt.bundle.metadata.get("wall_time_s"),
                         parameters=pt.bundle.metadata.get("declared_parameters"))
        else:
            entry["error"] = pt.error
            failed.append(pt)
        entries.append(entry)
        rows.append([i, pt.value, pt.status, pt.error])
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", args.param, "status", "error"])
        w.writerows(rows)
    entries.append({"run_id": "sweep", "files": ["sweep.csv"]})
    write_manifest(out, entries, f"sweep {args.param}", time.perf_counter() - t0)
    for e in entries[:-1]:
        print(f"point {e['index']} ({args.param}={e['value']}): {e['status']}")
    if failed and not args.keep_going:
        return EXIT_NUMERICAL if any(p.status == "numerical_error" for p in failed) else EXIT_CONFIG
    return EXIT_OK


def _validation_checks(rtol: float, atol: float):
    """Yield ``(name, passed, detail)`` for the installation self-test."""
    from .dynamics import LindbladGenerator, TimeGrid, evolve
    from .measurement import quadrature_effects
    from .metrics import negativity
    from .models import RabiParams, ResonatorParams, nonlinear_resonator_hamiltonian
    from .tensor_core import HilbertLayout, Operator, destroy, number, sigma_x, sigma_z

    tp = 2 * math.pi
    for sigma in (0.0, 0.5, 5.0, math.inf):
        err = quadrature_effects(sigma, 40).completeness_error()
        yield f"POVM completeness sigma={sigma:g}", err < 1e-8, f"{err:.1e}"

    p = RabiParams(tp * 0.299, tp * 4.920, tp * 6.336)
    rel = abs(p.omega_eff() / (tp * 89.52e-3) - 1)
    yield "effective splitting 2pi*89.52 MHz", rel < 1e-3, f"rel. error {rel:.1e}"

    bell = np.zeros(4, complex)
    bell[[0, 3]] = 1 / math.sqrt(2)
    lay = HilbertLayout((2, 2))
    n_bell = negativity(np.outer(bell, bell), 0, lay)
    yield "negativity Bell state = 1/2", abs(n_bell - 0.5) < 1e-12, f"{n_bell:.12f}"
    prod = np.kron(np.diag([0.3, 0.7]), np.diag([0.6, 0.4])).astype(complex)
    n_prod = negativity(prod, 0, lay)
    yield "negativity product state = 0", abs(n_prod) < 1e-12, f"{n_prod:.1e}"

    def halving(gen, rho0, obs, t_end):
        grid = TimeGrid.uniform(t_end, 10.0, rtol=rtol, atol=atol)
        first = evolve(gen, rho0, grid, observables=obs)
        second = evolve(gen, rho0, grid.scaled_tolerances(0.5), observables=obs)
        diff = max(float(np.max(np.abs(first.records[k] - second.records[k]))) for k in obs)
        return first, diff

    # a non-stiff driven, damped qubit: its step size is set by accuracy,
    # so a loose tolerance shows up directly in the halving test
    qlay = HilbertLayout.single(2, "qubit")
    sx, sz = sigma_x().data, sigma_z().data
    h_qubit = Operator(0.5 * tp * 0.05 * sx + 0.5 * tp * 0.02 * sz, qlay)
    lowering = Operator(np.array([[0, 0], [1, 0]], complex), qlay)
    obs_q = {"sx": lambda r: np.trace(sx @ r).real, "sz": lambda r: np.trace(sz @ r).real}
    try:
        _, diff = halving(LindbladGenerator(h_qubit, [(lowering, 0.01)]), np.diag([1.0, 0.0]).astype(complex),
                          obs_q, 100.0)
        yield f"tolerance halving, qubit (rtol={rtol:g})", diff < 1e-5, f"max change {diff:.1e}"
    except NumericalError as exc:
        yield "driven qubit integration", False, str(exc)

    nb = 90
    layout = HilbertLayout.single(nb, "resonator")
    res = ResonatorParams(delta=tp * 5.698e-3, chi=tp * 80.735e-6, f=tp * 22.792e-3, kappa=tp * 2.375e-3, J=0.0)
    gen = LindbladGenerator(nonlinear_resonator_hamiltonian(res, layout),
                            [(Operator(destroy(nb).data, layout), res.kappa)])
    rho0 = np.zeros((nb, nb), complex)
    rho0[0, 0] = 1.0
    b, n = destroy(nb).data, number(nb).data
    obs_r = {"b": lambda r: np.trace(b @ r), "n": lambda r: np.trace(n @ r).real}
    try:
        tr, diff = halving(gen, rho0, obs_r, 100.0)
        drift = tr.diagnostics["max_trace_drift"]
        yield "trace preservation, Kerr resonator", drift < 1e-7, f"{drift:.1e}"
        yield f"tolerance halving, Kerr (rtol={rtol:g})", diff < 1e-5, f"max change {diff:.1e}"
    except NumericalError as exc:
        yield "Kerr resonator integration", False, str(exc)


def cmd_validate(args) -> int:
    rtol, atol = args.rtol, args.atol
    if args.scenario:
        fam = load_scenario_file(args.scenario)
        s = fam.scenarios[0]
        rtol = rtol if rtol is not None else s.rtol
        atol = atol if atol is not None else s.atol
    rtol = 1e-8 if rtol is None else rtol
    atol = 1e-10 if atol is None else atol
    if rtol <= 0 or atol <= 0:
        raise ScenarioError("tolerances must be positive")
    ok = True
    width = 40
    print(f"{'check':<{width}} result  detail")
    for name, passed, detail in _validation_checks(rtol, atol):
        ok &= bool(passed)
        print(f"{name:<{width}} {'PASS' if passed else 'FAIL':<7} {detail}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_list(args) -> int:
    for name in list_presets():
        fam = load_preset(name)
        labels = ", ".join(s.label for s in fam if s.label)
        print(f"{name:<10} {fam.scenarios[0].description}" + (f"  [{labels}]" if labels else ""))
    return EXIT_OK


def _add_common(p):
    p.add_argument("preset", nargs="?", help="preset name (see 'uscsim list')")
    p.add_argument("--preset", dest="preset_opt", help="preset name")
    p.add_argument("--scenario", help="path to a scenario YAML file")
    p.add_argument("--desk", action="store_true", help="apply the preset's reduced desk-scale cuts")
    p.add_argument("--sigma", type=str, default=None, help="override the readout blur (number, 0 or 'infinity')")
    p.add_argument("--variant", action="append", help="run only the named variant(s)")
    p.add_argument("--out", default="uscsim_out", help="output directory")
    p.add_argument("--keep-going", action="store_true", help="record failures and continue")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help="parallel runs (default: $USCSIM_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uscsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"uscsim {version_string()}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or scenario file")
    _add_common(run)
    run.add_argument("--metric", choices=["negativity", "discord", "qfunc", "all"],
                     help="replace the requested metrics")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="sweep one scenario parameter")
    _add_common(sw)
    sw.add_argument("--param", required=True, help="dotted scenario path, e.g. measurement.sigma")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--metric", choices=["negativity", "discord", "qfunc", "all"])
    sw.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="run the installation self-test")
    val.add_argument("--scenario", help="scenario file whose tolerances are checked")
    val.add_argument("--rtol", type=float, default=None)
    val.add_argument("--atol", type=float, default=None)
    val.set_defaults(func=cmd_validate)

    ls = sub.add_parser("list", help="list shipped presets")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if hasattr(args, "preset_opt"):
        if args.preset and args.preset_opt and args.preset != args.preset_opt:
            print("error: conflicting preset names", file=sys.stderr)
            return EXIT_CONFIG
        args.preset = args.preset or args.preset_opt
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UscsimError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
