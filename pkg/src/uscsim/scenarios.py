"""Experiment definitions and the run pipeline.

A :class:`Scenario` bundles physical parameters (rad/ns internally), Fock
cuts, the time grid, the measurement blur and the requested outputs.
Scenario files are YAML; frequencies may be given in rad/ns under the bare
key or as cyclic frequencies under ``<key>_ghz``, ``<key>_mhz`` or
``<key>_khz`` (multiplied by 2 pi and scaled to GHz). The values as written
are kept in ``declared`` and emitted in run metadata.

Presets live in ``uscsim/presets``; a preset may define ``variants`` (a
family of related runs) and a ``desk`` block with reduced cuts.
"""
from __future__ import annotations

import copy
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import analysis
from .dynamics import LindbladGenerator, TimeGrid, evolve
from .errors import NumericalError, ScenarioError, UscsimError
from .measurement import BranchReadout, CoarseGrain, high_low_split
from .metrics import QGrid, negativity, q_function, quantum_discord
from .models import (
    DressedBasis,
    RabiParams,
    ResonatorParams,
    TwoLevelParams,
    UscLossParams,
    approx_ground_excited_quiet,
    dressed_basis,
    dressed_hamiltonian,
    two_level_hamiltonian,
)
from .tensor_core import DensityMatrix, HilbertLayout, Operator, basis, coherent_state, destroy, embed, partial_trace

__all__ = [
    "Scenario",
    "SweepSpec",
    "SweepPoint",
    "ResultBundle",
    "PresetFamily",
    "list_presets",
    "load_preset",
    "load_scenario_file",
    "scenario_from_dict",
    "scenario_to_dict",
    "dump_scenario",
    "apply_overrides",
    "run_scenario",
    "run_family",
    "run_sweep",
]

MODELS = ("full", "two_level", "qnd_limit", "null_J")
KINDS = ("dynamics", "static", "infidelity", "leakage")
METRICS = ("negativity", "discord", "qfunc")
INITIAL_STATES = (
    "exact_ground",
    "exact_excited",
    "approx_ground",
    "approx_excited",
    "sigma_x_prime_plus",
    "sigma_x_prime_minus",
    "right_alpha",
    "left_minus_alpha",
)
UNIT_SCALE = {"_ghz": 1.0, "_mhz": 1e-3, "_khz": 1e-6}
UNIT_NAMES = {"_ghz": "GHz", "_mhz": "MHz", "_khz": "kHz"}
FREQ_KEYS = {
    "rabi": ("omega_q", "g", "omega_r"),
    "resonator": ("delta", "chi", "f", "kappa", "J", "omega_d"),
    "loss": ("gamma1", "gamma2"),
}


@dataclass(frozen=True)
class Scenario:
    """One run: parameters, cuts, time grid, readout and requested outputs."""

    name: str
    rabi: RabiParams
    resonator: ResonatorParams
    loss: UscLossParams = UscLossParams()
    kind: str = "dynamics"
    model: str = "full"
    initial: str = "exact_ground"
    sigma: float = 5.0
    n_cavity: int = 60
    n_resonator: int = 110
    levels: int = 4
    t_end: float = 500.0
    dt: float = 1.0
    rtol: float = 1e-8
    atol: float = 1e-10
    metrics: tuple = ()
    metric_dt: float = 5.0
    discord_dt: float = 25.0
    measure_times: tuple = ()
    qfunc_range: float = 3.0
    qfunc_resonator_range: tuple = (-8.0, 4.0, -3.0, 8.0)
    qfunc_points: int = 61
    degeneracy_tol: float | None = None
    label: str = ""
    description: str = ""
    analysis: dict = field(default_factory=dict)
    declared: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.model not in MODELS:
            raise ScenarioError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.initial not in INITIAL_STATES and not str(self.initial).startswith("dressed:"):
            raise ScenarioError(f"unknown initial state {self.initial!r}")
        CoarseGrain(self.sigma)
        for name in ("n_cavity", "n_resonator", "levels"):
            if int(getattr(self, name)) < 2:
                raise ScenarioError(f"{name} must be >= 2")
        if self.levels > 2 * self.n_cavity:
            raise ScenarioError("levels cannot exceed 2 * n_cavity")
        if self.model == "two_level" and self.levels != 2:
            object.__setattr__(self, "levels", 2)
        if not (self.t_end > 0 and self.dt > 0 and self.rtol > 0 and self.atol > 0):
            raise ScenarioError("t_end, dt, rtol and atol must be positive")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ScenarioError(f"unknown metrics {sorted(bad)}; choose from {METRICS}")
        object.__setattr__(self, "metrics", tuple(self.metrics))
        mt = tuple(float(t) for t in (self.measure_times or (self.t_end,)))
        if any(t < 0 or t > self.t_end for t in mt):
            raise ScenarioError("measure_times must lie in [0, t_end]")
        object.__setattr__(self, "measure_times", mt)
        object.__setattr__(self, "qfunc_resonator_range", tuple(float(v) for v in self.qfunc_resonator_range))

    @property
    def run_id(self) -> str:
        return f"{self.name}-{self.label}" if self.label else self.name

    def time_grid(self, tol_factor: float = 1.0) -> TimeGrid:
        return TimeGrid.uniform(self.t_end, self.dt, rtol=self.rtol * tol_factor, atol=self.atol * tol_factor)

    def effective_rabi(self) -> RabiParams:
        if self.model == "qnd_limit":
            return replace(self.rabi, omega_q=0.0)
        return self.rabi

    def effective_J(self) -> float:
        return 0.0 if self.model == "null_J" else self.resonator.J


# --------------------------------------------------------------------------
# YAML schema


def _declared_value(entry: dict) -> float:
    scale = {v: UNIT_SCALE[k] for k, v in UNIT_NAMES.items()}[entry["unit"]]
    return 2.0 * math.pi * float(entry["value"]) * scale


def _parse_section(section: str, raw: dict, declared: dict) -> dict:
    out = {}
    for key, val in (raw or {}).items():
        unit = next((u for u in UNIT_SCALE if key.endswith(u)), None)
        if unit is not None:
            base = key[: -len(unit)]
            if base not in FREQ_KEYS.get(section, ()):
                raise ScenarioError(f"{section}.{key}: unknown frequency parameter {base!r}")
            if val is None:
                out[base] = None
                continue
            out[base] = 2.0 * math.pi * float(val) * UNIT_SCALE[unit]
            declared[f"{section}.{base}"] = {"value": val, "unit": UNIT_NAMES[unit]}
        else:
            if key not in FREQ_KEYS.get(section, ()):
                raise ScenarioError(f"unknown key {section}.{key}")
            out[key] = None if val is None else float(val)
            prior = declared.get(f"{section}.{key}")
            # a re-emitted file carries the converted value; keep the declared
            # entry only while it still describes that value
            if prior is not None and _declared_value(prior) != out[key]:
                declared.pop(f"{section}.{key}")
    return out


_TOP_KEYS = {"name", "label", "description", "kind", "model", "initial", "rabi", "resonator", "loss",
             "measurement", "cuts", "time", "outputs", "analysis", "declared", "notes", "desk", "variants"}


def scenario_from_dict(d: dict) -> Scenario:
    """Build a :class:`Scenario` from the YAML mapping (``desk``/``variants`` ignored)."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario file must contain a mapping")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level keys {sorted(unknown)}")
    declared = copy.deepcopy(d.get("declared") or {})
    try:
        rabi = RabiParams(**_parse_section("rabi", d.get("rabi"), declared))
        res_kw = _parse_section("resonator", d.get("resonator"), declared)
        resonator = ResonatorParams(**res_kw)
        loss = UscLossParams(**_parse_section("loss", d.get("loss"), declared))
    except TypeError as exc:
        raise ScenarioError(f"incomplete parameter section: {exc}") from None
    meas = d.get("measurement") or {}
    cuts = d.get("cuts") or {}
    tm = d.get("time") or {}
    outs = d.get("outputs") or {}
    for sec, allowed in (
        (meas, {"sigma"}),
        (cuts, {"n_cavity", "n_resonator", "levels", "degeneracy_tol"}),
        (tm, {"t_end", "dt", "rtol", "atol"}),
        (outs, {"metrics", "metric_dt", "discord_dt", "measure_times", "qfunc_range", "qfunc_resonator_range",
                "qfunc_points"}),
    ):
        extra = set(sec) - allowed
        if extra:
            raise ScenarioError(f"unknown keys {sorted(extra)}")
    kw: dict[str, Any] = dict(
        name=str(d.get("name", "scenario")),
        label=str(d.get("label", "") or ""),
        description=str(d.get("description", "") or ""),
        kind=d.get("kind", "dynamics"),
        model=d.get("model", "full"),
        initial=d.get("initial", "exact_ground"),
        rabi=rabi,
        resonator=resonator,
        loss=loss,
        analysis=copy.deepcopy(d.get("analysis") or {}),
        declared=declared,
        notes=copy.deepcopy(d.get("notes") or {}),
    )
    if "sigma" in meas:
        kw["sigma"] = CoarseGrain(meas["sigma"]).sigma
    for k in ("n_cavity", "n_resonator", "levels"):
        if k in cuts:
            kw[k] = int(cuts[k])
    if cuts.get("degeneracy_tol") is not None:
        kw["degeneracy_tol"] = float(cuts["degeneracy_tol"])
    for k in ("t_end", "dt", "rtol", "atol"):
        if k in tm:
            kw[k] = float(tm[k])
    if "metrics" in outs:
        kw["metrics"] = tuple(outs["metrics"] or ())
    for k in ("metric_dt", "discord_dt", "qfunc_range"):
        if k in outs:
            kw[k] = float(outs[k])
    if "measure_times" in outs:
        kw["measure_times"] = tuple(float(t) for t in outs["measure_times"] or ())
    if "qfunc_resonator_range" in outs:
        kw["qfunc_resonator_range"] = tuple(outs["qfunc_resonator_range"])
    if "qfunc_points" in outs:
        kw["qfunc_points"] = int(outs["qfunc_points"])
    return Scenario(**kw)


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of :func:`scenario_from_dict`; frequencies written in rad/ns."""

    def params(p):
        return {k: v for k, v in asdict(p).items() if v is not None}

    return {
        "name": s.name,
        "label": s.label,
        "description": s.description,
        "kind": s.kind,
        "model": s.model,
        "initial": s.initial,
        "rabi": params(s.rabi),
        "resonator": params(s.resonator),
        "loss": params(s.loss),
        "measurement": {"sigma": s.sigma if math.isfinite(s.sigma) else "infinity"},
        "cuts": {"n_cavity": s.n_cavity, "n_resonator": s.n_resonator, "levels": s.levels,
                 "degeneracy_tol": s.degeneracy_tol},
        "time": {"t_end": s.t_end, "dt": s.dt, "rtol": s.rtol, "atol": s.atol},
        "outputs": {
            "metrics": list(s.metrics),
            "metric_dt": s.metric_dt,
            "discord_dt": s.discord_dt,
            "measure_times": list(s.measure_times),
            "qfunc_range": s.qfunc_range,
            "qfunc_resonator_range": list(s.qfunc_resonator_range),
            "qfunc_points": s.qfunc_points,
        },
        "analysis": copy.deepcopy(s.analysis),
        "declared": copy.deepcopy(s.declared),
        "notes": copy.deepcopy(s.notes),
    }


def dump_scenario(s: Scenario, path: str | os.PathLike | None = None) -> str:
    text = yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _deep_set(d: dict, dotted: str, value):
    parts = dotted.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ScenarioError(f"override path {dotted!r} crosses a non-mapping")
    leaf = parts[-1]
    unit = next((u for u in UNIT_SCALE if leaf.endswith(u)), None)
    base = leaf[: -len(unit)] if unit else leaf
    for u in UNIT_SCALE:
        cur.pop(base + u, None)
    if unit:
        cur.pop(base, None)
    cur[leaf] = value


def apply_overrides(s: Scenario | dict, overrides: dict) -> Scenario:
    """Return a copy with dotted-path overrides (YAML schema paths) applied."""
    d = scenario_to_dict(s) if isinstance(s, Scenario) else copy.deepcopy(s)
    for k, v in (overrides or {}).items():
        _deep_set(d, k, v)
    return scenario_from_dict(d)


# --------------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class PresetFamily:
    name: str
    scenarios: tuple

    def __iter__(self):
        return iter(self.scenarios)

    def __len__(self):
        return len(self.scenarios)

    def get(self, label: str) -> Scenario:
        for s in self.scenarios:
            if s.label == label:
                return s
        raise KeyError(f"{self.name} has no variant {label!r}")


def list_presets() -> list[str]:
    root = resources.files("uscsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _family_from_dict(raw: dict, desk: bool) -> PresetFamily:
    raw = copy.deepcopy(raw)
    desk_block = raw.pop("desk", None) or {}
    variants = raw.pop("variants", None) or [{}]
    if desk:
        for k, v in _flatten(desk_block).items():
            _deep_set(raw, k, v)
    out = []
    for var in variants:
        d = copy.deepcopy(raw)
        if var.get("label"):
            d["label"] = var["label"]
        for k, v in (var.get("set") or {}).items():
            _deep_set(d, k, v)
        out.append(scenario_from_dict(d))
    return PresetFamily(raw.get("name", "scenario"), tuple(out))


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_preset(name: str, desk: bool = False) -> PresetFamily:
    """Load a shipped preset (all variants); ``desk`` applies the reduced-cut block."""
    path = resources.files("uscsim") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    return _family_from_dict(raw, desk)


def load_scenario_file(path: str | os.PathLike, desk: bool = False) -> PresetFamily:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path} does not contain a mapping")
    return _family_from_dict(raw, desk)


# --------------------------------------------------------------------------
# run pipeline


@dataclass
class ResultBundle:
    """Everything produced by one scenario run.

    ``series`` share ``times``; ``metric_series`` carry their own sample
    times; ``tables`` hold non-temporal outputs (column name -> values).
    """

    scenario: Scenario
    times: np.ndarray
    series: dict = field(default_factory=dict)
    metric_series: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    qgrids: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


@dataclass
class _System:
    gen: LindbladGenerator
    rho0: np.ndarray
    layout: HilbertLayout
    db: DressedBasis
    ops: dict
    weight: float


def _initial_usc_ket(s: Scenario, db: DressedBasis) -> np.ndarray:
    """Initial (qubit, cavity) ket for the selector."""
    p = db.params
    nc = db.n_cavity
    init = s.initial
    if init == "exact_ground":
        return db.ground
    if init == "exact_excited":
        return db.excited
    if init.startswith("dressed:"):
        k = int(init.split(":", 1)[1])
        if not 0 <= k < db.vectors.shape[1]:
            raise ScenarioError(f"dressed level {k} out of range")
        return db.vectors[:, k]
    if init == "sigma_x_prime_plus":
        return (db.ground + db.excited) / math.sqrt(2)
    if init == "sigma_x_prime_minus":
        return (db.ground - db.excited) / math.sqrt(2)
    g_ap, e_ap = approx_ground_excited_quiet(p, nc)
    if init == "approx_ground":
        return g_ap
    if init == "approx_excited":
        return e_ap
    if init == "right_alpha":
        return np.kron(basis(2, 1), coherent_state(p.alpha, nc))
    if init == "left_minus_alpha":
        return np.kron(basis(2, 0), coherent_state(-p.alpha, nc))
    raise ScenarioError(f"unknown initial state {init!r}")


def _build_system(s: Scenario) -> _System:
    rabi = s.effective_rabi()
    J = s.effective_J()
    nb = s.n_resonator
    levels = 2 if s.model == "two_level" else s.levels
    db = dressed_basis(rabi, s.n_cavity, levels=levels, degeneracy_tol=s.degeneracy_tol)
    if s.model == "two_level":
        h = two_level_hamiltonian(TwoLevelParams(rabi.omega_eff(), J), s.resonator, nb)
        sz = np.full((2, 2), np.nan)
    else:
        h = dressed_hamiltonian(db, s.resonator, nb, J)
        sz = db.sigma_z()
    layout = h.layout
    k = layout.dims[0]
    b = destroy(nb).data
    cops = [(embed(b, layout, "resonator"), s.resonator.kappa)]
    if s.loss.gamma1 > 0:
        lower = np.zeros((k, k), dtype=complex)
        lower[0, 1] = 1.0
        cops.append((embed(lower, layout, "usc"), s.loss.gamma1))
    if s.loss.gamma2 > 0:
        cops.append((embed(db.sigma_z_prime(), layout, "usc"), s.loss.gamma2))
    gen = LindbladGenerator(h, cops)
    coeffs, weight = db.to_dressed(_initial_usc_ket(s, db))
    psi_r = basis(nb, 0)
    psi = np.kron(coeffs, psi_r)
    rho0 = np.outer(psi, psi.conj())
    tol = s.degeneracy_tol if s.degeneracy_tol is not None else 1e-9 * max(1.0, float(np.max(np.abs(db.energies))))
    plus, minus, _, _ = analysis.split_in_eigenbasis(db.cavity_x(), db.energies[:k], tol)
    ops = {
        "sigma_z": sz,
        "sigma_x_prime": db.sigma_x_prime(),
        "sigma_z_prime": db.sigma_z_prime(),
        "x_prime": 0.5 * (plus + minus),
    }
    return _System(gen, rho0, layout, db, ops, weight)


def _usc_expect(ops: dict, rho_s: np.ndarray | None) -> dict:
    if rho_s is None:
        return {k: math.nan for k in ops}
    return {k: float(np.real(np.einsum("ij,ji->", v, rho_s))) for k, v in ops.items()}


def _on_grid(t: float, dt: float) -> bool:
    return abs(t / dt - round(t / dt)) < 1e-9


def run_scenario(s: Scenario, tol_factor: float = 1.0, store_all: bool = False) -> ResultBundle:
    """Run one scenario; ``tol_factor`` scales rtol/atol (convergence checks)."""
    t0 = time.perf_counter()
    if s.kind == "static":
        bundle = _run_static(s)
    elif s.kind == "infidelity":
        bundle = _run_infidelity(s)
    elif s.kind == "leakage":
        bundle = _run_leakage(s)
    else:
        bundle = _run_dynamics(s, tol_factor, store_all)
    bundle.metadata.update(_metadata(s))
    bundle.metadata["wall_time_s"] = time.perf_counter() - t0
    bundle.metadata["tolerance_factor"] = tol_factor
    return bundle


def _metadata(s: Scenario) -> dict:
    from ._version import version_string

    return {
        "run_id": s.run_id,
        "version": version_string(),
        "scenario": scenario_to_dict(s),
        "declared_parameters": copy.deepcopy(s.declared),
        "notes": copy.deepcopy(s.notes),
        "units": {"frequency": "rad/ns", "time": "ns", "entropy": "bits"},
    }


def _run_dynamics(s: Scenario, tol_factor: float, store_all: bool) -> ResultBundle:
    sysm = _build_system(s)
    layout = sysm.layout
    k, nb = layout.dims
    readout = BranchReadout(layout, s.sigma)
    sharp = BranchReadout(layout, 0.0)
    b = destroy(nb).data
    nmat = np.diag(np.arange(nb, dtype=float))
    want_neg = "negativity" in s.metrics
    want_disc = "discord" in s.metrics
    if want_disc and k != 2:
        raise ScenarioError("discord needs a two-level USC factor (levels = 2 or model two_level)")
    disc_basis = _sigma_x_prime_eigenbasis()

    def callback(t, rho):
        t4 = rho.reshape(k, nb, k, nb)
        rho_s = np.einsum("arbr->ab", t4)
        rho_r = np.einsum("aras->rs", t4)
        out = {f"{n}": v for n, v in _usc_expect(sysm.ops, rho_s).items()}
        out["photon_number"] = float(np.real(np.trace(nmat @ rho_r)))
        out["b"] = complex(np.trace(b @ rho_r))
        br = readout(rho)
        out["p_ge"], out["p_lt"] = br["p_ge"], br["p_lt"]
        out["photon_number_ge"], out["photon_number_lt"] = br["n_ge"], br["n_lt"]
        for side in ("ge", "lt"):
            for n, v in _usc_expect(sysm.ops, br["rho_" + side]).items():
                out[f"{n}_{side}"] = v
        sh = sharp(rho)
        out["p_ge_sharp"], out["p_lt_sharp"] = sh["p_ge"], sh["p_lt"]
        out["photon_number_ge_sharp"], out["photon_number_lt_sharp"] = sh["n_ge"], sh["n_lt"]
        out["negativity"] = negativity(rho, 0, layout) if want_neg and _on_grid(t, s.metric_dt) else math.nan
        if want_disc and _on_grid(t, s.discord_dt):
            rot = np.kron(disc_basis, np.eye(nb))
            out["discord"] = quantum_discord(rot.conj().T @ rho @ rot, layout).value
        else:
            out["discord"] = math.nan
        return out

    grid = s.time_grid(tol_factor)
    store = "all" if store_all else sorted(set(s.measure_times) | {s.t_end})
    traj = evolve(sysm.gen, Operator(sysm.rho0, layout), grid, callback=callback, store=store)
    rec = traj.records
    bundle = ResultBundle(s, traj.times)
    for name, arr in rec.items():
        if name in ("negativity", "discord"):
            continue
        if s.model == "two_level" and name.startswith("sigma_z") and not name.startswith("sigma_z_prime"):
            continue
        bundle.series[name] = np.asarray(arr)
    for name in ("negativity", "discord"):
        arr = np.asarray(rec[name], dtype=float)
        mask = ~np.isnan(arr)
        if mask.any():
            bundle.metric_series[name] = (traj.times[mask], arr[mask])
    bundle.states = {"trajectory": traj, "dressed_basis": sysm.db}

    final = traj.final_state
    split = high_low_split(final, warn=False)
    high = split.high_side
    low = "lt" if high == "ge" else "ge"
    for base in ("sigma_z", "sigma_x_prime", "sigma_z_prime", "x_prime", "photon_number"):
        for tag, side in (("high", high), ("low", low)):
            if f"{base}_{side}" in bundle.series:
                bundle.series[f"{base}_{tag}"] = bundle.series[f"{base}_{side}"]
    bundle.series["p_high"] = bundle.series[f"p_{high}_sharp"]
    bundle.series["p_low"] = bundle.series[f"p_{low}_sharp"]
    w_eff, J = s.effective_rabi().omega_eff(), s.effective_J()
    for tag, side in (("high", high), ("low", low)):
        nbar = bundle.series[f"photon_number_{side}_sharp"]
        pred = np.array([analysis.static_branch_prediction(w_eff, J, n) for n in nbar])
        bundle.series[f"sigma_x_prime_static_{tag}"] = pred[:, 0]
        bundle.series[f"sigma_z_prime_static_{tag}"] = pred[:, 1]

    summary = {
        "high_side": high,
        "p_high": split.p_high,
        "n_high": split.n_high,
        "n_low": split.n_low,
        "initial_weight": sysm.weight,
        "diagnostics": {k_: float(v) for k_, v in traj.diagnostics.items()},
        "omega_eff": s.effective_rabi().omega_eff(),
        "dressed_splitting": sysm.db.splitting,
    }
    last = {n: float(np.real(v[-1])) for n, v in bundle.series.items() if np.isrealobj(v) or n == "b"}
    summary["final"] = last
    for name, (ts, vals) in bundle.metric_series.items():
        summary[f"peak_{name}"] = float(np.max(vals))
    if "qfunc" in s.metrics:
        bundle.qgrids.update(_measurement_qgrids(s, sysm, traj))
    bundle.summary = summary
    bundle.metadata["high_low_assignment"] = {
        "high_side": "x >= 0" if high == "ge" else "x < 0",
        "rule": "branch with the larger conditional |<b>| at t_end under a sharp sign split",
    }
    return bundle


def _sigma_x_prime_eigenbasis() -> np.ndarray:
    """Columns: the -1 and +1 eigenvectors of sx' in the (G, E) basis."""
    return np.array([[1.0, 1.0], [-1.0, 1.0]], dtype=complex) / math.sqrt(2)


def _cavity_state(db: DressedBasis, rho_usc: np.ndarray) -> DensityMatrix:
    full = db.to_fock(rho_usc)
    full = 0.5 * (full + full.conj().T)
    full /= np.real(np.trace(full))
    return partial_trace(full, ["cavity"], db.usc_layout)


def _measurement_qgrids(s: Scenario, sysm: _System, traj) -> dict:
    out = {}
    rng = s.qfunc_range
    npts = s.qfunc_points
    layout = sysm.layout
    k, nb = layout.dims
    readout = BranchReadout(layout, s.sigma)
    for t in s.measure_times:
        rho = traj.state_at(t).data
        tag = "" if math.isclose(t, s.t_end) else f"_t{t:g}"
        br = readout(rho)
        for side in ("ge", "lt"):
            m = br["rho_" + side]
            if m is None:
                continue
            cav = _cavity_state(sysm.db, m)
            out[f"x{side}{tag}"] = q_function(cav, (-rng, rng), (-rng, rng), npts, npts)
        rho_r = np.einsum("aras->rs", rho.reshape(k, nb, k, nb))
        x0, x1, y0, y1 = s.qfunc_resonator_range
        # leakage monitoring already bounds the population near the cut, so
        # the coherent-vector truncation at far grid corners is harmless here
        out[f"resonator{tag}"] = q_function(rho_r, (x0, x1), (y0, y1), npts, npts, max_deficit=math.inf)
    return out


def _run_static(s: Scenario) -> ResultBundle:
    db = dressed_basis(s.rabi, s.n_cavity, levels=2, degeneracy_tol=s.degeneracy_tol)
    rho = np.outer(db.ground, db.ground.conj())
    cav = partial_trace(DensityMatrix(rho, db.usc_layout), ["cavity"])
    rng = s.qfunc_range
    q = q_function(cav, (-rng, rng), (-rng, rng), s.qfunc_points, s.qfunc_points)
    bundle = ResultBundle(s, np.array([]))
    bundle.qgrids["ground_cavity"] = q
    # lobes sit on the real axis; report the peak on each half-plane
    re = q.re
    half_l = q.values[:, re < 0]
    half_r = q.values[:, re > 0]
    il = np.unravel_index(np.argmax(half_l), half_l.shape)
    ir = np.unravel_index(np.argmax(half_r), half_r.shape)
    bundle.summary = {
        "alpha": s.rabi.alpha,
        "omega_eff": s.rabi.omega_eff(),
        "splitting": db.splitting,
        "lobe_left": [float(re[re < 0][il[1]]), float(q.im[il[0]])],
        "lobe_right": [float(re[re > 0][ir[1]]), float(q.im[ir[0]])],
        "lobe_heights": [float(half_l[il]), float(half_r[ir])],
        "cavity_photon_number": float(np.real(np.trace(np.diag(np.arange(s.n_cavity)) @ cav.data))),
    }
    return bundle


def _grid_values(spec, scale=1.0) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], int(spec["num"])) * scale
    return np.atleast_1d(np.asarray(spec, dtype=float)) * scale


def _run_infidelity(s: Scenario) -> ResultBundle:
    a = s.analysis
    wq = _grid_values(a.get("omega_q_ghz", {"start": 0.01, "stop": 0.5, "num": 50}), 2 * math.pi)
    ratios = [float(r) for r in a.get("coupling_ratios", [0.51, 0.78, 0.99])]
    with_exact = bool(a.get("exact", True))
    bundle = ResultBundle(s, np.array([]))
    cols: dict[str, list] = {"omega_q": [], "coupling_ratio": [], "f": [], "f_full_prefactor": []}
    if with_exact:
        cols["one_minus_fidelity"] = []
    for r in ratios:
        for w in wq:
            p = RabiParams(w, r * s.rabi.omega_r, s.rabi.omega_r)
            cand = analysis.infidelity_candidates(p)
            cols["omega_q"].append(w)
            cols["coupling_ratio"].append(r)
            cols["f"].append(cand["quarter"])
            cols["f_full_prefactor"].append(cand["full"])
            if with_exact:
                fg, _ = analysis.exact_fidelities(p, s.n_cavity)
                cols["one_minus_fidelity"].append(1.0 - fg)
    bundle.tables["infidelity"] = {k: np.asarray(v) for k, v in cols.items()}
    f = np.asarray(cols["f"])
    bundle.summary = {"max_f": float(f.max()), "points": int(f.size)}
    if with_exact:
        rel = np.abs(np.asarray(cols["one_minus_fidelity"]) - f) / np.where(f > 0, f, 1.0)
        bundle.summary["max_relative_error"] = float(rel.max())
    return bundle


def _run_leakage(s: Scenario) -> ResultBundle:
    a = s.analysis
    wq = _grid_values(a.get("omega_q_ghz", {"start": 0.1, "stop": 0.5, "num": 9}), 2 * math.pi)
    levels = [int(j) for j in a.get("levels", [2, 3, 4])]
    cols: dict[str, list] = {"omega_q": []}
    for j in levels:
        cols[f"h{j}"] = []
    for w in wq:
        p = replace(s.rabi, omega_q=float(w))
        prof = analysis.leakage_profile(p, levels, s.n_cavity)
        cols["omega_q"].append(w)
        for j in levels:
            cols[f"h{j}"].append(prof[j])
    bundle = ResultBundle(s, np.array([]))
    bundle.tables["leakage"] = {k: np.asarray(v) for k, v in cols.items()}
    bundle.summary = {f"max_h{j}": float(np.max(cols[f"h{j}"])) for j in levels}
    return bundle


def run_family(family, jobs: int = 1, keep_going: bool = False) -> list:
    """Run every variant; returns ``(scenario, bundle or exception)`` pairs in order."""
    scenarios = list(family)
    return _map(run_scenario, scenarios, jobs, keep_going)


def _safe(fn, arg):
    try:
        return fn(arg)
    except UscsimError as exc:
        return exc


def _map(fn, items, jobs, keep_going):
    jobs = max(1, int(jobs))
    if jobs == 1 or len(items) == 1:
        results = []
        for it in items:
            r = _safe(fn, it) if keep_going else fn(it)
            results.append(r)
        return list(zip(items, results))
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(_safe, fn, it) for it in items]
        results = [f.result() for f in futs]
    if not keep_going:
        for r in results:
            if isinstance(r, Exception):
                raise r
    return list(zip(items, results))


@dataclass(frozen=True)
class SweepSpec:
    """Dotted YAML path (e.g. ``measurement.sigma`` or ``rabi.omega_q_ghz``) and its values."""

    path: str
    values: tuple
    jobs: int = 1

    def __post_init__(self):
        vals = tuple(self.values)
        if not vals:
            raise ScenarioError("sweep needs at least one value")
        for v in vals:
            if isinstance(v, (int, float)) and not math.isfinite(v) and self.path != "measurement.sigma":
                raise ScenarioError(f"non-finite sweep value {v}")
        object.__setattr__(self, "values", vals)


@dataclass
class SweepPoint:
    value: Any
    scenario: Scenario | None
    bundle: ResultBundle | None
    status: str
    error: str = ""


def run_sweep(s: Scenario, sweep: SweepSpec, jobs: int | None = None) -> list[SweepPoint]:
    """Run ``s`` once per sweep value; failures are recorded and the sweep continues."""
    points = []
    scenarios = []
    for v in sweep.values:
        try:
            sc = apply_overrides(s, {sweep.path: v})
            sc = replace(sc, label=f"{sweep.path}={v}")
            scenarios.append((v, sc))
        except ScenarioError as exc:
            scenarios.append((v, exc))
    runnable = [sc for _, sc in scenarios if isinstance(sc, Scenario)]
    results = dict(
        (id(sc), r) for sc, r in _map(run_scenario, runnable, jobs or sweep.jobs, keep_going=True)
    )
    for v, sc in scenarios:
        if not isinstance(sc, Scenario):
            points.append(SweepPoint(v, None, None, "config_error", str(sc)))
            continue
        r = results[id(sc)]
        if isinstance(r, Exception):
            status = "numerical_error" if isinstance(r, NumericalError) else "error"
            points.append(SweepPoint(v, sc, None, status, str(r)))
        else:
            r.metadata["sweep"] = {"path": sweep.path, "value": v}
            points.append(SweepPoint(v, sc, r, "ok"))
    return points


def scenario_fields() -> list[str]:
    return [f.name for f in fields(Scenario)]

