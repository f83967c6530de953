"""Command line front end: JSON configs, validation, orchestration and report files.

    warpsmooth <subcommand> --config path [--set key=value]... [--jobs N]

Subcommands: manifold, evolve, smoothing-scan, resolvent-scan, commutant-test, all.
Exit status: 0 success, 2 invalid configuration / output problems, 3 numerical failure.
WARPSMOOTH_OUT overrides output.directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import evolve as ev
from . import geometry as geo
from . import microlocal as ml
from . import resolvent as rs
from . import smoothing as sm
from . import warping as wp
from .plotting import line_plot

SUBCOMMANDS = ("manifold", "evolve", "smoothing-scan", "resolvent-scan", "commutant-test", "all")
FORMATS = ("json", "csv", "svg")


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------------------

@dataclass
class ManifoldConfig:
    m1: Optional[int] = 1
    m2: Optional[int] = 1
    x1: float = 1.0
    x2: float = 2.0
    r0: float = 0.25
    R0: float = 4.0
    core_halfwidth: float = 0.1
    window1: Optional[list] = None      # reciprocal window of A1 (default x2 +- 0.2)
    window2: Optional[list] = None      # reciprocal window of A2 (default x1 +- 0.2)


@dataclass
class GridConfig:
    x_max: float = 8.0
    n_points: int = 4607
    stencil_order: int = 2


@dataclass
class DataConfig:
    kind: str = "quasimode"
    x0: float = 1.0
    width: float = 0.1
    k: float = 32
    n: float = 0
    seed: int = 0
    xi0: float = 0.0
    window_scale: float = 1.0


@dataclass
class EvolveBlock:
    T: float = 1.0
    dt: float = 1e-3
    sponge: bool = True
    sponge_strength: float = 50.0
    energy_scaled: bool = True
    stop_below: float = 1e-10
    weight_power: float = 1.5
    data: DataConfig = field(default_factory=DataConfig)


@dataclass
class FamilyConfig:
    kind: str = "quasimode"
    x0: float = 2.0
    width: float = 0.3
    xi_ratio: float = 1.0
    n_ratio: float = 0.0
    window_scale: float = 1.0


@dataclass
class SmoothingBlock:
    k_list: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    family: FamilyConfig = field(default_factory=FamilyConfig)
    min_r2: float = 0.9
    s_list: Optional[list] = None


@dataclass
class ResolventBlock:
    h_list: list = field(default_factory=lambda: [2.0 ** -p for p in range(4, 10)])
    z_halfwidth: float = 0.1
    n_probe: int = 0
    delta1: float = 0.3
    eps: float = 0.02
    use_psi: bool = False
    eta_power: float = 2.0
    x_max: float = 6.0
    points_per_h: float = 10.0
    absorber_strength: float = 1.0
    v_sign: float = -1.0
    min_r2: float = 0.9


@dataclass
class CommutantBlock:
    h_list: list = field(default_factory=lambda: [2.0 ** -p for p in range(4, 10)])
    garding_h_list: list = field(default_factory=lambda: [2.0 ** -p for p in range(4, 8)])
    h_tilde: Optional[float] = 0.5
    h_tilde_rule: str = "fixed"
    delta1: float = 0.3
    eps: float = 0.02
    epsilon0: float = 1.0
    states: str = "quasimode"
    n_probe: int = 0
    min_r2: float = 0.9


@dataclass
class OutputConfig:
    directory: str = "warpsmooth-out"
    formats: list = field(default_factory=lambda: ["json", "csv", "svg"])


@dataclass
class ExperimentConfig:
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    evolve: EvolveBlock = field(default_factory=EvolveBlock)
    smoothing: SmoothingBlock = field(default_factory=SmoothingBlock)
    resolvent: ResolventBlock = field(default_factory=ResolventBlock)
    commutant: CommutantBlock = field(default_factory=CommutantBlock)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d or {}, "")

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _from_dict(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError(f"config section '{path or '<root>'}' must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join((path + '.' if path else '') + u for u in unknown)}")
    kw = {}
    for name, f in fields.items():
        if name not in d:
            continue
        sub = _nested_type(cls, name)
        kw[name] = _from_dict(sub, d[name], f"{path}.{name}" if path else name) if sub else d[name]
    return cls(**kw)


def _nested_type(cls, name):
    default = cls()
    val = getattr(default, name)
    return type(val) if dataclasses.is_dataclass(val) else None


def apply_override(raw, assignment):
    """Apply 'a.b.c=value' to a raw config dict; value parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: '{p}' is not a section")
    node[parts[-1]] = value
    return raw


def load_config(path, overrides=()):
    try:
        raw = json.loads(Path(path).read_text()) if path else {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for ov in overrides:
        apply_override(raw, ov)
    return ExperimentConfig.from_dict(raw)


# --- builders and validation ---------------------------------------------------------------

def build_model(mc):
    if mc.m1 is None and mc.m2 is None:
        return geo.ManifoldModel.flat(mc.x1, mc.x2, mc.r0, mc.R0)
    return geo.ManifoldModel(*geo.default_profiles(
        mc.m1, mc.m2, mc.x1, mc.x2, mc.r0, mc.R0, mc.core_halfwidth,
        tuple(mc.window1) if mc.window1 else None, tuple(mc.window2) if mc.window2 else None))


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _check_dyadic(vals, name, minimum, decreasing=False):
    _require(isinstance(vals, list) and len(vals) >= minimum,
             f"{name} must list at least {minimum} values (got {vals!r})")
    a = np.asarray(vals, float)
    _require(np.all(a > 0), f"{name} entries must be positive")
    r = np.log2(a[:-1] / a[1:]) if decreasing else np.log2(a[1:] / a[:-1])
    _require(np.allclose(r, np.round(r)) and np.all(np.round(r) >= 1),
             f"{name} must be {'decreasing' if decreasing else 'increasing'} and dyadic")


def validate(cfg, subcommand):
    """Check every precondition the requested pipeline depends on; returns the built model."""
    _require(subcommand in SUBCOMMANDS, f"unknown subcommand {subcommand!r}")
    fm = [f for f in cfg.output.formats if f not in FORMATS]
    _require(not fm, f"output.formats has unsupported entries {fm}")
    _require(cfg.output.formats, "output.formats must not be empty")
    g = cfg.grid
    _require(g.stencil_order in (2, 4), "grid.stencil_order must be 2 or 4")
    _require(g.n_points >= 3 and g.x_max > 0, "grid needs x_max > 0 and n_points >= 3")
    try:
        model = build_model(cfg.manifold)
    except wp.InfeasibleSpec as exc:
        raise ConfigError(f"manifold: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"manifold: {exc}") from exc
    _require(g.x_max > model.flat_outer,
             f"grid.x_max = {g.x_max} must exceed the outer flat radius {model.flat_outer}")
    grid = geo.RadialGrid(g.x_max, g.n_points)
    want = {subcommand} if subcommand != "all" else set(SUBCOMMANDS) - {"all"}
    e = cfg.evolve
    if want & {"evolve", "smoothing-scan"}:
        _require(e.T > 0, "evolve.T must be positive")
        _require(0 < e.dt <= e.T, "evolve.dt must satisfy 0 < dt <= T")
        _require(e.weight_power > 0, "evolve.weight_power must be positive")
    if "evolve" in want:
        d = cfg.evolve.data
        spec = ev.InitialDataSpec(d.kind, d.x0, d.width, d.k, d.n, d.seed, d.xi0, d.window_scale)
        try:
            spec.validate(grid)
            geo.assemble_mode_operator(model, d.k, d.n, grid, g.stencil_order)
        except ValueError as exc:
            raise ConfigError(f"evolve.data: {exc}") from exc
    if "smoothing-scan" in want:
        s = cfg.smoothing
        _check_dyadic(s.k_list, "smoothing.k_list", 4)
        _require(s.family.kind in ("quasimode", "coherent"),
                 "smoothing.family.kind must be 'quasimode' or 'coherent'")
        fam = sm.DataFamily(**asdict(s.family))
        for k in s.k_list:
            spec = fam.spec(k)
            try:
                spec.validate(grid)
                geo.assemble_mode_operator(model, spec.k, spec.n, grid, g.stencil_order)
            except ValueError as exc:
                raise ConfigError(f"smoothing (k={k}): {exc}") from exc
            if spec.kind == "quasimode":
                idx, _ = ev.quasimode_window(model, spec.k, spec.n, grid, spec.window_scale)
                _require(idx.size >= 3, f"smoothing (k={k}): quasimode window holds {idx.size} nodes")
        if s.s_list is not None:
            _require(all(0 <= v <= 1 for v in s.s_list), "smoothing.s_list entries must lie in [0, 1]")
    if "resolvent-scan" in want:
        r = cfg.resolvent
        _check_dyadic(r.h_list, "resolvent.h_list", 5, decreasing=True)
        _require(all(0 < h < 1 for h in r.h_list), "resolvent.h_list entries must lie in (0, 1)")
        _require(r.z_halfwidth > 0, "resolvent.z_halfwidth must be positive")
        _require(0 < r.eps < r.delta1 / 4, "resolvent cutoffs need 0 < eps < delta1 / 4")
        _require(r.points_per_h >= 10, "resolvent.points_per_h must be >= 10 (dx <= h/10)")
        _require(r.x_max > model.flat_outer, "resolvent.x_max must exceed the outer flat radius")
        _require(model.profile_1.spec.inflection_point - 2 * r.delta1 > 0,
                 "resolvent.delta1: chi support reaches x = 0")
    if "commutant-test" in want:
        c = cfg.commutant
        _check_dyadic(c.h_list, "commutant.h_list", 3, decreasing=True)
        _require(len(c.garding_h_list) >= 2, "commutant.garding_h_list needs at least 2 values")
        _require(c.delta1 >= 4 * c.eps, "commutant.delta1 must be at least 4 eps")
        _require(c.states in ("quasimode", "coherent"), "commutant.states must be quasimode or coherent")
        _require(c.h_tilde_rule in ("fixed", "sqrt"), "commutant.h_tilde_rule must be fixed or sqrt")
        _require(model.profile_1.spec.inflection_order_m is not None,
                 "commutant-test needs an inflection on the first circle (manifold.m1)")
        for h in list(c.h_list) + list(c.garding_h_list):
            ht = c.h_tilde if c.h_tilde is not None else (np.sqrt(h) if c.h_tilde_rule == "sqrt" else 0.5)
            _require(0 < h < 1, f"commutant h = {h} must lie in (0, 1)")
            _require(ht / h >= 8, f"commutant: h_tilde / h = {ht / h:.3g} < 8 at h = {h}")
    return model, grid


# --- pipelines -----------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def run_manifold(cfg, model, grid, mapper):
    weight = wp.build_weight()
    out = {"profiles": {}, "constants": model.constants(), "weight_lower_bound": weight.lower_bound_const}
    ok = True
    for name, p in (("A1", model.profile_1), ("A2", model.profile_2)):
        rep = wp.validate_profile(p, x_max=cfg.grid.x_max)
        entry = {"profile": p.to_dict(), "validation": rep}
        if not p.spec.is_flat:
            entry["trapping_lower_bound"] = wp.trapping_lower_bound(p, weight)
        out["profiles"][name] = entry
        ok = ok and rep["ok"]
    x = grid.x
    V, V1, V2 = model.samples(grid)
    flat = (x <= model.flat_inner) | (x >= model.flat_outer)
    out["max_abs_V_flat"] = float(np.max(np.abs(V[flat])))
    out["V1_max_derivative"] = float(np.max(model.V1(x[x > 0.05], 1)))
    out["V2_max_derivative"] = float(np.max(model.V2(x[x > 0.05], 1)))
    out["all_valid"] = bool(ok and out["max_abs_V_flat"] <= 1e-9)
    A1 = wp.eval_profile(model.profile_1, x, 0)
    A2 = wp.eval_profile(model.profile_2, x, 0)
    table = _csv(["x", "A1", "A2", "V", "V1", "V2"], zip(x, A1, A2, V, V1, V2))
    xs = np.linspace(0.01, min(cfg.grid.x_max, 2 * model.flat_outer), 400)
    svg = line_plot({"data A1": (xs, wp.eval_profile(model.profile_1, xs, 0)),
                     "data A2": (xs, wp.eval_profile(model.profile_2, xs, 0)),
                     "theory A = x": (xs, xs)}, "warping functions", "x", "A(x)", markers=())
    return out, table, svg


def run_evolve(cfg, model, grid, mapper):
    d, e = cfg.evolve.data, cfg.evolve
    spec = ev.InitialDataSpec(d.kind, d.x0, d.width, d.k, d.n, d.seed, d.xi0, d.window_scale)
    ecfg = sm.EvolveConfig(e.T, e.dt, e.sponge, e.sponge_strength, e.energy_scaled, e.stop_below,
                           cfg.grid.stencil_order, e.weight_power)
    state = ev.make_initial_data(spec, model, grid, ecfg.stencil_order)
    lw = geo.LocalWeights.build(model, grid, ecfg.weight_power)
    funcs = {"weighted_h1": lambda u: lw.h1(u, state.k, state.n)}
    summ, E = sm._evolve_functionals(model, state, grid, ecfg, funcs)
    report = {"data": asdict(d), "energy": E, "integrals": summ.integrals,
              "max_boundary": summ.max_boundary, "final_time": summ.final.time,
              "final_norm": float(summ.norms[-1]), "stopped_early": summ.stopped_early}
    table = _csv(["t", "norm", "weighted_h1"],
                 zip(summ.times, summ.norms, summ.values["weighted_h1"]))
    svg = line_plot({"data norm": (summ.times, summ.norms)}, "mode norm", "t", "||u(t)||", markers=())
    return report, table, svg


def run_smoothing(cfg, model, grid, mapper):
    s, e = cfg.smoothing, cfg.evolve
    ecfg = sm.EvolveConfig(e.T, e.dt, e.sponge, e.sponge_strength, e.energy_scaled, e.stop_below,
                           cfg.grid.stencil_order, e.weight_power)
    fam = sm.DataFamily(**asdict(s.family))
    rep = sm.exponent_fit(model, fam, s.k_list, e.T, grid, ecfg, mapper, s.min_r2, s.s_list)
    cols = ["k", "n", "s_used", "lhs", "rhs", "quotient", "energy", "h_half", "t_final"]
    table = _csv(cols, ([getattr(r, c) for c in cols] for r in rep.records))
    ser = rep.plot_series()
    svg = line_plot({"data log G": ser["data"],
                     f"fit slope {rep.fit.slope:.3f}": ser["fit"],
                     f"theory slope {2 * rep.theory_exponent:.3f}": ser["theory"]},
                    "local smoothing: log G vs log k", "log k", "log G(k)")
    return rep.to_dict(), table, svg


def run_resolvent(cfg, model, grid, mapper):
    r = cfg.resolvent
    sc = rs.ScanConfig(tuple(r.h_list), r.n_probe, rs.CutoffSpec(r.delta1, r.eps, r.use_psi),
                       r.z_halfwidth, r.eta_power, r.x_max, r.points_per_h, r.absorber_strength,
                       r.v_sign)
    scan = rs.resolvent_scan_fit(model, sc, mapper, r.min_r2)
    rows = []
    for res in scan.results:
        rows.extend((res.h, z, res.n, v) for z, v in zip(res.z, res.norms))
        rows.append((res.h, res.z_best, res.n, res.sup_norm))
    table = _csv(["h", "z", "n", "norm"], rows)
    ser = scan.plot_series()
    svg = line_plot({"data log sup-norm": ser["data"],
                     f"fit slope {scan.fitted_slope:.3f}": ser["fit"],
                     f"theory slope {scan.theory_slope:.3f}": ser["theory"]},
                    "cutoff resolvent", "log(1/h)", "log sup-norm")
    return scan.to_dict(), table, svg


def run_commutant(cfg, model, grid, mapper):
    c = cfg.commutant
    xs = model.profile_1.spec.inflection_point
    m1 = model.profile_1.spec.inflection_order_m
    kw = dict(h_tilde=c.h_tilde, epsilon0=c.epsilon0, delta1=c.delta1, m1=m1, x_star=xs,
              h_tilde_rule=c.h_tilde_rule)
    sym = ml.build_commutant(c.h_list[0], **kw)
    sign = ml.commutant_sign_check(model, sym, eps=c.eps)
    reps, spread = ml.garding_sweep(model, c.garding_h_list, eps=c.eps, **kw)
    comm = ml.commutator_scaling_test(model, c.h_list, c.n_probe, c.states, c.h_tilde_rule,
                                      c.h_tilde, c.delta1, c.epsilon0, c.min_r2, mapper)
    report = {"symbol": sym.to_dict(), "sign_check": sign.to_dict(),
              "garding": {"records": [r.to_dict() for r in reps], "C_spread": spread},
              "commutator": comm.to_dict()}
    table = _csv(["h", "h_tilde", "Q", "Q_alt", "omega"],
                 ((r.h, r.h_tilde, r.Q, r.Q_alt, r.omega) for r in comm.records))
    lx = np.log(1 / np.asarray([r.h for r in comm.records]))
    ly = np.log([r.Q for r in comm.records])
    svg = line_plot({"data log Q": (lx, ly),
                     f"fit slope {comm.slope:.3f}": (lx, ly.mean() - comm.slope * (lx - lx.mean())),
                     f"theory slope {comm.theory_slope:.3f}":
                         (lx, ly.mean() - comm.theory_slope * (lx - lx.mean()))},
                    "commutator <i[P, a^w] v, v>", "log(1/h)", "log Q")
    return report, table, svg


PIPELINES = {"manifold": run_manifold, "evolve": run_evolve, "smoothing-scan": run_smoothing,
             "resolvent-scan": run_resolvent, "commutant-test": run_commutant}

NUMERICAL_ERRORS = (rs.NotConverged, sm.PoorFit, ev.NoEigenpair, ev.SolveFailure,
                    geo.NegativeOperator, ml.SignViolation, wp.NonpositiveBound,
                    np.linalg.LinAlgError, FloatingPointError, RuntimeError)


def execute(cfg, subcommand, jobs=1):
    """Validate, run, and return {filename: text} without touching the filesystem."""
    model, grid = validate(cfg, subcommand)
    names = [subcommand] if subcommand != "all" else [s for s in SUBCOMMANDS if s != "all"]
    h = cfg.hash()
    files = {}
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    mapper = pool.map if pool else map
    try:
        index = {}
        for name in names:
            report, table, svg = PIPELINES[name](cfg, model, grid, mapper)
            stem = f"{name}-{h}"
            payload = {"subcommand": name, "config_hash": h, "config": cfg.to_dict(), "report": report}
            if "json" in cfg.output.formats:
                files[stem + ".json"] = dumps(payload)
            if "csv" in cfg.output.formats:
                files[stem + ".csv"] = table
            if "svg" in cfg.output.formats:
                files[stem + ".svg"] = svg
            index[name] = stem
        if subcommand == "all" and "json" in cfg.output.formats:
            files[f"all-{h}.json"] = dumps({"subcommand": "all", "config_hash": h, "reports": index})
    finally:
        if pool:
            pool.shutdown()
    return files


def emit_report(files, directory):
    """Write every file or none: on failure the files already written are removed."""
    out = Path(directory)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(files):
            p = out / name
            with open(p, "w", newline="") as fh:
                fh.write(files[name])
            written.append(p)
    except OSError as exc:
        for p in written:
            p.unlink(missing_ok=True)
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def output_directory(cfg):
    return os.environ.get("WARPSMOOTH_OUT") or cfg.output.directory


def main(argv=None):
    ap = argparse.ArgumentParser(prog="warpsmooth", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key by dotted path (repeatable)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    args = ap.parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.set)
        files = execute(cfg, args.subcommand, args.jobs)
    except ConfigError as exc:
        print(f"warpsmooth: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"warpsmooth: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"warpsmooth: invalid input: {exc}", file=sys.stderr)
        return 2
    try:
        written = emit_report(files, output_directory(cfg))
    except OSError as exc:
        print(f"warpsmooth: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
