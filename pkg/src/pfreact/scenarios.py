"""Experiment definitions: configuration, initial data, boundary plans, time loop.

Scenario ids
    ``convergence``        circle in a periodic channel, used for the rate table
    ``shear``              ellipse in a shear flow, adsorption comparison
    ``vessel_straight``    straight vessel with inflow, outlet and a reactive hotspot
    ``vessel_bifurcated``  Y-shaped vessel, wall concentration at the bifurcation
    ``custom``             any of the above geometries chosen by ``base``
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .boundary import BoundaryPlan, side_length, wall_sides
from .io import write_snapshot
from .mesh import FaceField, GridSpec
from .physics import PhysParams
from .reduced import RateTable
from .scheme import SchemeConfig, SchemeError, State, Stepper, complete_potentials

log = logging.getLogger(__name__)

SCENARIOS = ("convergence", "shear", "vessel_straight", "vessel_bifurcated", "custom")
GEOMETRIES = SCENARIOS[:-1]
INVARIANT_MODES = ("off", "warn", "fail")


class ScenarioError(RuntimeError):
    """A run stopped early.  ``partial`` holds the RunResult up to the last accepted step."""

    def __init__(self, msg: str, partial: "RunResult | None" = None):
        super().__init__(msg)
        self.partial = partial


class InvariantViolation(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "convergence"
    base: str = "convergence"
    grid: GridSpec = field(default_factory=lambda: GridSpec(64, 64))
    phys: PhysParams = field(default_factory=PhysParams)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    t_final: float = 0.1
    output_every: int = 0
    snapshot_times: tuple = ()
    out_dir: str = "out"
    seed: int = 0
    check_invariants: str = "fail"
    # convergence geometry
    circle_x: float = 0.5
    circle_y: float = 0.5
    circle_r: float = 0.2
    c1_init: float = 2.0
    c2_init: float = 2.0
    c3_init: float = 0.2
    ladder: tuple = (4e-3, 2e-3, 1e-3, 5e-4)
    reference_dt: float = 1e-4
    # shear
    shear_rate: float = 10.0
    moving_walls: bool = False
    # vessels
    inlet_amp: float = 25.0
    inlet_c1: float = 2.0
    half_width: float = 0.2
    vessel_y: float = 1.0
    phase_level: float = 0.95
    hotspot_x: float = 1.0
    hotspot_y: float = 1.2
    hotspot_r: float = 0.08
    bifurcation_x: float = 0.5
    bifurcation_y: float = 1.0
    bifurcation_angle: float = 14.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario id {self.scenario!r}; expected one of {SCENARIOS}")
        if self.base not in GEOMETRIES:
            raise ValueError(f"unknown base geometry {self.base!r}")
        if self.check_invariants not in INVARIANT_MODES:
            raise ValueError(f"check_invariants must be one of {INVARIANT_MODES}")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if self.output_every < 0:
            raise ValueError("output_every must be nonnegative")

    @property
    def geometry(self) -> str:
        return self.base if self.scenario == "custom" else self.scenario

    @property
    def closed(self) -> bool:
        return boundary_plan(self).is_closed


def default_config(scenario: str) -> ScenarioConfig:
    """Reference settings of each experiment."""
    if scenario == "convergence":
        return ScenarioConfig(scenario="convergence", base="convergence",
                              phys=PhysParams(lambda0=0.05, q0=1.0), t_final=0.1)
    if scenario == "shear":
        return ScenarioConfig(scenario="shear", base="shear", phys=PhysParams(lambda0=0.0, q0=1.0),
                              t_final=0.1, snapshot_times=(0.03, 0.07, 0.1))
    if scenario in ("vessel_straight", "vessel_bifurcated"):
        return ScenarioConfig(scenario=scenario, base=scenario,
                              grid=GridSpec(64, 64, 2.0, 2.0, "wall", "wall"),
                              phys=PhysParams(lambda0=0.5, q_mode="affine", d1_plus=1.0, d1_minus=0.5),
                              scheme=SchemeConfig(dt=1e-2), t_final=3.0, snapshot_times=(1.0, 2.0, 3.0))
    if scenario == "custom":
        return replace(default_config("convergence"), scenario="custom")
    raise ValueError(f"unknown scenario id {scenario!r}")


# ----------------------------------------------------------------------------
# flat key = value configuration files

_NESTED = {"grid": GridSpec, "phys": PhysParams, "scheme": SchemeConfig}


def _flat_keys() -> dict[str, tuple[str | None, type]]:
    keys: dict[str, tuple[str | None, type]] = {}
    for f in fields(ScenarioConfig):
        if f.name in _NESTED:
            for sub in fields(_NESTED[f.name]):
                keys[sub.name] = (f.name, sub.type)
        else:
            keys[f.name] = (None, f.type)
    return keys


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from exc
    return raw


def serialize_config(cfg: ScenarioConfig) -> str:
    lines = [f"# pfreact scenario configuration", f"scenario = {cfg.scenario}"]
    for f in fields(cfg):
        if f.name == "scenario":
            continue
        val = getattr(cfg, f.name)
        if f.name in _NESTED:
            lines.append(f"# {f.name}")
            for sub in fields(val):
                lines.append(f"{sub.name} = {_format(getattr(val, sub.name))}")
        else:
            lines.append(f"{f.name} = {_format(val)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines; unspecified keys take the scenario defaults."""
    known = _flat_keys()
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = val
    cfg = default_config(entries.get("scenario", "convergence"))
    if "base" in entries and cfg.scenario == "custom":
        cfg = replace(default_config(entries["base"]), scenario="custom", base=entries["base"])
    top, nested = {}, {k: {} for k in _NESTED}
    for key, raw in entries.items():
        parent, _ = known[key]
        if parent is None:
            top[key] = _coerce(raw, getattr(cfg, key), key)
        else:
            nested[parent][key] = _coerce(raw, getattr(getattr(cfg, parent), key), key)
    for parent, upd in nested.items():
        if upd:
            top[parent] = replace(getattr(cfg, parent), **upd)
    return replace(cfg, **top)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# ----------------------------------------------------------------------------
# initial data and boundary plans

def _tanh_profile(d, eps):
    return np.tanh(d / (math.sqrt(2.0) * eps))


def _y_lumen_distance(cfg: ScenarioConfig, X, Y):
    """Approximate signed distance to the wall of a Y-shaped vessel, positive inside.

    The parent vessel runs along ``y = bifurcation_y`` up to ``x = bifurcation_x``;
    two daughter vessels of the same half-width leave at +/- the configured
    angle to the axis, their inner walls meeting at the bifurcation point.
    """
    w = cfg.half_width
    bx, by = cfg.bifurcation_x, cfg.bifurcation_y
    d = np.minimum(w - np.abs(Y - by), bx - X)
    th = math.radians(cfg.bifurcation_angle)
    for sgn in (1.0, -1.0):
        dx, dy = math.cos(th), sgn * math.sin(th)
        nx_, ny_ = -dy, dx
        # inner wall passes through the bifurcation point
        sx, sy = bx + sgn * w * nx_, by + sgn * w * ny_
        along = (X - sx) * dx + (Y - sy) * dy
        across = (X - sx) * nx_ + (Y - sy) * ny_
        d = np.maximum(d, np.minimum(w - np.abs(across), along))
    return d


def build_initial(cfg: ScenarioConfig, g: GridSpec | None = None) -> State:
    g = g if g is not None else cfg.grid
    p = cfg.phys
    X, Y = g.cell_centers()
    z = np.zeros((g.nx, g.ny))
    u = FaceField.zeros(g)
    geo = cfg.geometry
    if geo == "convergence":
        phi = _tanh_profile(cfg.circle_r - np.hypot(X - cfg.circle_x, Y - cfg.circle_y), p.eps)
        c1, c2, c3 = z + cfg.c1_init, z + cfg.c2_init, z + cfg.c3_init
    elif geo == "shear":
        r = np.sqrt((X - cfg.circle_x) ** 2 + (Y - cfg.circle_y) ** 2 / 2.0)
        phi = _tanh_profile(cfg.circle_r - r, p.eps)
        c1, c2, c3 = z + 0.2, 0.2 * (1.0 - np.abs(phi)), z.copy()
        _, yf = g.xface_centers()
        u.x[:] = cfg.shear_rate * (yf - 0.5 * g.ly)
    elif geo in ("vessel_straight", "vessel_bifurcated"):
        if geo == "vessel_straight":
            inside = np.abs(Y - cfg.vessel_y) <= cfg.half_width + 1e-12
            phi = np.where(inside, cfg.phase_level, -cfg.phase_level)
        else:
            phi = _tanh_profile(_y_lumen_distance(cfg, X, Y), p.eps)
        hot = np.tanh((cfg.hotspot_r - np.hypot(X - cfg.hotspot_x, Y - cfg.hotspot_y))
                      / (math.sqrt(2.0) * p.eps)) + 1.2
        c1, c2, c3 = hot.copy(), hot.copy(), z.copy()
    else:
        raise ValueError(f"unknown scenario id {geo!r}")
    bc = boundary_plan(cfg, g)
    _apply_normal_bc(u, bc, g)
    s = State(0.0, u, z.copy(), phi, z.copy(), c1, z.copy(), c2, z.copy(), c3, z.copy())
    return complete_potentials(s, p, g)


def _apply_normal_bc(u: FaceField, bc: BoundaryPlan, g: GridSpec) -> None:
    for side, vals in bc.normal.items():
        v = np.nan_to_num(np.asarray(vals, dtype=float), nan=0.0)
        if side == "left":
            u.x[0, :] = np.where(np.isnan(vals), u.x[0, :], v)
        elif side == "right":
            u.x[-1, :] = np.where(np.isnan(vals), u.x[-1, :], v)
        elif side == "bottom":
            u.y[:, 0] = np.where(np.isnan(vals), u.y[:, 0], v)
        else:
            u.y[:, -1] = np.where(np.isnan(vals), u.y[:, -1], v)


def boundary_plan(cfg: ScenarioConfig, g: GridSpec | None = None) -> BoundaryPlan:
    g = g if g is not None else cfg.grid
    bc = BoundaryPlan.closed(g)
    geo = cfg.geometry
    if geo == "shear" and cfg.moving_walls:
        if g.bc_y != "wall":
            raise ValueError("moving walls need a wall family on the y axis")
        bc.tangential["bottom"] = -0.5 * cfg.shear_rate * g.ly
        bc.tangential["top"] = 0.5 * cfg.shear_rate * g.ly
    if geo in ("vessel_straight", "vessel_bifurcated"):
        if g.bc_x != "wall" or g.bc_y != "wall":
            raise ValueError("vessel scenarios need wall families on both axes")
        yc = (np.arange(g.ny) + 0.5) * g.hy
        lo, hi = cfg.vessel_y - cfg.half_width, cfg.vessel_y + cfg.half_width
        strip = (yc >= lo) & (yc <= hi)
        # inflow in +x; the profile vanishes at the strip ends
        bc.normal["left"] = np.where(strip, cfg.inlet_amp * (yc - lo) * (hi - yc), 0.0)
        bc.scalar["c1"] = {"left": np.where(strip, cfg.inlet_c1, np.nan)}
        if geo == "vessel_straight":
            outlet = strip
        else:
            outlet = _y_lumen_distance(cfg, np.full(g.ny, g.lx), yc) > 0
        if not outlet.any():
            raise ValueError("vessel geometry does not reach the outlet boundary")
        bc.normal["right"] = np.where(outlet, np.nan, 0.0)
    for side in wall_sides(g):
        assert bc.normal[side].shape == (side_length(g, side),)
    return bc


# ----------------------------------------------------------------------------
# observables

def band_mass_fraction(c: np.ndarray, phi: np.ndarray, band: float) -> float:
    """Share of the excess ``max(c, 0)`` lying where ``|phi| < band``.

    Concentrations are shifted by the reference state, so ``c`` can dip below
    zero; the signed sum can then vanish and its ratio is meaningless.
    """
    c = np.maximum(c, 0.0)
    total = float(np.sum(c))
    if total == 0.0:
        return math.nan
    return float(np.sum(c[np.abs(phi) < band])) / total


def upper_interface_height(s: State, g: GridSpec, x0: float = 1.0, halfwidth: float = 0.1,
                           y_from: float = 1.0) -> float:
    """Highest zero crossing of ``phi`` above ``y_from`` over the columns within ``halfwidth`` of ``x0``."""
    X, Y = g.cell_centers()
    cols = np.flatnonzero(np.abs(X[:, 0] - x0) <= halfwidth + 1e-12)
    yc = Y[0]
    best = math.nan
    for i in cols:
        f = s.phi[i]
        j = int(np.searchsorted(yc, y_from))
        while j + 1 < g.ny and not (f[j] > 0 >= f[j + 1]):
            j += 1
        if j + 1 >= g.ny:
            continue
        h = yc[j] + (yc[j + 1] - yc[j]) * f[j] / (f[j] - f[j + 1])
        best = h if math.isnan(best) else max(best, h)
    return best


def wall_band_peak(s: State, g: GridSpec, center: tuple[float, float], radius: float,
                   band: float = 0.9) -> float:
    """Maximum of ``c3`` over the wall band ``|phi| < band`` inside a disk."""
    X, Y = g.cell_centers()
    mask = (np.hypot(X - center[0], Y - center[1]) <= radius) & (np.abs(s.phi) < band)
    if not mask.any():
        return math.nan
    return float(np.max(s.c3[mask]))


def bifurcation_extraction(s: State, cfg: ScenarioConfig) -> float:
    return wall_band_peak(s, cfg.grid, (cfg.bifurcation_x, cfg.bifurcation_y), 2.0 * cfg.phys.eps, 0.9)


EXTRACTION_NOTE = ("max of c3 over cells with |phi| < 0.9 within distance 2*eps "
                   "of the bifurcation point")


# ----------------------------------------------------------------------------
# time loop

@dataclass
class RunResult:
    config: ScenarioConfig
    final: State
    ledger: dg.DiagLedger
    snapshots: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    outflow: list = field(default_factory=list)
    violations: list = field(default_factory=list)


def n_steps(t_final: float, dt: float) -> int:
    n = round(t_final / dt)
    if n < 1 or abs(n * dt - t_final) > 1e-9 * t_final:
        raise ValueError(f"t_final = {t_final} is not a positive multiple of dt = {dt}")
    return n


def _flag(mode: str, msg: str, res: RunResult) -> None:
    res.violations.append(msg)
    if mode == "fail":
        raise InvariantViolation(msg, partial=res)
    if mode == "warn":
        log.warning(msg)


def simulate(cfg: ScenarioConfig, write: bool = True, keep_times=(), progress=None) -> RunResult:
    """Run the time loop of one configuration.

    ``keep_times`` lists times whose states are returned in ``RunResult.states``
    (in addition to the configured snapshot times).
    """
    g, p, sc = cfg.grid, cfg.phys, cfg.scheme
    bc = boundary_plan(cfg, g)
    s = build_initial(cfg, g)
    stepper = Stepper(g, p, sc, bc)
    disc = stepper.disc
    closed = bc.is_closed
    mode = cfg.check_invariants
    nsteps = n_steps(cfg.t_final, sc.dt)
    out = Path(cfg.out_dir)
    ledger = dg.DiagLedger()
    e_old = dg.energy(s, p, g, disc)
    ledger.record(e_old, s.t, sc.dt)
    mass0 = e_old.mass_total
    res = RunResult(cfg, s, ledger)
    want = sorted(set(cfg.snapshot_times) | set(keep_times))
    want_steps = {n_steps(t, sc.dt): t for t in want if t > 0}
    meta = {"scenario": cfg.scenario, "geometry": cfg.geometry, "config": serialize_config(cfg)}
    if cfg.geometry == "vessel_bifurcated":
        meta["extraction"] = EXTRACTION_NOTE

    def snap(state, k):
        if not write:
            return
        path = write_snapshot(state, g, out / f"snap_{k:06d}.vtk", dict(meta, step=k))
        res.snapshots.append(path)

    if write:
        out.mkdir(parents=True, exist_ok=True)
        snap(s, 0)
    for k in range(1, nsteps + 1):
        res.final = s
        try:
            new, rep = stepper.step(s)
        except SchemeError as exc:
            dump = None
            if write:
                dump = write_snapshot(s, g, out / f"failed_before_step_{k:06d}.vtk", dict(meta, step=k - 1))
                ledger.write(out / "diagnostics.csv")
            raise ScenarioError(f"step {k} (t = {s.t + sc.dt:.6g}) failed: {exc}; state dump: {dump}",
                                partial=res) from exc
        dis = dg.dissipation(s, new, p, g, disc)
        e_new = dg.energy(new, p, g, disc, dis)
        if mode != "off":
            div = float(np.max(np.abs(disc.D @ new.u.compact(g))))
            if div > 10 * sc.lin_tol:
                _flag(mode, f"step {k}: discrete divergence {div:.3e} exceeds {10 * sc.lin_tol:.1e}", res)
            if closed:
                drift = abs(e_new.mass_total - mass0) / max(abs(mass0), 1e-300)
                if drift > 1e-8:
                    _flag(mode, f"step {k}: relative mass drift {drift:.3e}", res)
                rise = e_new.total - e_old.total
                if rise > 10 * sc.newton_tol:
                    _flag(mode, f"step {k}: energy increased by {rise:.3e}", res)
            else:
                flux = dg.boundary_outflow(s, new, p, g, disc)
                res.outflow.append((new.t, flux))
                imbalance = e_new.mass_total - e_old.mass_total + sc.dt * flux
                if abs(imbalance) > 1e-8 * max(1.0, abs(e_new.mass_total)):
                    _flag(mode, f"step {k}: species mass balance off by {imbalance:.3e}", res)
        ledger.record(e_new, new.t, sc.dt, rep)
        if k in want_steps:
            res.states[want_steps[k]] = new
        if (cfg.output_every and k % cfg.output_every == 0) or k in want_steps:
            snap(new, k)
        if progress is not None:
            progress(k, nsteps, new, rep)
        s, e_old = new, e_new
    res.final = s
    if write:
        ledger.write(out / "diagnostics.csv")
        info = dict(meta, steps=nsteps, t_final=s.t, violations=res.violations,
                    snapshots=[str(pth) for pth in res.snapshots])
        if cfg.geometry == "vessel_bifurcated":
            info["extraction_value"] = bifurcation_extraction(s, cfg)
        (out / "run.json").write_text(json.dumps(info, indent=2, default=str))
        if res.outflow:
            np.savetxt(out / "boundary_outflow.csv", np.array(res.outflow), delimiter=",",
                       header="t,species_outflow_rate", comments="", fmt="%.17e")
    return res


# ----------------------------------------------------------------------------
# temporal convergence of the full scheme

TABLE_FIELDS = ("u", "phi", "c1", "c2", "c3")


def l2_errors(s: State, ref: State, g: GridSpec) -> dict[str, float]:
    from .mesh import face_weights
    w = face_weights(g)
    eU = s.u.compact(g) - ref.u.compact(g)
    out = {"u": math.sqrt(float(np.sum(w * eU * eU)))}
    for nm in TABLE_FIELDS[1:]:
        e = getattr(s, nm) - getattr(ref, nm)
        out[nm] = math.sqrt(g.cell_area * float(np.sum(e * e)))
    return out


def rate_table_from_finals(finals: dict[float, State], ref: State, g: GridSpec) -> RateTable:
    dts = sorted(finals, reverse=True)
    errs = {f"err_{nm}_L2": [] for nm in TABLE_FIELDS}
    for dt in dts:
        e = l2_errors(finals[dt], ref, g)
        for nm in TABLE_FIELDS:
            errs[f"err_{nm}_L2"].append(e[nm])
    return RateTable(dts, errs)


def convergence_rates(cfg: ScenarioConfig, progress=None) -> tuple[RateTable, dict[float, RunResult]]:
    """Reference run plus the dt ladder, all without file output."""
    ladder = sorted(cfg.ladder, reverse=True)
    if not cfg.reference_dt < min(ladder):
        raise ValueError("reference_dt must be below every ladder step")
    runs = {}
    for dt in [cfg.reference_dt] + ladder:
        c = replace(cfg, scheme=replace(cfg.scheme, dt=dt))
        runs[dt] = simulate(c, write=False, progress=progress)
    table = rate_table_from_finals({dt: runs[dt].final for dt in ladder}, runs[cfg.reference_dt].final, cfg.grid)
    return table, runs


def config_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
