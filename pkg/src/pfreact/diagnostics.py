"""Discrete energy, species mass and dissipation of the implicit scheme.

The energy is itemized as the scheme pairs it: kinetic, mixing (with the
concentration-dependent factor), three entropies, penalty and adhesion.  The
dissipation terms are evaluated at level n+1 with the coefficients frozen at
level n exactly as in the residual, so that on closed boundaries

    E(n) - E(n+1) >= dt * (sum of dissipation terms)

up to the Newton tolerance.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import physics as ph
from .mesh import GridSpec
from .scheme import Discretization, State, StepReport

CSV_COLUMNS = ("t", "dt", "total_mass", "E_total", "E_kinetic", "E_mixing", "E_entropy1", "E_entropy2",
               "E_entropy3", "E_penalty", "E_adhesion", "D_viscous", "D_phase", "D_c1", "D_c2", "D_c3",
               "D_reaction", "newton_iters", "residual")


@dataclass
class Dissipation:
    viscous: float = 0.0
    phase: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    reaction: float = 0.0

    @property
    def total(self) -> float:
        return self.viscous + self.phase + self.c1 + self.c2 + self.c3 + self.reaction


@dataclass
class EnergyReport:
    kinetic: float
    mixing: float
    entropy1: float
    entropy2: float
    entropy3: float
    penalty: float
    adhesion: float
    mass_total: float
    dissipation: Dissipation

    @property
    def total(self) -> float:
        return (self.kinetic + self.mixing + self.entropy1 + self.entropy2 + self.entropy3
                + self.penalty + self.adhesion)


def _disc(g: GridSpec, disc: Discretization | None) -> Discretization:
    return disc if disc is not None else Discretization(g)


def total_mass(s: State, g: GridSpec) -> float:
    return float(g.cell_area * np.sum(s.c1 + s.c2 + s.c3))


def energy(s: State, p: ph.PhysParams, g: GridSpec, disc: Discretization | None = None,
           dissipation: Dissipation | None = None) -> EnergyReport:
    d = _disc(g, disc)
    area = g.cell_area
    U = s.u.compact(g)
    csum = s.c2 + s.c3 + 2.0
    return EnergyReport(
        kinetic=float(0.5 * p.re * np.sum(d.w * U * U)),
        mixing=float(area * np.sum(ph.lambda_of(s.c3, p) * ph.mixing_density(s.phi, p, g))),
        entropy1=float(area * np.sum(ph.entropy_density(s.c1))),
        entropy2=float(area * np.sum(ph.entropy_density(s.c2))),
        entropy3=float(area * np.sum(ph.entropy_density(s.c3))),
        penalty=float(area * np.sum(p.m_pen * s.phi ** 2 * csum)),
        adhesion=float(-area * np.sum(p.n_adh * ph.double_well(s.phi) * csum)),
        mass_total=total_mass(s, g),
        dissipation=dissipation if dissipation is not None else Dissipation(),
    )


def _species_fluxes(old: State, new: State, p: ph.PhysParams, d: Discretization):
    """Face diffusive fluxes ``k_f grad(mu_i)`` and advective face values of each species."""
    q = ph.permeability(old.c3.ravel(), p)
    coeff = (ph.d1_of(old.phi.ravel(), q, p), np.full(q.shape, p.d2), np.full(q.shape, p.d3))
    out = []
    for i, (c, m) in enumerate(zip(new.species(), (new.mu1, new.mu2, new.mu3))):
        kf = d.S.face(coeff[i] * (c.ravel() + 1.0))
        gm = d.mu_ops(i + 1).grad(m.ravel())
        cf = d.species_ops(i + 1).face(c.ravel())
        out.append((kf, gm, cf))
    return out


def dissipation(old: State, new: State, p: ph.PhysParams, g: GridSpec,
                disc: Discretization | None = None) -> Dissipation:
    d = _disc(g, disc)
    V = d.V
    U = new.u.compact(g)
    u = U[V.unk_idx]
    wu = d.w[V.unk_idx]
    visc = -float(np.sum(wu * u * (V.lap @ U + V.lap_off)))
    gm = d.S.grad(new.mu_phi.ravel())
    phase = float(p.mobility * np.sum(d.w * gm * gm))
    spec = [float(np.sum(d.w * kf * gmi * gmi) / p.pe) for kf, gmi, _ in _species_fluxes(old, new, p, d)]
    aff = ph.affinity(new.mu1, new.mu2, new.mu3, p)
    react = float(g.cell_area * np.sum(ph.proliferation(old.phi, p) * aff * aff))
    return Dissipation(visc, phase, spec[0], spec[1], spec[2], react)


def boundary_outflow(old: State, new: State, p: ph.PhysParams, g: GridSpec,
                     disc: Discretization | None = None) -> float:
    """Net rate at which total species mass leaves through the boundary at level n+1.

    On an accepted step, ``mass(n+1) - mass(n) = -dt * boundary_outflow``.
    """
    d = _disc(g, disc)
    U = new.u.compact(g)
    total = np.zeros(g.n_faces)
    for kf, gm, cf in _species_fluxes(old, new, p, d):
        total += U * cf - kf * gm / p.pe
    out = 0.0
    if not g.px:
        J = np.arange(g.ny)
        out += g.hy * (np.sum(total[g.nx * g.ny + J]) - np.sum(total[J]))
    if not g.py:
        base = g.n_xfaces + np.arange(g.nx) * g.nfy
        out += g.hx * (np.sum(total[base + g.ny]) - np.sum(total[base]))
    return float(out)


def check_budget(e_old: EnergyReport, e_new: EnergyReport, dt: float, slack: float) -> tuple[bool, float]:
    """Energy inequality ``E(n+1) - E(n) + dt * D <= slack``; returns (ok, excess)."""
    excess = e_new.total - e_old.total + dt * e_new.dissipation.total
    return excess <= slack, excess


class DiagLedger:
    """One row per time level, written as CSV with full double precision."""

    def __init__(self):
        self.rows: list[dict] = []

    def record(self, e: EnergyReport, t: float, dt: float, rep: StepReport | None = None) -> dict:
        dis = e.dissipation
        row = {
            "t": t, "dt": dt, "total_mass": e.mass_total, "E_total": e.total,
            "E_kinetic": e.kinetic, "E_mixing": e.mixing, "E_entropy1": e.entropy1,
            "E_entropy2": e.entropy2, "E_entropy3": e.entropy3, "E_penalty": e.penalty,
            "E_adhesion": e.adhesion, "D_viscous": dis.viscous, "D_phase": dis.phase,
            "D_c1": dis.c1, "D_c2": dis.c2, "D_c3": dis.c3, "D_reaction": dis.reaction,
            "newton_iters": rep.newton_iters if rep is not None else 0,
            "residual": rep.residual if rep is not None else 0.0,
        }
        self.rows.append(row)
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def write(self, path) -> None:
        write_diag_csv(path, self.rows)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17e}"


def write_diag_csv(path, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics CSV {path}: {exc}") from exc


def read_diag_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected diagnostics header {rd.fieldnames}")
        return [{k: (int(v) if k == "newton_iters" else float(v)) for k, v in r.items()} for r in rd]


def energy_dict(e: EnergyReport) -> dict:
    out = {f.name: getattr(e, f.name) for f in fields(e) if f.name != "dissipation"}
    out["total"] = e.total
    out["dissipation"] = asdict(e.dissipation)
    return out
