"""Reduced model: Navier-Stokes / Cahn-Hilliard with one reacting species.

The species follows advection-diffusion with the sink ``P(phi) ln(c + 1)``
and drives the flow through ``-grad c``; the interface energy factor is 1.
The time discretization mirrors the full scheme (linear stabilization of the
truncated double well, lagged advecting velocity, lagged phase in the
capillary force).  :func:`convergence_study` measures self-convergence
against a fine-step reference run on the same grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import physics as ph
from .boundary import BoundaryPlan
from .mesh import FaceField, GridSpec
from .scheme import Discretization, PositivityLost, SchemeConfig, newton_solve, pressure_pin

RED_FIELDS = ("p", "phi", "mu", "c")


@dataclass(frozen=True)
class ReducedParams:
    re: float = 1.0
    mobility: float = 0.05
    eps: float = 0.05
    s_stab: float = 8.0
    d_c: float = 1.0
    k_rate: float = 1.0
    f_trunc: float = 1.2

    def __post_init__(self):
        if not (self.re > 0 and self.eps > 0):
            raise ValueError("re and eps must be positive")
        if self.mobility < 0 or self.d_c < 0 or self.k_rate < 0:
            raise ValueError("mobility, d_c and k_rate must be nonnegative")
        if self.f_trunc < 1.0:
            raise ValueError("truncation radius must be at least 1")
        if not self.s_stab > 2.0 * self.lipschitz:
            raise ValueError(f"s_stab = {self.s_stab} must exceed 2L = {2.0 * self.lipschitz}")

    @property
    def lipschitz(self) -> float:
        return 3.0 * self.f_trunc ** 2 - 1.0

    def prolif(self, phi):
        return ph.proliferation(phi, self)


@dataclass
class ReducedState:
    t: float
    u: FaceField
    p: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    c: np.ndarray

    def copy(self) -> "ReducedState":
        return ReducedState(self.t, self.u.copy(), self.p.copy(), self.phi.copy(), self.mu.copy(), self.c.copy())


class ReducedStepper:
    """Newton solver of one reduced step on a closed (periodic / no-slip) grid."""

    def __init__(self, g: GridSpec, prm: ReducedParams, cfg: SchemeConfig):
        self.g, self.prm, self.cfg = g, prm, cfg
        self.disc = d = Discretization(g, BoundaryPlan.closed(g))
        n, N = d.V.n_unk, d.N
        self.sizes = [n, N, N, N, N]
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        self.sl = {nm: slice(int(off[k]), int(off[k + 1])) for k, nm in enumerate(("u",) + RED_FIELDS)}
        self.size = int(off[-1])
        self._lap_s = d.D @ d.S.G

    def pack(self, s: ReducedState) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.sl["u"]] = s.u.compact(self.g)[self.disc.V.unk_idx]
        for nm in RED_FIELDS:
            x[self.sl[nm]] = getattr(s, nm).ravel()
        x[self.sl["p"]] -= x[self.sl["p"]][0]
        return x

    def unpack(self, x: np.ndarray, t: float) -> ReducedState:
        g = self.g
        U = self.disc.V.full(x[self.sl["u"]])
        out = ReducedState(t, FaceField.from_compact(U, g),
                           *(x[self.sl[nm]].reshape(g.nx, g.ny).copy() for nm in RED_FIELDS))
        out.p -= out.p.mean()
        return out

    def freeze(self, old: ReducedState) -> dict:
        d = self.disc
        U0 = old.u.compact(self.g)
        phi0 = old.phi.ravel()
        return {"U0": U0, "u0": U0[d.V.unk_idx], "conv": d.V.conv(U0), "phi0": phi0,
                "phif0": d.S.face(phi0), "dF0": ph.f_trunc(phi0, self.prm.f_trunc).d1,
                "P0": self.prm.prolif(phi0), "c0": old.c.ravel()}

    def residual(self, x, fz, dt):
        d, q, V = self.disc, self.prm, self.disc.V
        f = {nm: x[s] for nm, s in self.sl.items()}
        c = f["c"]
        if np.min(c) + 1.0 < self.cfg.c_floor:
            raise PositivityLost("reduced concentration below the positivity floor")
        U = V.full(f["u"])
        gmu = d.S.grad(f["mu"])
        force = fz["phif0"] * gmu + d.S.grad(c)
        r_u = f["u"] - fz["u0"] + dt * (fz["conv"] @ U - (V.lap @ U + V.lap_off) / q.re
                                        + V.gradp @ f["p"] + force[V.unk_idx])
        r_div = d.D @ U
        r_div[0] += f["p"][0]
        r_phi = f["phi"] - fz["phi0"] + dt * (d.D @ (U * fz["phif0"]) - q.mobility * (d.D @ gmu))
        r_mu = f["mu"] - (-q.eps ** 2 * (self._lap_s @ f["phi"]) + fz["dF0"]
                          + q.s_stab * (f["phi"] - fz["phi0"]))
        r_c = c - fz["c0"] + dt * (d.D @ (U * d.S.face(c)) - q.d_c * (self._lap_s @ c)
                                    + fz["P0"] * np.log1p(c))
        return np.concatenate([r_u, r_div, r_phi, r_mu, r_c])

    def jacobian(self, x, fz, dt):
        d, q, V = self.disc, self.prm, self.disc.V
        f = {nm: x[s] for nm, s in self.sl.items()}
        N, n = d.N, V.n_unk
        U = V.full(f["u"])
        I = sp.identity(N, format="csr")
        Dg = sp.diags
        R = V.R
        B = [[None] * 5 for _ in range(5)]
        B[0][0] = sp.identity(n, format="csr") + dt * ((fz["conv"] - V.lap / q.re) @ V.P)
        B[0][1] = dt * V.gradp
        B[0][3] = dt * (R @ Dg(fz["phif0"]) @ d.S.G)
        B[0][4] = dt * (R @ d.S.G)
        B[1][0] = d.D @ V.P
        B[2][0] = dt * (d.D @ Dg(fz["phif0"]) @ V.P)
        B[2][2] = I
        B[2][3] = -dt * q.mobility * self._lap_s
        B[3][2] = q.eps ** 2 * self._lap_s - q.s_stab * I
        B[3][3] = I
        B[4][0] = dt * (d.D @ Dg(d.S.face(f["c"])) @ V.P)
        B[4][4] = I + dt * (d.D @ Dg(U) @ d.S.A - q.d_c * self._lap_s + Dg(fz["P0"] / (1.0 + f["c"])))
        B[1][1] = pressure_pin(N, True)
        return sp.bmat(B, format="csc")

    def step(self, old: ReducedState, dt: float | None = None) -> ReducedState:
        dt = self.cfg.dt if dt is None else dt
        fz = self.freeze(old)

        def max_step(x, dx):
            c, dc = x[self.sl["c"]], dx[self.sl["c"]]
            neg = dc < 0
            if not np.any(neg):
                return 1.0
            return float(min(1.0, np.min((c[neg] + 1.0 - self.cfg.c_floor) / -dc[neg])))

        res = newton_solve(lambda z: self.residual(z, fz, dt), lambda z: self.jacobian(z, fz, dt),
                           self.pack(old), tol=self.cfg.newton_tol, max_iter=self.cfg.newton_max,
                           solve=lambda A, r, z: sla.splu(A, permc_spec="COLAMD").solve(r),
                           max_step=max_step, backtrack=self.cfg.armijo)
        return self.unpack(res.x, old.t + dt)


def reduced_step(old: ReducedState, params: ReducedParams, cfg: SchemeConfig, g: GridSpec) -> ReducedState:
    return ReducedStepper(g, params, cfg).step(old)


def reduced_energy(s: ReducedState, prm: ReducedParams, g: GridSpec, disc: Discretization | None = None) -> float:
    d = disc if disc is not None else Discretization(g)
    U = s.u.compact(g)
    gphi = d.S.grad(s.phi.ravel())
    return float(0.5 * np.sum(d.w * U * U) + 0.5 * prm.eps ** 2 * np.sum(d.w * gphi * gphi)
                 + g.cell_area * np.sum(ph.f_trunc(s.phi, prm.f_trunc).value + ph.entropy_density(s.c)))


def complete_mu(s: ReducedState, prm: ReducedParams, g: GridSpec) -> ReducedState:
    """Copy of ``s`` with the phase potential evaluated at equilibrium form."""
    d = Discretization(g)
    out = s.copy()
    lap = (d.D @ d.S.grad(s.phi.ravel())).reshape(g.nx, g.ny)
    out.mu = -prm.eps ** 2 * lap + ph.f_trunc(s.phi, prm.f_trunc).d1
    return out


def smooth_initial(g: GridSpec, prm: ReducedParams) -> ReducedState:
    """Smooth data compatible with periodic x and no-flux walls in y."""
    X, Y = g.cell_centers()
    kx = 2 * np.pi / g.lx
    ky = np.pi / g.ly
    phi = 0.4 * np.cos(kx * X) * np.cos(ky * Y) + 0.1
    c = 0.5 + 0.3 * np.sin(kx * X) * np.cos(ky * Y)
    z = np.zeros((g.nx, g.ny))
    return complete_mu(ReducedState(0.0, FaceField.zeros(g), z, phi, z.copy(), c), prm, g)


# ----------------------------------------------------------------------------
# convergence harness

NORMS = ("err_u_H1", "err_phi_H1", "err_c_L2", "acc_u_H2", "acc_p_H1", "acc_mu_H1semi", "acc_c_H1semi")


@dataclass
class RateTable:
    dts: list[float]
    errors: dict[str, list[float]]
    orders: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.dts, self.dts[1:])):
            raise ValueError("rate table time steps must be strictly decreasing")
        if not self.orders:
            self.orders = {k: observed_orders(self.dts, v) for k, v in self.errors.items()}

    def write_csv(self, path, interleave: bool = False) -> None:
        write_rate_table(path, self.dts, self.errors, self.orders, interleave)


def observed_orders(dts, errs) -> list[float]:
    """Orders from consecutive rows; the first row has none (NaN)."""
    out = [math.nan]
    for k in range(1, len(dts)):
        e0, e1 = errs[k - 1], errs[k]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(dts[k - 1] / dts[k]))
        else:
            out.append(math.nan)
    return out


def write_rate_table(path, dts, errors: dict, orders: dict, interleave: bool = False) -> None:
    """Rate table CSV; ``interleave`` places each order column right after its error column."""
    keys = list(errors)

    def order(k, i):
        return "" if math.isnan(orders[k][i]) else f"{orders[k][i]:.6f}"

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if interleave:
                w.writerow(["dt"] + [c for k in keys for c in (k, f"order_{k}")])
                for i, dt in enumerate(dts):
                    w.writerow([f"{dt:.17e}"] + [c for k in keys for c in (f"{errors[k][i]:.17e}", order(k, i))])
                return
            w.writerow(["dt"] + keys + [f"order_{k}" for k in keys])
            for i, dt in enumerate(dts):
                w.writerow([f"{dt:.17e}"] + [f"{errors[k][i]:.17e}" for k in keys] + [order(k, i) for k in keys])
    except OSError as exc:
        raise OSError(f"cannot write rate table {path}: {exc}") from exc


class _Norms:
    def __init__(self, g: GridSpec):
        self.g = g
        self.d = Discretization(g)

    def cell_l2(self, e):
        return float(self.g.cell_area * np.sum(e * e))

    def cell_h1semi(self, e):
        ge = self.d.S.grad(np.ravel(e))
        return float(np.sum(self.d.w * ge * ge))

    def vel_l2(self, E):
        return float(np.sum(self.d.w * E * E))

    def vel_h1semi(self, E):
        V = self.d.V
        return -float(np.sum(self.d.w[V.unk_idx] * E[V.unk_idx] * (V.lap @ E)))

    def vel_lap(self, E):
        V = self.d.V
        le = V.lap @ E
        return float(np.sum(self.d.w[V.unk_idx] * le * le))


def _run(stepper: ReducedStepper, s0: ReducedState, dt: float, nsteps: int, keep_every: int | None = None):
    s = s0
    traj = [s0]
    for k in range(1, nsteps + 1):
        s = stepper.step(s, dt)
        if keep_every is not None and k % keep_every == 0:
            traj.append(s)
    return s, traj


def _nsteps(T: float, dt: float) -> int:
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * T:
        raise ValueError(f"final time {T} is not a multiple of dt = {dt}")
    return n


def convergence_study(g: GridSpec, params: ReducedParams, dts, reference_dt: float, T: float = 0.04,
                      initial: ReducedState | None = None, cfg: SchemeConfig | None = None) -> RateTable:
    """Self-convergence of the reduced scheme against a fine-step reference."""
    dts = [float(v) for v in dts]
    if not reference_dt < min(dts) / 4:
        raise ValueError("reference_dt must be smaller than min(dts) / 4")
    cfg = cfg if cfg is not None else SchemeConfig(dt=reference_dt, lin_solver="direct")
    s0 = initial if initial is not None else smooth_initial(g, params)
    stepper = ReducedStepper(g, params, cfg)
    base = min(dts)
    stride = round(base / reference_dt)
    if abs(stride * reference_dt - base) > 1e-9 * base:
        raise ValueError("min(dts) must be an integer multiple of reference_dt")
    counts = {dt: _nsteps(T, dt) for dt in dts}
    try:
        _, ref = _run(stepper, s0, reference_dt, _nsteps(T, reference_dt), keep_every=stride)
    except Exception as exc:
        raise RuntimeError(f"reference run failed: {exc}") from exc
    nm = _Norms(g)
    errors = {k: [] for k in NORMS}
    for dt in sorted(dts, reverse=True):
        every = round(dt / base)
        if abs(every * base - dt) > 1e-9 * dt:
            raise ValueError("every dt must be an integer multiple of min(dts)")
        _, traj = _run(stepper, s0, dt, counts[dt], keep_every=1)
        acc = dict.fromkeys(NORMS[3:], 0.0)
        for k in range(1, len(traj)):
            r, s = ref[k * every], traj[k]
            eU = s.u.compact(g) - r.u.compact(g)
            acc["acc_u_H2"] += dt * nm.vel_lap(eU)
            ep = s.p - r.p
            acc["acc_p_H1"] += dt * (nm.cell_l2(ep) + nm.cell_h1semi(ep))
            acc["acc_mu_H1semi"] += dt * nm.cell_h1semi(s.mu - r.mu)
            acc["acc_c_H1semi"] += dt * nm.cell_h1semi(s.c - r.c)
        r, s = ref[-1], traj[-1]
        eU = s.u.compact(g) - r.u.compact(g)
        ephi = s.phi - r.phi
        errors["err_u_H1"].append(math.sqrt(nm.vel_l2(eU) + nm.vel_h1semi(eU)))
        errors["err_phi_H1"].append(math.sqrt(nm.cell_l2(ephi) + nm.cell_h1semi(ephi)))
        errors["err_c_L2"].append(math.sqrt(nm.cell_l2(s.c - r.c)))
        for k, v in acc.items():
            errors[k].append(math.sqrt(v))
    return RateTable(sorted(dts, reverse=True), errors)
