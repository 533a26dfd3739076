"""Monolithic implicit first-order time step and its Newton solver.

All ten fields of level n+1 are solved simultaneously.  The evolution
equations enter the residual multiplied by ``dt``; the continuity rows are
left unscaled so the converged residual bounds the discrete divergence
directly.  On domains without a pressure outlet the continuity equations are
linearly dependent (their sum is the net boundary flux, which is zero), so the
first one is replaced by the pin ``div(u)[0] + p[0] = 0``; at a solution this
forces ``p[0] = 0`` while the remaining rows still imply the dropped equation.
Pressure only enters through its gradient, so the accepted state is shifted to
``mean(p) = 0`` afterwards.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import physics as ph
from .boundary import BoundaryPlan
from .mesh import (FaceField, GridSpec, VelocityOps, check_scalar, divergence_matrix,
                   face_weights, scalar_ops, square_average_matrix)

SCALARS = ("p", "phi", "mu_phi", "c1", "mu1", "c2", "mu2", "c3", "mu3")
SPECIES = ("c1", "c2", "c3")


class SchemeError(RuntimeError):
    """Base class of time-step failures."""


class NewtonDiverged(SchemeError):
    pass


class PositivityLost(SchemeError):
    pass


class LinearSolveFailed(SchemeError):
    pass


@dataclass
class State:
    t: float
    u: FaceField
    p: np.ndarray
    phi: np.ndarray
    mu_phi: np.ndarray
    c1: np.ndarray
    mu1: np.ndarray
    c2: np.ndarray
    mu2: np.ndarray
    c3: np.ndarray
    mu3: np.ndarray

    def check(self, g: GridSpec) -> None:
        self.u.check(g)
        for name in SCALARS:
            check_scalar(getattr(self, name), g, name)

    def copy(self) -> "State":
        return State(self.t, self.u.copy(), *(getattr(self, n).copy() for n in SCALARS))

    def species(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.c1, self.c2, self.c3


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 1e-3
    newton_tol: float = 1e-10
    newton_max: int = 50
    c_floor: float = 1e-8
    lin_tol: float = 1e-10
    lin_max: int = 200
    lin_rtol: float = 1e-4
    jac_mode: str = "analytic"
    lin_solver: str = "krylov"
    armijo: float = 0.5
    step_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.c_floor < 1e-2:
            raise ValueError("c_floor must lie in (0, 1e-2)")
        if not self.newton_tol > 0 or not self.lin_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.newton_max < 1 or self.lin_max < 1:
            raise ValueError("iteration limits must be positive")
        if self.jac_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jac_mode {self.jac_mode!r}")
        if self.lin_solver not in ("direct", "krylov"):
            raise ValueError(f"unknown lin_solver {self.lin_solver!r}")
        if not self.step_tol >= 0:
            raise ValueError("step_tol must be nonnegative")
        if not 0 < self.armijo < 1:
            raise ValueError("armijo backtracking factor must lie in (0, 1)")


@dataclass
class StepReport:
    newton_iters: int = 0
    residual: float = np.inf
    linear_iters: int = 0
    factorizations: int = 0
    wall_time: float = 0.0


# ----------------------------------------------------------------------------
# Newton iteration

@dataclass
class NewtonResult:
    x: np.ndarray
    iters: int
    residual: float
    history: list = field(default_factory=list)


def newton_solve(residual, jacobian, guess, *, tol=1e-10, max_iter=50, solve=None,
                 max_step=None, backtrack=0.5, min_alpha=2.0 ** -30, step_tol=0.0) -> NewtonResult:
    """Damped Newton iteration with Armijo backtracking on the 2-norm of the residual.

    ``solve(J, r, x)`` returns the Newton correction for the system ``J dx = r``
    (default: sparse/dense direct solve).  ``max_step(x, dx)`` bounds the step
    length, e.g. to keep iterates inside the domain of a logarithm.
    Convergence is declared when the infinity norm of the residual is at most
    ``tol``.  If the line search cannot reduce the residual any further and the
    full correction is below ``step_tol * max(1, |x|_inf)``, the residual has
    reached its rounding floor and the iterate is accepted as well.
    """
    x = np.array(guess, dtype=float, copy=True)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)

    def F(z):
        return np.atleast_1d(np.asarray(residual(z[0] if scalar else z), dtype=float))

    def J(z):
        jac = jacobian(z[0] if scalar else z)
        return np.atleast_2d(jac) if not sp.issparse(jac) else jac

    if solve is None:
        def solve(A, r, z):
            if sp.issparse(A):
                return sla.spsolve(A.tocsc(), r)
            return np.linalg.solve(A, r)

    r = F(x)
    hist = [float(np.max(np.abs(r)))]
    for it in range(max_iter + 1):
        if hist[-1] <= tol:
            return NewtonResult(x[0] if scalar else x, it, hist[-1], hist)
        if it == max_iter:
            break
        dx = -np.atleast_1d(solve(J(x), r, x))
        if not np.all(np.isfinite(dx)):
            raise NewtonDiverged("non-finite Newton correction")
        alpha = 1.0 if max_step is None else min(1.0, max_step(x, dx))
        norm0 = np.linalg.norm(r)
        while True:
            if alpha < min_alpha:
                step = float(np.max(np.abs(dx)))
                if step <= step_tol * max(1.0, float(np.max(np.abs(x)))):
                    return NewtonResult(x[0] if scalar else x, it, hist[-1], hist)
                raise NewtonDiverged(f"line search failed at iteration {it}, residual {hist[-1]:.3e}, "
                                     f"correction {step:.3e}")
            xt = x + alpha * dx
            try:
                rt = F(xt)
            except PositivityLost:
                rt = None
            if rt is not None and np.all(np.isfinite(rt)) and \
                    np.linalg.norm(rt) <= (1.0 - 1e-4 * alpha) * norm0:
                break
            alpha *= backtrack
        x, r = xt, rt
        hist.append(float(np.max(np.abs(r))))
    raise NewtonDiverged(f"no convergence in {max_iter} iterations, residual {hist[-1]:.3e}")


# ----------------------------------------------------------------------------
# discretization bundle

class Discretization:
    """Operators of one grid and boundary plan, shared by the scheme and diagnostics."""

    def __init__(self, g: GridSpec, bc: BoundaryPlan | None = None):
        self.g = g
        self.bc = bc if bc is not None else BoundaryPlan.closed(g)
        self.bc.validate(g)
        self.V = VelocityOps(g, self.bc)
        self.S = scalar_ops(g)
        c1_bc = {side: self.bc.scalar_values("c1", side, len(v)) for side, v in self.bc.normal.items()}
        self.S_c1 = scalar_ops(g, c1_bc)
        mu1_bc = {side: np.log1p(v) for side, v in c1_bc.items()}
        self.S_mu1 = scalar_ops(g, mu1_bc)
        self.D = divergence_matrix(g)
        self.Csq = square_average_matrix(g)
        self.w = face_weights(g)
        self.area = g.cell_area
        self.gauge = not self.bc.has_outlet
        self.N = g.n_cells
        if self.gauge:
            net = float(np.sum(self.D @ self.V.Ub))
            if abs(net) > 1e-12 * max(1.0, float(np.max(np.abs(self.V.Ub)))) * self.N:
                raise ValueError(f"closed domain with net boundary inflow {net:.3e}: add a pressure outlet")

    def species_ops(self, i: int):
        return self.S_c1 if i == 1 else self.S

    def mu_ops(self, i: int):
        return self.S_mu1 if i == 1 else self.S


def pressure_pin(N: int, gauge: bool) -> sp.csr_matrix:
    """Continuity/pressure Jacobian block: a single unit entry when the gauge is pinned."""
    return sp.csr_matrix(([1.0] if gauge else [0.0], ([0], [0])), shape=(N, N))


class Layout:
    """Offsets of each field inside the flat unknown vector."""

    def __init__(self, disc: Discretization):
        n, N = disc.V.n_unk, disc.N
        names = ["u"] + list(SCALARS)
        sizes = [n] + [N] * len(SCALARS)
        self.names = names
        self.sizes = sizes
        off = np.concatenate([[0], np.cumsum(sizes)])
        self.sl = {nm: slice(int(off[k]), int(off[k + 1])) for k, nm in enumerate(names)}
        self.size = int(off[-1])

    def pack(self, s: State, disc: Discretization) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.sl["u"]] = s.u.compact(disc.g)[disc.V.unk_idx]
        for nm in SCALARS:
            x[self.sl[nm]] = np.asarray(getattr(s, nm), dtype=float).ravel()
        if disc.gauge:
            x[self.sl["p"]] -= x[self.sl["p"]][0]
        return x

    def unpack(self, x: np.ndarray, disc: Discretization, t: float) -> State:
        g = disc.g
        U = disc.V.full(x[self.sl["u"]])
        fields = {nm: x[self.sl[nm]].reshape(g.nx, g.ny).copy() for nm in SCALARS}
        if disc.gauge:
            fields["p"] -= fields["p"].mean()
        return State(t=t, u=FaceField.from_compact(U, g), **fields)


@dataclass
class Frozen:
    """Quantities of level n that enter the step linearly or as coefficients."""

    U0: np.ndarray
    u0: np.ndarray
    conv: sp.csr_matrix
    phi0: np.ndarray
    phif0: np.ndarray
    lam: np.ndarray
    lamf: np.ndarray
    dF0: np.ndarray
    n0: np.ndarray
    mphi0: np.ndarray
    prolif0: np.ndarray
    diff: tuple
    c0: tuple


class Stepper:
    """Reusable time stepper; caches operators and the lagged preconditioner."""

    def __init__(self, g: GridSpec, p: ph.PhysParams, cfg: SchemeConfig, bc: BoundaryPlan | None = None,
                 disc: Discretization | None = None):
        self.g = g
        self.p = p
        self.cfg = cfg
        self.disc = disc if disc is not None else Discretization(g, bc)
        self.layout = Layout(self.disc)
        self._lu = None
        self._lu_age = 0

    # -- frozen data ---------------------------------------------------------
    def freeze(self, old: State) -> Frozen:
        d, p = self.disc, self.p
        old.check(self.g)
        U0 = old.u.compact(self.g)
        phi0 = old.phi.ravel()
        c0 = tuple(c.ravel() for c in old.species())
        lam = ph.lambda_of(c0[2], p)
        d1 = ph.d1_of(phi0, ph.permeability(c0[2], p), p)
        return Frozen(
            U0=U0, u0=U0[d.V.unk_idx], conv=d.V.conv(U0),
            phi0=phi0, phif0=d.S.face(phi0), lam=lam, lamf=d.S.face(lam),
            dF0=ph.f_trunc(phi0, p.f_trunc).d1,
            n0=p.n_adh * (c0[1] + c0[2] + 2.0),
            mphi0=p.m_pen * phi0 ** 2,
            prolif0=ph.proliferation(phi0, p),
            diff=(d1, np.full(phi0.shape, p.d2), np.full(phi0.shape, p.d3)),
            c0=c0,
        )

    def _split(self, x):
        L = self.layout
        return {nm: x[L.sl[nm]] for nm in L.names}

    # -- residual ------------------------------------------------------------
    def residual(self, x: np.ndarray, fz: Frozen, dt: float | None = None) -> np.ndarray:
        d, p, V = self.disc, self.p, self.disc.V
        dt = self.cfg.dt if dt is None else dt
        f = self._split(x)
        cs = (f["c1"], f["c2"], f["c3"])
        ms = (f["mu1"], f["mu2"], f["mu3"])
        if min(float(np.min(c)) for c in cs) + 1.0 < self.cfg.c_floor:
            raise PositivityLost("concentration below the positivity floor")
        U = V.full(f["u"])
        phi, m = f["phi"], f["mu_phi"]
        gm = d.S.grad(m)
        cf = [d.species_ops(i + 1).face(cs[i]) for i in range(3)]
        gmi = [d.mu_ops(i + 1).grad(ms[i]) for i in range(3)]

        force = fz.phif0 * gm + cf[0] * gmi[0] + cf[1] * gmi[1] + cf[2] * gmi[2]
        r_u = p.re * (f["u"] - fz.u0) + dt * (
            p.re * (fz.conv @ U) - (V.lap @ U) - V.lap_off
            + V.gradp @ f["p"] + V.gradp_off + force[V.unk_idx])

        r_div = d.D @ U
        if d.gauge:
            r_div[0] += f["p"][0]

        r_phi = phi - fz.phi0 + dt * (d.D @ (U * fz.phif0) - p.mobility * (d.D @ gm))

        gphi = d.S.grad(phi)
        lap = d.D @ (fz.lamf * gphi)
        dphi = phi - fz.phi0
        mu_phi = (-p.eps ** 2 * lap + fz.lam * fz.dF0 + fz.lam * p.s_stab * dphi
                  + 2.0 * phi * p.m_pen * (cs[1] + cs[2] + 2.0)
                  - (fz.phi0 ** 3 - fz.phi0) * fz.n0 + p.s_stab * dphi * fz.n0)
        r_m = m - mu_phi

        lnc = [np.log1p(c) for c in cs]
        coup = fz.mphi0 - p.n_adh * ph.double_well(phi)
        lq = ph.lambda_quotient(cs[2], fz.c0[2], p)
        mix = 0.5 * p.eps ** 2 * (d.Csq @ gphi ** 2) + ph.f_trunc(phi, p.f_trunc).value
        r_m1 = ms[0] - lnc[0]
        r_m2 = ms[1] - lnc[1] - coup
        r_m3 = ms[2] - lq * mix - lnc[2] - coup

        rate = fz.prolif0 * ph.affinity(ms[0], ms[1], ms[2], p)
        src = ph.reaction_sources(rate, p)
        r_c = []
        for i in range(3):
            kf = d.S.face(fz.diff[i] * (cs[i] + 1.0))
            r_c.append(cs[i] - fz.c0[i] + dt * (
                d.D @ (U * cf[i]) - (d.D @ (kf * gmi[i])) / p.pe - src[i]))

        return np.concatenate([r_u, r_div, r_phi, r_m, r_c[0], r_m1, r_c[1], r_m2, r_c[2], r_m3])

    # -- Jacobian ------------------------------------------------------------
    def jacobian(self, x: np.ndarray, fz: Frozen, dt: float | None = None) -> sp.csr_matrix:
        if self.cfg.jac_mode == "finite-difference":
            return self.fd_jacobian(x, fz, dt)
        return self.analytic_jacobian(x, fz, dt)

    def analytic_jacobian(self, x: np.ndarray, fz: Frozen, dt: float | None = None) -> sp.csr_matrix:
        d, p, V, L = self.disc, self.p, self.disc.V, self.layout
        dt = self.cfg.dt if dt is None else dt
        f = self._split(x)
        cs = (f["c1"], f["c2"], f["c3"])
        ms = (f["mu1"], f["mu2"], f["mu3"])
        N, n = d.N, V.n_unk
        U = V.full(f["u"])
        phi, m = f["phi"], f["mu_phi"]
        Dg = sp.diags
        I = sp.identity(N, format="csr")
        R = V.R
        gm = d.S.grad(m)
        cf = [d.species_ops(i + 1).face(cs[i]) for i in range(3)]
        gmi = [d.mu_ops(i + 1).grad(ms[i]) for i in range(3)]
        idx = {nm: k for k, nm in enumerate(L.names)}
        B = [[None] * len(L.names) for _ in L.names]

        # momentum
        B[0][0] = p.re * sp.identity(n, format="csr") + dt * ((p.re * fz.conv - V.lap) @ V.P)
        B[0][idx["p"]] = dt * V.gradp
        B[0][idx["mu_phi"]] = dt * (R @ Dg(fz.phif0) @ d.S.G)
        for i, (cn, mn) in enumerate(zip(SPECIES, ("mu1", "mu2", "mu3"))):
            so, mo = d.species_ops(i + 1), d.mu_ops(i + 1)
            B[0][idx[cn]] = dt * (R @ Dg(gmi[i]) @ so.A)
            B[0][idx[mn]] = dt * (R @ Dg(cf[i]) @ mo.G)

        # continuity and gauge
        k = idx["p"]
        B[k][0] = d.D @ V.P
        B[k][k] = pressure_pin(N, d.gauge)

        # phase transport
        k = idx["phi"]
        B[k][0] = dt * (d.D @ Dg(fz.phif0) @ V.P)
        B[k][k] = I
        B[k][idx["mu_phi"]] = -dt * p.mobility * (d.D @ d.S.G)

        # phase potential
        k = idx["mu_phi"]
        B[k][k] = I
        diag = fz.lam * p.s_stab + 2.0 * p.m_pen * (cs[1] + cs[2] + 2.0) + p.s_stab * fz.n0
        B[k][idx["phi"]] = p.eps ** 2 * (d.D @ Dg(fz.lamf) @ d.S.G) - Dg(diag)
        B[k][idx["c2"]] = Dg(-2.0 * p.m_pen * phi)
        B[k][idx["c3"]] = Dg(-2.0 * p.m_pen * phi)

        # species
        a = (p.a1, p.a2, -p.a3)
        sgn = (1.0, 1.0, -1.0)
        for i, (cn, mn) in enumerate(zip(SPECIES, ("mu1", "mu2", "mu3"))):
            so, mo = d.species_ops(i + 1), d.mu_ops(i + 1)
            k = idx[cn]
            kf = d.S.face(fz.diff[i] * (cs[i] + 1.0))
            B[k][0] = dt * (d.D @ Dg(cf[i]) @ V.P)
            B[k][k] = I + dt * (d.D @ Dg(U) @ so.A) \
                - (dt / p.pe) * (d.D @ Dg(gmi[i]) @ d.S.A @ Dg(fz.diff[i]))
            B[k][idx[mn]] = -(dt / p.pe) * (d.D @ Dg(kf) @ mo.G)
            for j, mj in enumerate(("mu1", "mu2", "mu3")):
                blk = Dg(dt * sgn[i] * (p.a1, p.a2, p.a3)[i] * a[j] * fz.prolif0)
                B[k][idx[mj]] = blk if B[k][idx[mj]] is None else B[k][idx[mj]] + blk

        # species potentials
        dlog = [1.0 / (1.0 + c) for c in cs]
        dcoup = p.n_adh * (phi ** 3 - phi)
        for i, (cn, mn) in enumerate(zip(SPECIES, ("mu1", "mu2", "mu3"))):
            k = idx[mn]
            B[k][k] = I
            B[k][idx[cn]] = Dg(-dlog[i])
        B[idx["mu2"]][idx["phi"]] = Dg(dcoup)
        lq = ph.lambda_quotient(cs[2], fz.c0[2], p)
        gphi = d.S.grad(phi)
        dmix = p.eps ** 2 * (d.Csq @ Dg(gphi) @ d.S.G) + Dg(ph.f_trunc(phi, p.f_trunc).d1)
        B[idx["mu3"]][idx["phi"]] = Dg(dcoup) - Dg(lq) @ dmix

        return sp.bmat(B, format="csr")

    def fd_jacobian(self, x: np.ndarray, fz: Frozen, dt: float | None = None, h: float = 1e-7) -> sp.csr_matrix:
        """Column-by-column central differences; only sensible on small grids."""
        n = x.size
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = h * max(1.0, abs(x[j]))
            cols.append((self.residual(x + e, fz, dt) - self.residual(x - e, fz, dt)) / (2 * e[j]))
        return sp.csr_matrix(np.column_stack(cols))

    # -- linear algebra ------------------------------------------------------
    def _factor(self, J):
        try:
            self._lu = sla.splu(J.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearSolveFailed(f"sparse factorization failed: {exc}") from exc
        self._lu_age = 0
        self._report.factorizations += 1

    def _solve(self, J, r, x):
        rep = self._report
        if self.cfg.lin_solver == "direct" or J.shape[0] < 2000:
            self._factor(J)
            dx = self._lu.solve(r)
            rep.linear_iters += 1
            return dx
        if self._lu is None:
            self._factor(J)
        for attempt in range(2):
            M = sla.LinearOperator(J.shape, matvec=self._lu.solve)
            count = [0]

            def cb(_):
                count[0] += 1

            # never looser than the relative forcing term, so corrections stay
            # descent directions when the Newton residual nears its tolerance
            atol = min(self.cfg.lin_tol, self.cfg.lin_rtol * float(np.linalg.norm(r)))
            dx, info = sla.gmres(J, r, x0=self._lu.solve(r), M=M, rtol=self.cfg.lin_rtol, atol=atol,
                                 restart=min(60, self.cfg.lin_max), maxiter=max(1, self.cfg.lin_max // 60),
                                 callback=cb, callback_type="pr_norm")
            rep.linear_iters += count[0]
            if info == 0 and np.all(np.isfinite(dx)):
                self._lu_age += 1
                if count[0] > 30:
                    self._lu = None
                return dx
            self._factor(J)
        raise LinearSolveFailed("preconditioned GMRES did not converge with a fresh factorization")

    def _max_step(self, x, dx):
        L = self.layout
        alpha = 1.0
        for nm in SPECIES:
            c, dc = x[L.sl[nm]], dx[L.sl[nm]]
            neg = dc < 0
            if np.any(neg):
                room = c[neg] + 1.0 - self.cfg.c_floor
                alpha = min(alpha, float(np.min(room / -dc[neg])))
        if alpha <= 0:
            raise PositivityLost("iterate sits on the positivity floor")
        return alpha

    # -- step ----------------------------------------------------------------
    def step(self, old: State, dt: float | None = None) -> tuple[State, StepReport]:
        t0 = time.perf_counter()
        dt = self.cfg.dt if dt is None else dt
        fz = self.freeze(old)
        self._report = rep = StepReport()
        x0 = self.layout.pack(old, self.disc)
        for nm in SPECIES:
            if np.min(x0[self.layout.sl[nm]]) + 1.0 < self.cfg.c_floor:
                raise PositivityLost(f"initial {nm} violates the positivity floor")
        res = newton_solve(lambda z: self.residual(z, fz, dt), lambda z: self.jacobian(z, fz, dt), x0,
                           tol=self.cfg.newton_tol, max_iter=self.cfg.newton_max, solve=self._solve,
                           step_tol=self.cfg.step_tol,
                           max_step=self._max_step, backtrack=self.cfg.armijo)
        new = self.layout.unpack(res.x, self.disc, old.t + dt)
        rep.newton_iters = res.iters
        rep.residual = res.residual
        rep.wall_time = time.perf_counter() - t0
        return new, rep


def residual(old: State, guess: State, p: ph.PhysParams, cfg: SchemeConfig, g: GridSpec,
             bc: BoundaryPlan | None = None) -> np.ndarray:
    """Flat residual of the step from ``old`` evaluated at ``guess``."""
    st = Stepper(g, p, cfg, bc)
    return st.residual(st.layout.pack(guess, st.disc), st.freeze(old))


def step(old: State, p: ph.PhysParams, cfg: SchemeConfig, g: GridSpec,
         bc: BoundaryPlan | None = None) -> tuple[State, StepReport]:
    return Stepper(g, p, cfg, bc).step(old)


def complete_potentials(s: State, p: ph.PhysParams, g: GridSpec) -> State:
    """Return a copy of ``s`` with the chemical potentials evaluated from its fields.

    The phase potential uses ``s`` as both levels, i.e. the equilibrium form.
    """
    out = s.copy()
    out.mu_phi = ph.mu_phi_scheme(s.phi, s.phi, s.c2, s.c3, s.c2, s.c3, p, g)
    out.mu1 = ph.mu1_scheme(s.c1)
    out.mu2 = ph.mu2_scheme(s.c2, s.phi, s.phi, p)
    out.mu3 = ph.mu3_scheme(s.c3, s.c3, s.phi, s.phi, p, g)
    return out


def with_dt(cfg: SchemeConfig, dt: float) -> SchemeConfig:
    return replace(cfg, dt=dt)
