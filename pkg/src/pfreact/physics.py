"""Constitutive laws and chemical potentials of the dimensionless model.

Concentrations are stored shifted, ``c = c* - 1``, so the entropy densities
read ``(c + 1)(ln(c + 1) - 1)`` and the equilibrium ``c* = 1`` is ``c = 0``.
All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GridSpec, check_scalar, closed_ops, grad_sq_cells

Q_MODES = ("constant", "affine")


@dataclass(frozen=True)
class PhysParams:
    """Dimensionless model constants.  Defaults are the reference parameter set."""

    re: float = 1.0
    pe: float = 1.0
    mobility: float = 0.05
    d2: float = 1.0
    d3: float = 1.0
    d1_plus: float = 1.0
    d1_minus: float = 0.5
    m_pen: float = 1.0
    n_adh: float = 1.0
    k_rate: float = 1.0
    eps: float = 0.04
    lambda0: float = 0.05
    s_stab: float = 4.0
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 2.0
    f_trunc: float = 1.2
    q_mode: str = "constant"
    q0: float = 1.0
    q_min: float = 1e-3

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not (self.re > 0 and self.pe > 0):
            raise ValueError("re and pe must be positive")
        for name in ("mobility", "d2", "d3", "d1_plus", "d1_minus", "k_rate", "m_pen", "n_adh"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.d1_plus <= 0 or self.d1_minus <= 0:
            raise ValueError("bulk diffusivities of species 1 must be positive")
        if abs(self.a1 + self.a2 - self.a3) > 1e-12 * max(1.0, abs(self.a3)):
            raise ValueError(f"stoichiometry must satisfy a1 + a2 = a3, got {self.a1} + {self.a2} != {self.a3}")
        if self.f_trunc < 1.0:
            raise ValueError("truncation radius must be at least 1")
        if self.s_stab < 0.5 * self.lipschitz:
            raise ValueError(f"s_stab = {self.s_stab} violates s_stab >= L/2 = {0.5 * self.lipschitz}")
        if self.q_mode not in Q_MODES:
            raise ValueError(f"q_mode must be one of {Q_MODES}, got {self.q_mode!r}")
        if self.q_mode == "constant" and not self.q0 > 0:
            raise ValueError("q0 must be positive")
        if not self.q_min > 0:
            raise ValueError("q_min must be positive")

    @property
    def lipschitz(self) -> float:
        """L = max |F''| of the truncated double well."""
        return 3.0 * self.f_trunc ** 2 - 1.0


@dataclass
class PotentialEval:
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def lambda_of(c3, p: PhysParams):
    return 1.0 + p.lambda0 * np.asarray(c3, dtype=float)


def dlambda(p: PhysParams) -> float:
    return p.lambda0


def f_trunc(phi, r: float = 1.2) -> PotentialEval:
    """Double well (phi^2 - 1)^2 / 4, continued quadratically beyond |phi| = r."""
    phi = np.asarray(phi, dtype=float)
    a = np.abs(phi)
    inside = a <= r
    s = np.sign(phi)
    fr = 0.25 * (r * r - 1.0) ** 2
    f1r = r ** 3 - r
    f2r = 3.0 * r * r - 1.0
    d = a - r
    value = np.where(inside, 0.25 * (phi * phi - 1.0) ** 2, fr + f1r * d + 0.5 * f2r * d * d)
    d1 = np.where(inside, phi ** 3 - phi, s * (f1r + f2r * d))
    d2 = np.where(inside, 3.0 * phi * phi - 1.0, f2r)
    return PotentialEval(value, d1, d2)


def double_well(phi):
    """Untruncated (phi^2 - 1)^2 / 4, used by the adhesion term."""
    phi = np.asarray(phi, dtype=float)
    return 0.25 * (phi * phi - 1.0) ** 2


def proliferation(phi, p: PhysParams):
    phi = np.asarray(phi, dtype=float)
    return np.where(np.abs(phi) <= 1.0, p.k_rate * (phi * phi - 1.0) ** 2, 0.0)


def permeability(c3, p: PhysParams):
    c3 = np.asarray(c3, dtype=float)
    if p.q_mode == "constant":
        return np.full(c3.shape, p.q0)
    # the affine law turns negative once c3 < -1/2; keep the membrane term finite
    return np.maximum(1.0 + 2.0 * c3, p.q_min)


def d1_of(phi, q, p: PhysParams):
    """Diffusivity of species 1 through bulk phases and the membrane."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("membrane permeability q must be positive")
    ph = np.clip(np.asarray(phi, dtype=float), -1.0, 1.0)
    inv = ((ph * ph - 1.0) ** 2 / (q * p.eps)
           + (1.0 - ph) / (2.0 * p.d1_minus) + (1.0 + ph) / (2.0 * p.d1_plus))
    return 1.0 / inv


def log_shifted(c, name: str = "c"):
    c = np.asarray(c, dtype=float)
    if np.any(c <= -1.0):
        raise ValueError(f"ln({name} + 1) of a nonpositive argument")
    return np.log1p(c)


def lambda_quotient(c3_new, c3_old, p: PhysParams):
    """(lambda(c3_new) - lambda(c3_old)) / (c3_new - c3_old).

    lambda is affine, so the quotient is its slope for every pair.  Returning
    the slope directly avoids the cancellation of the divided difference,
    which otherwise puts a rounding floor of order eps / |c3_new - c3_old|
    under the Newton residual.
    """
    dc = np.asarray(c3_new, dtype=float) - np.asarray(c3_old, dtype=float)
    return np.full(dc.shape, dlambda(p))


def mixing_density(phi, p: PhysParams, g: GridSpec):
    """Cell values of eps^2/2 |grad phi|^2 + F(phi)."""
    return 0.5 * p.eps ** 2 * grad_sq_cells(phi, g) + f_trunc(phi, p.f_trunc).value


def mu_phi_scheme(phi_new, phi_old, c2_new, c3_new, c2_old, c3_old, p: PhysParams, g: GridSpec):
    phi_new, phi_old = check_scalar(phi_new, g, "phi_new"), check_scalar(phi_old, g, "phi_old")
    c2_new, c3_new = check_scalar(c2_new, g, "c2_new"), check_scalar(c3_new, g, "c3_new")
    c2_old, c3_old = check_scalar(c2_old, g, "c2_old"), check_scalar(c3_old, g, "c3_old")
    ops, D, _, _ = closed_ops(g)
    lam = lambda_of(c3_old, p)
    lam_f = ops.face(lam.ravel())
    lap = (D @ (lam_f * ops.grad(phi_new.ravel()))).reshape(g.nx, g.ny)
    dphi = phi_new - phi_old
    pot = f_trunc(phi_old, p.f_trunc)
    n_old = p.n_adh * (c2_old + c3_old + 2.0)
    return (-p.eps ** 2 * lap + lam * pot.d1 + lam * p.s_stab * dphi
            + 2.0 * phi_new * p.m_pen * (c2_new + c3_new + 2.0)
            - (phi_old ** 3 - phi_old) * n_old + p.s_stab * dphi * n_old)


def mu1_scheme(c1_new):
    return log_shifted(c1_new, "c1")


def _coupling(phi_new, phi_old, p: PhysParams):
    phi_new = np.asarray(phi_new, dtype=float)
    phi_old = np.asarray(phi_old, dtype=float)
    return p.m_pen * phi_old ** 2 - p.n_adh * double_well(phi_new)


def mu2_scheme(c2_new, phi_old, phi_new, p: PhysParams):
    return log_shifted(c2_new, "c2") + _coupling(phi_new, phi_old, p)


def mu3_scheme(c3_new, c3_old, phi_new, phi_old, p: PhysParams, g: GridSpec):
    c3_new = check_scalar(c3_new, g, "c3_new")
    lq = lambda_quotient(c3_new, c3_old, p)
    return lq * mixing_density(phi_new, p, g) + log_shifted(c3_new, "c3") + _coupling(phi_new, phi_old, p)


def affinity(mu1, mu2, mu3, p: PhysParams):
    return p.a1 * np.asarray(mu1) + p.a2 * np.asarray(mu2) - p.a3 * np.asarray(mu3)


def reaction_rate(phi_old, mu1, mu2, mu3, p: PhysParams):
    """P(phi_old) times the affinity.  Species 1, 2 lose a1 R, a2 R; species 3 gains a3 R."""
    return proliferation(phi_old, p) * affinity(mu1, mu2, mu3, p)


def reaction_sources(rate, p: PhysParams):
    """Time-derivative contributions of the reaction to (c1, c2, c3)."""
    return -p.a1 * rate, -p.a2 * rate, p.a3 * rate


def entropy_density(c):
    c1 = np.asarray(c, dtype=float) + 1.0
    return c1 * (np.log(c1) - 1.0)
