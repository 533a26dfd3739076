"""Uniform staggered (MAC) grid and its discrete differential operators.

Scalars live at the ``nx * ny`` cell centres, velocity components on the cell
faces.  Internally faces are stored in a compact flat layout:

* x-faces: ``i * ny + j`` with ``i`` in ``[0, nfx)`` where ``nfx = nx`` on a
  periodic x-axis (face 0 doubles as face ``nx``) and ``nx + 1`` otherwise;
* y-faces follow, ``nfx * ny + i * nfy + j``.

Every operator is a ``scipy.sparse`` matrix, so the scheme can form Jacobian
blocks by plain matrix products.  The public functional helpers
(:func:`grad_c2f`, :func:`div_f2c`, ...) use the closed-box closures: mirror
ghosts for scalars at walls, wrap-around on periodic axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from .boundary import BoundaryPlan

AXIS_FAMILIES = ("periodic", "wall")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc_x: str = "periodic"
    bc_y: str = "wall"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"need at least 4 cells per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain extents must be positive")
        for fam in (self.bc_x, self.bc_y):
            if fam not in AXIS_FAMILIES:
                raise ValueError(f"unknown axis family {fam!r}; expected one of {AXIS_FAMILIES}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def px(self) -> bool:
        return self.bc_x == "periodic"

    @property
    def py(self) -> bool:
        return self.bc_y == "periodic"

    @property
    def nfx(self) -> int:
        return self.nx if self.px else self.nx + 1

    @property
    def nfy(self) -> int:
        return self.ny if self.py else self.ny + 1

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_xfaces(self) -> int:
        return self.nfx * self.ny

    @property
    def n_faces(self) -> int:
        return self.nfx * self.ny + self.nx * self.nfy

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def xface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the full ``(nx+1, ny)`` x-face array."""
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def yface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")


@dataclass
class FaceField:
    """Face-normal velocity components: ``x`` is ``(nx+1, ny)``, ``y`` is ``(nx, ny+1)``.

    On a periodic axis the last face row repeats the first.
    """

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, g: GridSpec) -> "FaceField":
        return cls(np.zeros((g.nx + 1, g.ny)), np.zeros((g.nx, g.ny + 1)))

    @classmethod
    def from_compact(cls, v: np.ndarray, g: GridSpec) -> "FaceField":
        v = np.asarray(v, dtype=float)
        if v.shape != (g.n_faces,):
            raise ValueError(f"compact face vector has shape {v.shape}, expected ({g.n_faces},)")
        ux = v[: g.n_xfaces].reshape(g.nfx, g.ny)
        uy = v[g.n_xfaces:].reshape(g.nx, g.nfy)
        if g.px:
            ux = np.vstack([ux, ux[:1]])
        if g.py:
            uy = np.hstack([uy, uy[:, :1]])
        return cls(ux.copy(), uy.copy())

    def compact(self, g: GridSpec) -> np.ndarray:
        self.check(g)
        return np.concatenate([self.x[: g.nfx].ravel(), self.y[:, : g.nfy].ravel()])

    def check(self, g: GridSpec) -> None:
        if self.x.shape != (g.nx + 1, g.ny) or self.y.shape != (g.nx, g.ny + 1):
            raise ValueError(f"FaceField shapes {self.x.shape}, {self.y.shape} do not match a "
                             f"{g.nx}x{g.ny} grid")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("FaceField holds non-finite values")
        if (g.px and not np.array_equal(self.x[0], self.x[-1])) or \
                (g.py and not np.array_equal(self.y[:, 0], self.y[:, -1])):
            raise ValueError("periodic duplicate face row differs from the first row")

    def centered(self) -> tuple[np.ndarray, np.ndarray]:
        """Velocity interpolated to cell centres."""
        return 0.5 * (self.x[1:] + self.x[:-1]), 0.5 * (self.y[:, 1:] + self.y[:, :-1])

    def copy(self) -> "FaceField":
        return FaceField(self.x.copy(), self.y.copy())

    def __mul__(self, k: float) -> "FaceField":
        return FaceField(self.x * k, self.y * k)

    __rmul__ = __mul__


def check_scalar(s: np.ndarray, g: GridSpec, name: str = "field") -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (g.nx, g.ny):
        raise ValueError(f"{name} has shape {s.shape}, expected ({g.nx}, {g.ny})")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"{name} holds non-finite values")
    return s


# ----------------------------------------------------------------------------
# index helpers

def _xface(g: GridSpec, i, j):
    return np.asarray(i) * g.ny + np.asarray(j)


def _yface(g: GridSpec, i, j):
    return g.n_xfaces + np.asarray(i) * g.nfy + np.asarray(j)


def _cell(g: GridSpec, i, j):
    return np.asarray(i) * g.ny + np.asarray(j)


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    rows = np.concatenate([np.ravel(r) for r in rows]) if rows else np.zeros(0, int)
    cols = np.concatenate([np.ravel(c) for c in cols]) if cols else np.zeros(0, int)
    vals = np.concatenate([np.ravel(v) for v in vals]) if vals else np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


# ----------------------------------------------------------------------------
# scalar operators

@dataclass
class ScalarOps:
    """Cell-to-face gradient and face-value operators for one boundary closure.

    ``grad(s) = G @ s + g_off`` and ``face(s) = A @ s + a_off``.
    """

    G: sp.csr_matrix
    A: sp.csr_matrix
    g_off: np.ndarray
    a_off: np.ndarray

    def grad(self, s: np.ndarray) -> np.ndarray:
        return self.G @ s + self.g_off

    def face(self, s: np.ndarray) -> np.ndarray:
        return self.A @ s + self.a_off


def scalar_ops(g: GridSpec, dirichlet: dict[str, np.ndarray] | None = None) -> ScalarOps:
    """Build gradient/face-average operators.

    ``dirichlet`` maps a wall side to per-face boundary values (NaN = Neumann).
    Neumann faces get zero gradient and the adjacent cell value (mirror ghost);
    Dirichlet faces use the half-cell one-sided difference and the boundary
    value itself.
    """
    dirichlet = dirichlet or {}
    hx, hy = g.hx, g.hy
    nx, ny = g.nx, g.ny
    rg, cg, vg = [], [], []
    ra, ca, va = [], [], []
    g_off = np.zeros(g.n_faces)
    a_off = np.zeros(g.n_faces)

    def interior(face, left, right, h):
        rg.extend([face, face]); cg.extend([right, left])
        vg.extend([np.full(face.shape, 1.0 / h), np.full(face.shape, -1.0 / h)])
        ra.extend([face, face]); ca.extend([right, left])
        va.extend([np.full(face.shape, 0.5), np.full(face.shape, 0.5)])

    def boundary(face, cell, values, h, outward):
        values = np.asarray(values, dtype=float)
        neu = np.isnan(values)
        ra.append(face[neu]); ca.append(cell[neu]); va.append(np.ones(neu.sum()))
        d = ~neu
        # outward derivative (g - s)/(h/2); gradient along +axis = outward * that
        rg.append(face[d]); cg.append(cell[d]); vg.append(np.full(d.sum(), -2.0 * outward / h))
        g_off[face[d]] = 2.0 * outward * values[d] / h
        a_off[face[d]] = values[d]

    J = np.arange(ny)
    I = np.arange(nx)
    if g.px:
        ii, jj = np.meshgrid(I, J, indexing="ij")
        interior(_xface(g, ii, jj), _cell(g, (ii - 1) % nx, jj), _cell(g, ii, jj), hx)
    else:
        ii, jj = np.meshgrid(np.arange(1, nx), J, indexing="ij")
        interior(_xface(g, ii, jj), _cell(g, ii - 1, jj), _cell(g, ii, jj), hx)
        boundary(_xface(g, 0, J), _cell(g, 0, J), dirichlet.get("left", np.full(ny, np.nan)), hx, -1.0)
        boundary(_xface(g, nx, J), _cell(g, nx - 1, J), dirichlet.get("right", np.full(ny, np.nan)), hx, 1.0)
    if g.py:
        ii, jj = np.meshgrid(I, J, indexing="ij")
        interior(_yface(g, ii, jj), _cell(g, ii, (jj - 1) % ny), _cell(g, ii, jj), hy)
    else:
        ii, jj = np.meshgrid(I, np.arange(1, ny), indexing="ij")
        interior(_yface(g, ii, jj), _cell(g, ii, jj - 1), _cell(g, ii, jj), hy)
        boundary(_yface(g, I, 0), _cell(g, I, 0), dirichlet.get("bottom", np.full(nx, np.nan)), hy, -1.0)
        boundary(_yface(g, I, ny), _cell(g, I, ny - 1), dirichlet.get("top", np.full(nx, np.nan)), hy, 1.0)
    shape = (g.n_faces, g.n_cells)
    return ScalarOps(_coo(rg, cg, vg, shape), _coo(ra, ca, va, shape), g_off, a_off)


def divergence_matrix(g: GridSpec) -> sp.csr_matrix:
    """Faces -> cells: net outward face flux per unit cell area."""
    nx, ny = g.nx, g.ny
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    c = _cell(g, ii, jj)
    east = _xface(g, (ii + 1) % g.nfx if g.px else ii + 1, jj)
    north = _yface(g, ii, (jj + 1) % g.nfy if g.py else jj + 1)
    rows = [c, c, c, c]
    cols = [east, _xface(g, ii, jj), north, _yface(g, ii, jj)]
    vals = [np.full(c.shape, 1 / g.hx), np.full(c.shape, -1 / g.hx),
            np.full(c.shape, 1 / g.hy), np.full(c.shape, -1 / g.hy)]
    return _coo(rows, cols, vals, (g.n_cells, g.n_faces))


def square_average_matrix(g: GridSpec) -> sp.csr_matrix:
    """Faces -> cells: half the sum of the values on the four faces of a cell.

    Applied to squared face gradients it gives the cell value of ``|grad s|^2``
    whose cell sum equals the face-weighted sum of squared gradients.
    """
    D = divergence_matrix(g).tocoo()
    return sp.csr_matrix((np.full(D.nnz, 0.5), (D.row, D.col)), shape=D.shape)


def face_weights(g: GridSpec) -> np.ndarray:
    """Quadrature weight (dual cell area) of every compact face; boundary faces get half."""
    w = np.full(g.n_faces, g.cell_area)
    if not g.px:
        J = np.arange(g.ny)
        w[_xface(g, 0, J)] *= 0.5
        w[_xface(g, g.nx, J)] *= 0.5
    if not g.py:
        I = np.arange(g.nx)
        w[_yface(g, I, 0)] *= 0.5
        w[_yface(g, I, g.ny)] *= 0.5
    return w


def boundary_face_mask(g: GridSpec) -> np.ndarray:
    m = np.zeros(g.n_faces, dtype=bool)
    if not g.px:
        J = np.arange(g.ny)
        m[_xface(g, 0, J)] = True
        m[_xface(g, g.nx, J)] = True
    if not g.py:
        I = np.arange(g.nx)
        m[_yface(g, I, 0)] = True
        m[_yface(g, I, g.ny)] = True
    return m


@lru_cache(maxsize=32)
def closed_ops(g: GridSpec) -> tuple[ScalarOps, sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """Neumann/periodic scalar operators, divergence, square-average and weights."""
    return scalar_ops(g), divergence_matrix(g), square_average_matrix(g), face_weights(g)


# ----------------------------------------------------------------------------
# velocity operators

@dataclass
class _Block:
    """One velocity component seen in (normal, tangential) index coordinates."""

    ncn: int            # cells along the normal axis
    nct: int            # cells along the tangential axis
    pn: bool
    pt: bool
    hn: float
    ht: float
    low_n: str
    high_n: str
    low_t: str
    high_t: str
    face_gid: callable  # (a, b) -> compact face index
    cell_gid: callable  # (a_cell, b) -> cell index
    other_gid: callable  # (cell along normal, face along tangential) -> compact face index

    @property
    def nfa(self) -> int:
        return self.ncn if self.pn else self.ncn + 1

    @property
    def ntf(self) -> int:
        return self.nct if self.pt else self.nct + 1


def _blocks(g: GridSpec) -> tuple[_Block, _Block]:
    bx = _Block(g.nx, g.ny, g.px, g.py, g.hx, g.hy, "left", "right", "bottom", "top",
                lambda a, b: _xface(g, a, b), lambda a, b: _cell(g, a, b),
                lambda c, jf: _yface(g, c, jf))
    by = _Block(g.ny, g.nx, g.py, g.px, g.hy, g.hx, "bottom", "top", "left", "right",
                lambda a, b: _yface(g, b, a), lambda a, b: _cell(g, b, a),
                lambda c, jf: _xface(g, jf, c))
    return bx, by


class VelocityOps:
    """Velocity unknowns, Dirichlet data, viscous/pressure/convection operators.

    ``U_full = P @ u + Ub`` expands the unknown face velocities ``u`` to the
    compact face vector.  Rows of ``lap``, ``gradp`` and ``conv`` correspond to
    unknown faces; their columns address the full compact face vector (or
    cells for ``gradp``).
    """

    def __init__(self, g: GridSpec, plan: "BoundaryPlan"):
        plan.validate(g)
        self.g = g
        self.plan = plan
        self.blocks = _blocks(g)
        nf = g.n_faces
        unknown = np.ones(nf, dtype=bool)
        Ub = np.zeros(nf)
        outlet = np.zeros(nf, dtype=bool)
        for blk in self.blocks:
            if blk.pn:
                continue
            b = np.arange(blk.nct)
            for side, a in ((blk.low_n, 0), (blk.high_n, blk.ncn)):
                vals = np.asarray(plan.normal[side], dtype=float)
                gid = blk.face_gid(a, b)
                out = np.isnan(vals)
                unknown[gid[~out]] = False
                Ub[gid[~out]] = vals[~out]
                outlet[gid[out]] = True
        self.unknown = unknown
        self.outlet = outlet
        self.Ub = Ub
        self.unk_idx = np.flatnonzero(unknown)
        self.n_unk = self.unk_idx.size
        self.row_of = np.full(nf, -1)
        self.row_of[self.unk_idx] = np.arange(self.n_unk)
        self.P = sp.csr_matrix((np.ones(self.n_unk), (self.unk_idx, np.arange(self.n_unk))),
                               shape=(nf, self.n_unk))
        self.R = self.P.T.tocsr()
        self._build_static()

    # -- geometry of unknown faces per block ---------------------------------
    def _unknown_ab(self, blk: _Block) -> tuple[np.ndarray, np.ndarray]:
        aa, bb = np.meshgrid(np.arange(blk.nfa), np.arange(blk.nct), indexing="ij")
        aa, bb = aa.ravel(), bb.ravel()
        keep = self.unknown[blk.face_gid(aa, bb)]
        return aa[keep], bb[keep]

    def _normal_neighbors(self, blk: _Block, a: np.ndarray):
        if blk.pn:
            return (a - 1) % blk.ncn, (a + 1) % blk.ncn
        lo = np.where(a == 0, a + 1, a - 1)           # outlet ghost: zero normal gradient
        hi = np.where(a == blk.ncn, a - 1, a + 1)
        return lo, hi

    def _tangent_is_mirror(self, blk: _Block, side: str, a: np.ndarray) -> np.ndarray:
        """Zero-gradient tangential ghost where every adjacent boundary face is an outlet."""
        out = self.plan.is_outlet(side)
        if out.size == 0:
            return np.zeros(a.shape, dtype=bool)
        left = np.clip(a - 1, 0, blk.ncn - 1)
        right = np.clip(a, 0, blk.ncn - 1)
        return out[left] & out[right]

    def _build_static(self):
        g = self.g
        rows_l, cols_l, vals_l = [], [], []
        rows_p, cols_p, vals_p = [], [], []
        lap_off = np.zeros(self.n_unk)
        gp_off = np.zeros(self.n_unk)
        pout = self.plan.outlet_pressure
        for blk in self.blocks:
            a, b = self._unknown_ab(blk)
            gid = blk.face_gid(a, b)
            row = self.row_of[gid]
            hn2, ht2 = blk.hn ** 2, blk.ht ** 2
            # normal second difference
            lo, hi = self._normal_neighbors(blk, a)
            rows_l += [row, row, row]
            cols_l += [blk.face_gid(lo, b), blk.face_gid(hi, b), gid]
            vals_l += [np.full(row.shape, 1 / hn2), np.full(row.shape, 1 / hn2), np.full(row.shape, -2 / hn2)]
            # tangential second difference with wall ghosts
            diag = np.full(row.shape, -2 / ht2)
            if blk.pt:
                for bn in ((b - 1) % blk.nct, (b + 1) % blk.nct):
                    rows_l.append(row); cols_l.append(blk.face_gid(a, bn)); vals_l.append(np.full(row.shape, 1 / ht2))
            else:
                for side, edge, bn in ((blk.low_t, b == 0, b - 1), (blk.high_t, b == blk.nct - 1, b + 1)):
                    inner = ~edge
                    rows_l.append(row[inner]); cols_l.append(blk.face_gid(a[inner], bn[inner]))
                    vals_l.append(np.full(inner.sum(), 1 / ht2))
                    mirror = self._tangent_is_mirror(blk, side, a) & edge
                    reflect = edge & ~mirror
                    diag[mirror] += 1 / ht2
                    diag[reflect] -= 1 / ht2
                    lap_off[row[reflect]] += 2 * self.plan.tangential.get(side, 0.0) / ht2
            rows_l.append(row); cols_l.append(gid); vals_l.append(diag)
            # pressure gradient
            if blk.pn:
                rows_p += [row, row]
                cols_p += [blk.cell_gid(a % blk.ncn, b), blk.cell_gid((a - 1) % blk.ncn, b)]
                vals_p += [np.full(row.shape, 1 / blk.hn), np.full(row.shape, -1 / blk.hn)]
            else:
                mid = (a > 0) & (a < blk.ncn)
                rows_p += [row[mid], row[mid]]
                cols_p += [blk.cell_gid(a[mid], b[mid]), blk.cell_gid(a[mid] - 1, b[mid])]
                vals_p += [np.full(mid.sum(), 1 / blk.hn), np.full(mid.sum(), -1 / blk.hn)]
                low = a == 0
                rows_p.append(row[low]); cols_p.append(blk.cell_gid(0, b[low]))
                vals_p.append(np.full(low.sum(), 2 / blk.hn))
                gp_off[row[low]] -= 2 * pout / blk.hn
                high = a == blk.ncn
                rows_p.append(row[high]); cols_p.append(blk.cell_gid(blk.ncn - 1, b[high]))
                vals_p.append(np.full(high.sum(), -2 / blk.hn))
                gp_off[row[high]] += 2 * pout / blk.hn
        self.lap = _coo(rows_l, cols_l, vals_l, (self.n_unk, g.n_faces))
        self.lap_off = lap_off
        self.gradp = _coo(rows_p, cols_p, vals_p, (self.n_unk, g.n_cells))
        self.gradp_off = gp_off

    def conv(self, Un: np.ndarray) -> sp.csr_matrix:
        """Centred divergence-form convection ``div(Un (x) u)`` as a matrix acting on ``u``.

        With a discretely divergence-free ``Un`` and no flux through the
        boundary, the matrix is skew-symmetric under the face inner product.
        """
        g = self.g
        rows, cols, vals = [], [], []
        for blk in self.blocks:
            a, b = self._unknown_ab(blk)
            gid = blk.face_gid(a, b)
            row = self.row_of[gid]
            if blk.pn:
                e = (a + 1) % blk.ncn
                w = (a - 1) % blk.ncn
                cl, cr = (a - 1) % blk.ncn, a % blk.ncn
            else:
                e = np.where(a + 1 > blk.ncn, a, a + 1)
                w = np.where(a - 1 < 0, a, a - 1)
                cl, cr = np.clip(a - 1, 0, blk.ncn - 1), np.clip(a, 0, blk.ncn - 1)
            if blk.pt:
                jn, js = (b + 1) % blk.nct, b
                n_nb, s_nb = (b + 1) % blk.nct, (b - 1) % blk.nct
            else:
                jn, js = b + 1, b
                n_nb = np.where(b + 1 >= blk.nct, b, b + 1)
                s_nb = np.where(b - 1 < 0, b, b - 1)
            Ua = Un[gid]
            Fe = blk.ht * 0.5 * (Ua + Un[blk.face_gid(e, b)])
            Fw = blk.ht * 0.5 * (Un[blk.face_gid(w, b)] + Ua)
            Fn = blk.hn * 0.5 * (Un[blk.other_gid(cl, jn)] + Un[blk.other_gid(cr, jn)])
            Fs = blk.hn * 0.5 * (Un[blk.other_gid(cl, js)] + Un[blk.other_gid(cr, js)])
            inv = 1.0 / (blk.hn * blk.ht)
            rows += [row] * 5
            cols += [gid, blk.face_gid(e, b), blk.face_gid(w, b), blk.face_gid(a, n_nb), blk.face_gid(a, s_nb)]
            vals += [0.5 * inv * (Fe - Fw + Fn - Fs), 0.5 * inv * Fe, -0.5 * inv * Fw,
                     0.5 * inv * Fn, -0.5 * inv * Fs]
        return _coo(rows, cols, vals, (self.n_unk, g.n_faces))

    def full(self, u: np.ndarray) -> np.ndarray:
        return self.P @ u + self.Ub


# ----------------------------------------------------------------------------
# public functional operators (closed-box closures)

def grad_c2f(s: np.ndarray, g: GridSpec) -> FaceField:
    """Centred difference across every face; zero at wall faces (Neumann)."""
    s = check_scalar(s, g)
    ops = closed_ops(g)[0]
    return FaceField.from_compact(ops.grad(s.ravel()), g)


def div_f2c(f: FaceField, g: GridSpec) -> np.ndarray:
    """Net face flux of each cell divided by the cell area."""
    D = closed_ops(g)[1]
    return (D @ f.compact(g)).reshape(g.nx, g.ny)


def div_coeff_grad(a: np.ndarray, s: np.ndarray, g: GridSpec) -> np.ndarray:
    """``div(a grad s)`` with ``a`` averaged arithmetically to faces."""
    a = check_scalar(a, g, "coefficient")
    s = check_scalar(s, g)
    if np.any(a < 0):
        raise ValueError("div_coeff_grad needs a nonnegative coefficient")
    ops, D, _, _ = closed_ops(g)
    return (D @ (ops.face(a.ravel()) * ops.grad(s.ravel()))).reshape(g.nx, g.ny)


def advect_div_form(u: FaceField, s: np.ndarray, g: GridSpec) -> np.ndarray:
    """``div(u s)`` with the face value of ``s`` taken as the two-cell average."""
    s = check_scalar(s, g)
    ops, D, _, _ = closed_ops(g)
    return (D @ (u.compact(g) * ops.face(s.ravel()))).reshape(g.nx, g.ny)


def inner(s1: np.ndarray, s2: np.ndarray, g: GridSpec) -> float:
    s1 = check_scalar(s1, g)
    s2 = check_scalar(s2, g)
    return float(g.cell_area * np.sum(s1 * s2))


def inner_face(f1: FaceField, f2: FaceField, g: GridSpec) -> float:
    w = closed_ops(g)[3]
    return float(np.sum(w * f1.compact(g) * f2.compact(g)))


def grad_sq_cells(s: np.ndarray, g: GridSpec) -> np.ndarray:
    """Cell values of ``|grad s|^2`` as the average of squared face gradients."""
    s = check_scalar(s, g)
    ops, _, C, _ = closed_ops(g)
    return (C @ ops.grad(s.ravel()) ** 2).reshape(g.nx, g.ny)
