import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfreact.boundary import BoundaryPlan
from pfreact.mesh import (FaceField, GridSpec, VelocityOps, advect_div_form, boundary_face_mask, closed_ops,
                          div_coeff_grad, div_f2c, face_weights, grad_c2f, grad_sq_cells, inner, inner_face,
                          scalar_ops)

FAMILIES = st.sampled_from([("periodic", "periodic"), ("periodic", "wall"), ("wall", "periodic"), ("wall", "wall")])


@st.composite
def grids(draw, lo=6, hi=16):
    bx, by = draw(FAMILIES)
    nx = draw(st.integers(lo, hi))
    ny = draw(st.integers(lo, hi))
    lx = draw(st.floats(0.5, 2.0))
    ly = draw(st.floats(0.5, 2.0))
    return GridSpec(nx, ny, lx, ly, bx, by)


def _rand_faces(g, rng, zero_walls=True):
    f = rng.standard_normal(g.n_faces)
    if zero_walls:
        f[boundary_face_mask(g)] = 0.0
    return f


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(2, 8)
    with pytest.raises(ValueError):
        GridSpec(8, 8, -1.0, 1.0)
    with pytest.raises(ValueError):
        GridSpec(8, 8, bc_x="slip")


def test_face_counts():
    g = GridSpec(8, 6, 1.0, 1.0, "periodic", "wall")
    assert g.n_xfaces == 8 * 6
    assert g.n_faces == 8 * 6 + 8 * 7
    assert FaceField.zeros(g).x.shape == (9, 6)
    assert FaceField.zeros(g).y.shape == (8, 7)


def test_facefield_roundtrip_and_duplicate_check():
    g = GridSpec(6, 5, 1.0, 1.0, "periodic", "periodic")
    v = np.arange(g.n_faces, dtype=float)
    f = FaceField.from_compact(v, g)
    assert np.array_equal(f.compact(g), v)
    assert np.array_equal(f.x[0], f.x[-1])
    f.x[-1, 0] += 1.0
    with pytest.raises(ValueError):
        f.check(g)


def test_gradient_of_linear_function_is_exact():
    g = GridSpec(10, 8, 2.0, 1.0, "wall", "wall")
    X, Y = g.cell_centers()
    s = 3.0 * X - 2.0 * Y
    gr = grad_c2f(s, g)
    assert np.allclose(gr.x[1:-1], 3.0)
    assert np.allclose(gr.y[:, 1:-1], -2.0)
    assert np.all(gr.x[[0, -1]] == 0.0) and np.all(gr.y[:, [0, -1]] == 0.0)


def test_constant_has_zero_gradient_and_laplacian():
    g = GridSpec(7, 9, 1.0, 1.0, "periodic", "wall")
    c = np.full((7, 9), 2.5)
    assert np.all(grad_c2f(c, g).compact(g) == 0.0)
    assert np.all(div_coeff_grad(np.ones_like(c), c, g) == 0.0)
    assert np.all(grad_sq_cells(c, g) == 0.0)


def test_div_coeff_grad_rejects_negative_coefficient():
    g = GridSpec(6, 6)
    with pytest.raises(ValueError):
        div_coeff_grad(-np.ones((6, 6)), np.zeros((6, 6)), g)


def test_shape_errors():
    g = GridSpec(6, 6)
    with pytest.raises(ValueError):
        grad_c2f(np.zeros((5, 6)), g)
    with pytest.raises(ValueError):
        grad_c2f(np.full((6, 6), np.nan), g)


@settings(max_examples=40, deadline=None)
@given(g=grids(), seed=st.integers(0, 2 ** 31 - 1))
def test_discrete_adjointness(g, seed):
    """<grad s, f>_faces = -<s, div f>_cells for fields vanishing on wall faces."""
    rng = np.random.default_rng(seed)
    ops, D, _, w = closed_ops(g)
    s = rng.standard_normal(g.n_cells)
    f = _rand_faces(g, rng)
    lhs = np.sum(w * ops.grad(s) * f)
    rhs = -g.cell_area * np.sum(s * (D @ f))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.sum(np.abs(w * ops.grad(s) * f)))


@settings(max_examples=40, deadline=None)
@given(g=grids(), seed=st.integers(0, 2 ** 31 - 1))
def test_divergence_theorem(g, seed):
    """Sum of cell divergences equals the net flux through the wall faces."""
    rng = np.random.default_rng(seed)
    f = FaceField.from_compact(_rand_faces(g, rng, zero_walls=False), g)
    total = g.cell_area * np.sum(div_f2c(f, g))
    flux = 0.0
    if not g.px:
        flux += g.hy * (np.sum(f.x[-1]) - np.sum(f.x[0]))
    if not g.py:
        flux += g.hx * (np.sum(f.y[:, -1]) - np.sum(f.y[:, 0]))
    assert abs(total - flux) <= 1e-12 * max(1.0, np.sum(np.abs(f.compact(g))) * max(g.hx, g.hy))


@settings(max_examples=40, deadline=None)
@given(g=grids(), seed=st.integers(0, 2 ** 31 - 1))
def test_coefficient_laplacian_self_adjoint_and_negative(g, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((g.nx, g.ny)) + 0.1
    s, t = rng.standard_normal((2, g.nx, g.ny))
    Ls, Lt = div_coeff_grad(a, s, g), div_coeff_grad(a, t, g)
    scale = max(1.0, inner(np.abs(Ls), np.abs(t), g))
    assert abs(inner(Ls, t, g) - inner(s, Lt, g)) <= 1e-12 * scale
    assert inner(Ls, s, g) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(g=grids(), seed=st.integers(0, 2 ** 31 - 1))
def test_square_average_matches_face_energy(g, seed):
    """Cell sum of |grad s|^2 equals the face-weighted sum of squared gradients."""
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((g.nx, g.ny))
    gr = grad_c2f(s, g)
    lhs = g.cell_area * np.sum(grad_sq_cells(s, g))
    assert np.isclose(lhs, inner_face(gr, gr, g), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(g=grids(), seed=st.integers(0, 2 ** 31 - 1))
def test_advection_conserves_and_is_skew(g, seed):
    """div(u s) sums to zero for wall-tangent u and <div(u s), s> = 0 when div u = 0 discretely."""
    rng = np.random.default_rng(seed)
    ops, D, _, _ = closed_ops(g)
    # discretely solenoidal field: discrete curl of a node stream function
    u = FaceField.zeros(g)
    nxn = g.nx if g.px else g.nx + 1
    nyn = g.ny if g.py else g.ny + 1
    psi = rng.standard_normal((nxn, nyn))
    if not g.px:
        psi[[0, -1], :] = 0.0
    if not g.py:
        psi[:, [0, -1]] = 0.0
    dpy = (np.roll(psi, -1, 1) - psi)[:, :g.ny] if g.py else psi[:, 1:] - psi[:, :-1]
    dpx = (np.roll(psi, -1, 0) - psi)[:g.nx] if g.px else psi[1:] - psi[:-1]
    u.x[:nxn] = dpy / g.hy
    u.y[:, :nyn] = -dpx / g.hx
    if g.px:
        u.x[-1] = u.x[0]
    if g.py:
        u.y[:, -1] = u.y[:, 0]
    assert np.max(np.abs(D @ u.compact(g))) < 1e-9 / (g.hx * g.hy)
    s = rng.standard_normal((g.nx, g.ny))
    a = advect_div_form(u, s, g)
    scale = g.cell_area * np.sum(np.abs(a * s)) + 1.0
    assert abs(g.cell_area * np.sum(a)) <= 1e-12 * scale
    assert abs(inner(a, s, g)) <= 1e-12 * scale


def test_face_weights_sum_to_area_per_axis():
    g = GridSpec(7, 5, 1.4, 0.9, "wall", "wall")
    w = face_weights(g)
    assert np.isclose(w[:g.n_xfaces].sum(), g.lx * g.ly)
    assert np.isclose(w[g.n_xfaces:].sum(), g.lx * g.ly)


def test_dirichlet_scalar_face_values():
    g = GridSpec(6, 4, 1.0, 1.0, "wall", "wall")
    vals = np.array([np.nan, 2.0, 2.0, np.nan])
    ops = scalar_ops(g, {"left": vals})
    s = np.zeros(g.n_cells)
    f = ops.face(s)
    gr = ops.grad(s)
    left = np.arange(g.ny)  # x-face index i*ny + j with i = 0
    assert np.allclose(f[left], [0.0, 2.0, 2.0, 0.0])
    # outward derivative (g - s)/(h/2) -> gradient along +x is -(2 - 0)/(h/2)
    assert np.allclose(gr[left], [0.0, -4.0 / g.hx, -4.0 / g.hx, 0.0])


@settings(max_examples=20, deadline=None)
@given(g=grids(lo=4, hi=9), seed=st.integers(0, 2 ** 31 - 1))
def test_velocity_operators(g, seed):
    """Viscous operator symmetric negative semidefinite; pressure gradient is minus the divergence adjoint;
    convection by a solenoidal field is skew."""
    rng = np.random.default_rng(seed)
    V = VelocityOps(g, BoundaryPlan.closed(g))
    ops, D, _, w = closed_ops(g)
    wu = w[V.unk_idx]
    L = ((V.lap @ V.P).multiply(wu[:, None])).toarray()
    assert np.allclose(L, L.T, atol=1e-10 * np.abs(L).max())
    assert np.max(np.linalg.eigvalsh(0.5 * (L + L.T))) <= 1e-9 * np.abs(L).max()
    area_DP = g.cell_area * (D @ V.P).toarray()
    Gp = (V.gradp.multiply(wu[:, None])).toarray()
    assert np.allclose(Gp, -area_DP.T, atol=1e-12 * np.abs(Gp).max())
    u = rng.standard_normal(V.n_unk)
    # project onto discretely solenoidal fields through the pressure Poisson problem
    U = V.full(u)
    Dm = (D @ V.P).toarray()
    lam = np.linalg.lstsq(Dm @ np.diag(1 / wu) @ Dm.T, Dm @ u, rcond=None)[0]
    u = u - np.diag(1 / wu) @ Dm.T @ lam
    U = V.full(u)
    assert np.max(np.abs(D @ U)) < 1e-9
    C = (V.conv(U) @ V.P).toarray() * wu[:, None]
    assert np.allclose(C, -C.T, atol=1e-10 * max(1.0, np.abs(C).max()))
