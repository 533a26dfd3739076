import numpy as np
import pytest

from pfreact.mesh import FaceField, GridSpec
from pfreact.physics import PhysParams
from pfreact.scheme import State, complete_potentials


def random_state(g: GridSpec, p: PhysParams, rng: np.random.Generator, amp_u: float = 0.3,
                 divergence_free: bool = True) -> State:
    """Smooth-ish random state with admissible concentrations and a discretely solenoidal velocity."""
    from pfreact.mesh import closed_ops

    shape = (g.nx, g.ny)
    phi = np.clip(0.6 * rng.standard_normal(shape), -0.98, 0.98)
    c1, c2, c3 = (0.5 * rng.random(shape) + 0.1 for _ in range(3))
    u = FaceField.zeros(g)
    if amp_u:
        # velocity from a stream function on the grid nodes keeps div u = 0 exactly
        nxn = g.nx if g.px else g.nx + 1
        nyn = g.ny if g.py else g.ny + 1
        psi = amp_u * rng.standard_normal((nxn, nyn))
        if not g.px:
            psi[0, :] = psi[-1, :] = 0.0
        if not g.py:
            psi[:, 0] = psi[:, -1] = 0.0
        # u = d psi / dy on x-faces, v = -d psi / dx on y-faces
        if g.px:
            ux = (np.roll(psi, -1, axis=1) - psi) / g.hy if g.py else (psi[:, 1:] - psi[:, :-1]) / g.hy
            u.x[:-1] = ux
            u.x[-1] = ux[0]
        else:
            u.x[:] = (np.roll(psi, -1, axis=1) - psi) / g.hy if g.py else (psi[:, 1:] - psi[:, :-1]) / g.hy
        if g.py:
            vy = -((np.roll(psi, -1, axis=0) - psi) / g.hx if g.px else (psi[1:, :] - psi[:-1, :]) / g.hx)
            u.y[:, :-1] = vy
            u.y[:, -1] = vy[:, 0]
        else:
            u.y[:] = -((np.roll(psi, -1, axis=0) - psi) / g.hx if g.px else (psi[1:, :] - psi[:-1, :]) / g.hx)
        if divergence_free:
            D = closed_ops(g)[1]
            assert np.max(np.abs(D @ u.compact(g))) < 1e-9 * max(1.0, np.max(np.abs(psi)) / g.hx / g.hy)
    z = np.zeros(shape)
    s = State(0.0, u, z.copy(), phi, z.copy(), c1, z.copy(), c2, z.copy(), c3, z.copy())
    return complete_potentials(s, p, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
