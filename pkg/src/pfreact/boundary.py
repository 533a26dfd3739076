"""Boundary plans: per-side velocity and scalar conditions on wall axes.

A side is one of ``left`` (x=0), ``right`` (x=lx), ``bottom`` (y=0) and
``top`` (y=ly).  Sides only exist on axes whose family is ``wall``.

Velocity
    ``normal[side]`` holds one value per boundary face along the side.  A
    finite value is a Dirichlet normal velocity (0 for no-slip, nonzero for
    inflow); ``NaN`` marks a pressure outlet (normal velocity is an unknown,
    pressure is pinned to ``outlet_pressure``).
    ``tangential[side]`` is the tangential wall speed (moving walls); it is
    ignored next to outlet faces, where the tangential velocity is given a
    zero normal derivative.

Scalars
    ``scalar[field][side]`` holds Dirichlet values per boundary face, ``NaN``
    meaning homogeneous Neumann.  Only ``c1`` supports Dirichlet data; its
    chemical potential then takes the boundary value ``ln(c1 + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import GridSpec

SIDES = ("left", "right", "bottom", "top")
DIRICHLET_SCALARS = ("c1",)


def side_length(g: GridSpec, side: str) -> int:
    return g.ny if side in ("left", "right") else g.nx


def wall_sides(g: GridSpec) -> tuple[str, ...]:
    sides = []
    if g.bc_x == "wall":
        sides += ["left", "right"]
    if g.bc_y == "wall":
        sides += ["bottom", "top"]
    return tuple(sides)


@dataclass
class BoundaryPlan:
    normal: dict[str, np.ndarray] = field(default_factory=dict)
    tangential: dict[str, float] = field(default_factory=dict)
    scalar: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    outlet_pressure: float = 0.0

    @classmethod
    def closed(cls, g: GridSpec) -> "BoundaryPlan":
        """No-slip walls and homogeneous Neumann scalars on every wall side."""
        return cls(normal={s: np.zeros(side_length(g, s)) for s in wall_sides(g)})

    def validate(self, g: GridSpec) -> None:
        sides = wall_sides(g)
        for name, table in (("normal", self.normal), ("tangential", self.tangential)):
            for s in table:
                if s not in sides:
                    raise ValueError(f"{name} condition on side {s!r}, which is not a wall side of this grid")
        for s in sides:
            if s not in self.normal:
                raise ValueError(f"missing normal velocity data for wall side {s!r}")
            if np.shape(self.normal[s]) != (side_length(g, s),):
                raise ValueError(f"normal velocity on {s!r} has shape {np.shape(self.normal[s])}, "
                                 f"expected ({side_length(g, s)},)")
        for fname, sides_data in self.scalar.items():
            if fname not in DIRICHLET_SCALARS:
                raise ValueError(f"Dirichlet data is only supported for {DIRICHLET_SCALARS}, got {fname!r}")
            for s, vals in sides_data.items():
                if s not in sides:
                    raise ValueError(f"scalar Dirichlet data on non-wall side {s!r}")
                if np.shape(vals) != (side_length(g, s),):
                    raise ValueError(f"scalar data for {fname!r} on {s!r} has wrong shape")
                vals = np.asarray(vals)
                if np.any(vals[np.isfinite(vals)] <= -1.0):
                    raise ValueError(f"Dirichlet {fname} must exceed -1")

    def is_outlet(self, side: str) -> np.ndarray:
        if side not in self.normal:
            return np.zeros(0, dtype=bool)
        return np.isnan(self.normal[side])

    @property
    def has_outlet(self) -> bool:
        return any(np.isnan(v).any() for v in self.normal.values())

    @property
    def is_closed(self) -> bool:
        """True when no mass or work crosses the boundary."""
        if self.has_outlet or self.scalar:
            return False
        if any(np.any(v != 0.0) for v in self.normal.values()):
            return False
        return all(t == 0.0 for t in self.tangential.values())

    def scalar_values(self, fname: str, side: str, n: int) -> np.ndarray:
        vals = self.scalar.get(fname, {}).get(side)
        if vals is None:
            return np.full(n, np.nan)
        return np.asarray(vals, dtype=float)
