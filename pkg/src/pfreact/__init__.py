"""Phase-field model with interfacial reaction, transmembrane transport and interface deformation."""

from .mesh import FaceField, GridSpec
from .physics import PhysParams
from .scheme import SchemeConfig, State, Stepper, step
from .diagnostics import energy, dissipation, total_mass
from .scenarios import ScenarioConfig, default_config, simulate

__all__ = ["FaceField", "GridSpec", "PhysParams", "SchemeConfig", "State", "Stepper", "step",
           "energy", "dissipation", "total_mass", "ScenarioConfig", "default_config", "simulate"]
