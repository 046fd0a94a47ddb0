"""Logarithmic energies, capacities and re-distribution on random G-delta sets of [0, 1]."""

from .equilibrium import CapacityEstimate, discretize, refine_estimate, solve_equilibrium
from .kernel import (
    SELF_ENERGY_UNIT,
    Atom,
    DensitySpec,
    EnergyBreakdown,
    Interval,
    PiecewiseMeasure,
    measure_energy,
    mutual_energy,
)
from .setgen import CenterSequence, DensityTable, LengthSchedule

__version__ = "0.1.0"

__all__ = [
    "SELF_ENERGY_UNIT",
    "Atom",
    "CapacityEstimate",
    "CenterSequence",
    "DensitySpec",
    "DensityTable",
    "EnergyBreakdown",
    "Interval",
    "LengthSchedule",
    "PiecewiseMeasure",
    "discretize",
    "measure_energy",
    "mutual_energy",
    "refine_estimate",
    "solve_equilibrium",
]
