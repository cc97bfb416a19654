"""Open-quantum-system dynamics from exponential bath decompositions.

Modules
-------
bath      spectral densities, correlation functions and power spectra
expfit    exponential decompositions of C(t) and their serialization
rates     closed-form cumulant, Redfield and GKLS rates, and quadrature oracles
dynamics  generators, dynamical maps, propagators, TCL and Volterra solvers
thermo    bath-resolved heat currents, fidelity and trace distance
cli       the ``openbath`` command and its scenario presets
"""
from ._backend import NAME as BACKEND
from .bath import BathSpec, OhmicFamily, StructuredFMO, Tabulated, UnderdampedBrownian, correlation, power_spectrum
from .dynamics import Coupling, SimulationResult, SystemSpec, propagate, propagate_map
from .errors import ConfigError, OpenBathError
from .expfit import ExponentialBath, load_exponential_bath, save_exponential_bath
from .rates import gamma_cumulant, xi_cumulant
from .thermo import HeatRecord, fidelity, trace_distance

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BathSpec",
    "OhmicFamily",
    "UnderdampedBrownian",
    "StructuredFMO",
    "Tabulated",
    "correlation",
    "power_spectrum",
    "ExponentialBath",
    "load_exponential_bath",
    "save_exponential_bath",
    "gamma_cumulant",
    "xi_cumulant",
    "Coupling",
    "SystemSpec",
    "SimulationResult",
    "propagate",
    "propagate_map",
    "HeatRecord",
    "fidelity",
    "trace_distance",
    "OpenBathError",
    "ConfigError",
]
