from .base import (
    DynamicalSystem,
    SystemSpec,
    distance,
    distance_many,
    is_within_bounds,
    normalize_state,
    sample_uniform_control,
    sample_uniform_state,
    state_diff,
    translate_state,
    wrap_to_pi,
)
from .systems import (
    Acrobot,
    CarWithTrailer,
    DoubleIntegrator,
    PlanarRotor,
    Unicycle1,
    Unicycle2,
    make_system,
    system_names,
)

__all__ = [
    "DynamicalSystem", "SystemSpec", "distance", "distance_many",
    "is_within_bounds", "normalize_state", "sample_uniform_control",
    "sample_uniform_state", "state_diff", "translate_state", "wrap_to_pi",
    "Acrobot", "CarWithTrailer", "DoubleIntegrator", "PlanarRotor",
    "Unicycle1", "Unicycle2", "make_system", "system_names",
]
