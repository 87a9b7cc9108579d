"""Data-driven sliding-mode control for nonlinear systems with a known basis.

Typical use::

    from ddsmc import plants, data, synthesis, smc, simulation

    model = plants.make_pendulum()
    dist = plants.DisturbanceSpec(delta=0.01, seed=0)
    ds = data.collect(model, dist, data.ExcitationSpec(T=30, input_range=(-0.5, 0.5)))
    res = synthesis.solve(ds, model.B, model.D, synthesis.SynthesisConfig(N=[[1.0, 1.0]]))
    ctrl = smc.build_controller(res, model.B, smc.SmcParams(N=[[1.0, 1.0]]))
    trace = simulation.run(simulation.SimSpec(model, ctrl, dist, x0=(1.0, 0.0), steps=300))
"""

from .errors import (
    CollectionError,
    ConfigurationError,
    DdsmcError,
    DivergenceError,
    FormatError,
    InputError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "CollectionError",
    "ConfigurationError",
    "DdsmcError",
    "DivergenceError",
    "FormatError",
    "InputError",
    "NumericError",
]
