"""auvnav: AUV navigation from passive acoustic direction-of-arrival and
Doppler measurements, with online beacon localization and acoustic-array
alignment.

Submodules:

* ``geometry``       rotation/angle kernels
* ``models``         process and measurement models, noise
* ``ukf``            unscented Kalman filter over the augmented state
* ``initializer``    robust NLS bootstrap of beacon + misalignment
* ``observability``  constraint-Jacobian rank analysis and sweeps
* ``simulate``       scenario and measurement-stream generation
* ``pipeline``       end-to-end runs, baselines, Monte Carlo campaigns
* ``io``             stream/CSV/config formats
* ``cli``            command-line entry points
"""

from . import (
    cli,
    geometry,
    initializer,
    io,
    models,
    observability,
    pipeline,
    simulate,
    ukf,
)

__version__ = "0.1.0"

__all__ = [
    "cli",
    "geometry",
    "initializer",
    "io",
    "models",
    "observability",
    "pipeline",
    "simulate",
    "ukf",
    "__version__",
]
