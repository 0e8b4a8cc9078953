"""Contractive weight-tied recurrent-depth training laboratory.

Thin wrapper over the compiled core. The main entry points are
:func:`run` and :func:`sweep`, which take the same JSON configs as the
``score-lab`` command-line tool and write the same artifacts.
"""

from scorelab._scorelab import (
    ConfigError,
    DataError,
    DivergedError,
    IoError,
    ShapeError,
    analyze,
    dirichlet_energy,
    format_dt,
    generate,
    normalize_config,
    param_counts,
    preprocess,
    run,
    sweep,
    time_warp,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DivergedError",
    "IoError",
    "ShapeError",
    "analyze",
    "dirichlet_energy",
    "format_dt",
    "generate",
    "normalize_config",
    "param_counts",
    "preprocess",
    "run",
    "sweep",
    "time_warp",
]
