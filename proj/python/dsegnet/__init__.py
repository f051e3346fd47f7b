"""DilatedSegNet segmentation engine (C++ core)."""

from ._core import (  # noqa: F401
    ConfigError,
    DimensionError,
    Error,
    IoError,
    Model,
    ModelConfig,
    NumericError,
    colormap,
    colormap_rgb,
    confusion,
    count_macs,
    grad_suites,
    metrics,
    overlay,
    read_pgm,
    read_ppm,
    synth_sample,
    write_pgm,
    write_ppm,
)
