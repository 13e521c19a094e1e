"""Single-volume multi-scale GAN super-resolution for 3D perfusion-like images.

Submodules: ``volume`` (data model, resampling, IO), ``pyramid``,
``networks``, ``losses``, ``trainer``, ``superres``, ``metrics``,
``phantom`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ASLGANError, ConfigError, FormatError, GeometryError, NumericError, SpecError, VolumeIOError,
)
from .volume import (  # noqa: E402
    NormMode, NormParams, ResampleMethod, Volume3D, denormalize, downsample, load_volume,
    normalize, resample, save_volume,
)
