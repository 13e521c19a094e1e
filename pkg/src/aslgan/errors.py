"""Exception hierarchy shared across the package.

Each class carries an ``exit_code`` so the command line can map failures
onto its exit-code taxonomy without inspecting messages.
"""


class ASLGANError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(ASLGANError, ValueError):
    exit_code = 2
    category = "config"


class SpecError(ConfigError):
    """Network specs or parameter sets that do not line up."""


class VolumeIOError(ASLGANError, OSError):
    exit_code = 3
    category = "io"


class FormatError(VolumeIOError):
    """A file exists but its header or payload is not a usable 3D volume."""


class GeometryError(ASLGANError, ValueError):
    exit_code = 4
    category = "geometry"


class NumericError(ASLGANError, ArithmeticError):
    exit_code = 5
    category = "numeric"
