"""3D volumes: data model, resampling, intensity normalization and file IO.

Two on-disk formats are supported:

* NIfTI-1 (``.nii`` / ``.nii.gz``) through nibabel. Spacing comes from
  ``pixdim`` and the origin from the affine translation.
* A raw fallback: ``<name>.raw`` holds little-endian float32 voxels in C
  order and ``<name>.raw.json`` is a text sidecar with shape, spacing and
  origin. This one round-trips bit-exactly.

Resampling treats voxel centres as aligned at the volume corners, so
``resample(v, v.shape)`` is exact and the pyramid shape laws are clean.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import FormatError, GeometryError, VolumeIOError

Shape3 = tuple[int, int, int]
Vec3 = tuple[float, float, float]

MIN_AXIS = 4


class ResampleMethod(str, enum.Enum):
    NEAREST = "nearest"
    LINEAR = "linear"
    SPLINE = "spline"

    @property
    def order(self) -> int:
        return {"nearest": 0, "linear": 1, "spline": 3}[self.value]


class NormMode(str, enum.Enum):
    MIN_MAX = "min_max_to_unit"
    ZSCORE = "zscore"


def _triple(values, name, cast=float):
    t = tuple(cast(v) for v in values)
    if len(t) != 3:
        raise GeometryError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Immutable 3D scalar grid with voxel spacing and origin (both in mm)."""

    data: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise GeometryError(f"volume data must be 3D, got {arr.ndim}D")
        if min(arr.shape) < 1:
            raise GeometryError(f"volume shape must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("volume data contains NaN or Inf")
        spacing = _triple(self.spacing, "spacing")
        if any(not math.isfinite(s) or s <= 0 for s in spacing):
            raise GeometryError(f"spacing must be strictly positive, got {spacing}")
        origin = _triple(self.origin, "origin")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> Shape3:
        return tuple(int(s) for s in self.data.shape)

    @property
    def extent(self) -> Vec3:
        """Physical size of the field of view, shape * spacing per axis."""
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    def with_data(self, data: np.ndarray) -> "Volume3D":
        """Same geometry, new voxel values (shape must match)."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise GeometryError(f"data shape {data.shape} != volume shape {self.shape}")
        return Volume3D(data, self.spacing, self.origin)

    def same_grid(self, other: "Volume3D", rtol: float = 1e-6) -> bool:
        return self.shape == other.shape and np.allclose(
            self.spacing, other.spacing, rtol=rtol, atol=0
        )


@dataclass(frozen=True)
class NormParams:
    shift: float
    scale: float
    mode: NormMode = NormMode.MIN_MAX

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        object.__setattr__(self, "mode", NormMode(self.mode))

    def apply(self, arr):
        return (arr - self.shift) / self.scale

    def invert(self, arr):
        return arr * self.scale + self.shift

    def to_dict(self) -> dict:
        return {"shift": self.shift, "scale": self.scale, "mode": self.mode.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NormParams":
        return cls(float(d["shift"]), float(d["scale"]), NormMode(d["mode"]))


def normalize(v: Volume3D, mode: NormMode | str = NormMode.MIN_MAX):
    """Map intensities to a standard range; returns ``(volume, params)``.

    ``min_max_to_unit`` maps [min, max] onto [-1, 1]. A constant volume gets
    ``scale=1, shift=min`` and normalizes to all zeros.
    """
    mode = NormMode(mode)
    arr = v.data
    if mode is NormMode.MIN_MAX:
        lo, hi = float(arr.min()), float(arr.max())
        if hi > lo:
            params = NormParams((hi + lo) / 2.0, (hi - lo) / 2.0, mode)
        else:
            params = NormParams(lo, 1.0, mode)
    else:
        mean, std = float(arr.mean()), float(arr.std())
        params = NormParams(mean, std if std > 0 else 1.0, mode)
    return v.with_data(params.apply(arr)), params


def denormalize(v: Volume3D, params: NormParams) -> Volume3D:
    return v.with_data(params.invert(v.data))


def _check_target(target_shape) -> Shape3:
    target = _triple(target_shape, "target_shape", int)
    if min(target) < 1:
        raise GeometryError(f"target_shape components must be >= 1, got {target}")
    return target


def resampled_spacing(v: Volume3D, target_shape: Sequence[int]) -> Vec3:
    return tuple(s * n / t for s, n, t in zip(v.spacing, v.shape, target_shape))


def resample_array(arr: np.ndarray, target_shape: Shape3, order: int) -> np.ndarray:
    if tuple(arr.shape) == tuple(target_shape):
        return np.array(arr, dtype=np.float64)
    zoom = [t / n for t, n in zip(target_shape, arr.shape)]
    out = ndimage.zoom(arr, zoom, order=order, mode="nearest", grid_mode=False)
    if out.shape != tuple(target_shape):
        # ndimage derives the output shape by rounding shape*zoom
        raise GeometryError(f"resample produced {out.shape}, expected {target_shape}")
    return out


def resample(v: Volume3D, target_shape: Sequence[int],
             method: ResampleMethod | str = ResampleMethod.LINEAR) -> Volume3D:
    """Interpolate onto a grid of ``target_shape`` covering the same field of view."""
    target = _check_target(target_shape)
    method = ResampleMethod(method)
    out = resample_array(v.data, target, method.order)
    return Volume3D(out, resampled_spacing(v, target), v.origin)


def antialias_sigma(in_shape: Sequence[int], target_shape: Sequence[int]) -> Vec3:
    """Per-axis Gaussian pre-blur (voxels): half the zoom-out factor, 0 when not shrinking."""
    return tuple(0.5 * n / t if t < n else 0.0 for n, t in zip(in_shape, target_shape))


def downsample(v: Volume3D, target_shape: Sequence[int]) -> Volume3D:
    """Gaussian pre-blur followed by linear interpolation."""
    target = _check_target(target_shape)
    sigma = antialias_sigma(v.shape, target)
    arr = v.data
    if any(s > 0 for s in sigma):
        arr = ndimage.gaussian_filter(arr, sigma, mode="nearest")
    out = resample_array(arr, target, 1)
    return Volume3D(out, resampled_spacing(v, target), v.origin)


def scaled_shape(shape: Sequence[int], factor: float | Sequence[float],
                 minimum: int = MIN_AXIS) -> Shape3:
    """``round(shape / factor)`` per axis, never below ``minimum``."""
    if np.isscalar(factor):
        factor = (factor,) * 3
    return tuple(max(minimum, int(round(n / f))) for n, f in zip(shape, factor))


# -- file IO -----------------------------------------------------------------

def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _f32(x) -> float:
    # shortest decimal that round-trips the stored float32, so 0.9766 stays 0.9766
    return float(str(np.float32(x)))


def load_volume(path) -> Volume3D:
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such volume file: {path}")
    if _is_nifti(path):
        return _load_nifti(path)
    if path.suffix == ".raw":
        return _load_raw(path)
    raise FormatError(f"unsupported volume format: {path.name} (use .nii, .nii.gz or .raw)")


def save_volume(v: Volume3D, path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise VolumeIOError(f"parent directory does not exist: {path.parent}")
    try:
        if _is_nifti(path):
            _save_nifti(v, path)
        elif path.suffix == ".raw":
            _save_raw(v, path)
        else:
            raise FormatError(f"unsupported volume format: {path.name}")
    except PermissionError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc


def _load_nifti(path: Path) -> Volume3D:
    import nibabel as nib

    try:
        img = nib.load(str(path))
        hdr = img.header
        data = np.asarray(img.dataobj, dtype=np.float64)
    except Exception as exc:
        raise FormatError(f"corrupt NIfTI file {path}: {exc}") from exc
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise FormatError(f"dim: expected a 3D volume in {path}, got shape {data.shape}")
    pixdim = hdr["pixdim"][1:4]
    if any(not (p > 0) for p in pixdim):
        raise FormatError(f"pixdim: non-positive spacing {tuple(pixdim)} in {path}")
    affine = img.affine
    origin = tuple(_f32(o) for o in affine[:3, 3])
    spacing = tuple(_f32(p) for p in pixdim)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"data: NaN/Inf voxels in {path}")
    return Volume3D(data, spacing, origin)


def _save_nifti(v: Volume3D, path: Path) -> None:
    import nibabel as nib

    affine = np.diag([*v.spacing, 1.0])
    affine[:3, 3] = v.origin
    img = nib.Nifti1Image(v.data.astype(np.float32), affine)
    img.header.set_zooms(v.spacing)
    nib.save(img, str(path))


def _load_raw(path: Path) -> Volume3D:
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"header: missing sidecar {side.name} for {path}")
    try:
        header = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"header: unreadable sidecar {side}: {exc}") from exc
    for key in ("shape", "spacing", "origin"):
        if key not in header:
            raise FormatError(f"{key}: missing from header {side}")
    shape = header["shape"]
    if not isinstance(shape, list) or len(shape) != 3:
        raise FormatError(f"shape: expected 3 axes in {side}, got {shape}")
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != int(np.prod(shape)):
        raise FormatError(
            f"shape: header says {shape} ({int(np.prod(shape))} voxels) "
            f"but {path.name} holds {payload.size}"
        )
    try:
        return Volume3D(payload.reshape(shape), header["spacing"], header["origin"])
    except GeometryError as exc:
        raise FormatError(f"{side}: {exc}") from exc


def _save_raw(v: Volume3D, path: Path) -> None:
    v.data.astype("<f4").tofile(path)
    header = {
        "shape": list(v.shape),
        "spacing": list(v.spacing),
        "origin": list(v.origin),
        "dtype": "float32",
        "order": "C",
    }
    _sidecar(path).write_text(json.dumps(header, indent=2) + os.linesep)
