"""PSNR, 3D SSIM, interpolation baselines and the method x reference report."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GeometryError
from .volume import ResampleMethod, Volume3D, resample

BASELINES = ("nearest", "linear", "spline")
COLUMNS = ("method", "reference", "psnr_db", "ssim")
MASK_FRACTION = 0.05

ArrayLike = Union[Volume3D, np.ndarray]


def _arr(v: ArrayLike) -> np.ndarray:
    return np.asarray(v.data if isinstance(v, Volume3D) else v, dtype=np.float64)


def _pair(pred, ref):
    p, r = _arr(pred), _arr(ref)
    if p.shape != r.shape:
        raise GeometryError(f"prediction {p.shape} and reference {r.shape} differ in shape")
    return p, r


def foreground_mask(ref: ArrayLike, fraction: float = MASK_FRACTION) -> np.ndarray:
    r = _arr(ref)
    return r > fraction * r.max()


def _data_range(r: np.ndarray, data_range: Optional[float]) -> float:
    if data_range is None:
        data_range = float(r.max() - r.min())
    if not data_range > 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    return float(data_range)


def psnr(pred: ArrayLike, ref: ArrayLike, data_range: Optional[float] = None,
         mask: Optional[np.ndarray] = None) -> float:
    """Peak SNR in dB; ``inf`` when the prediction matches exactly.

    ``data_range`` defaults to the reference's max - min.
    """
    p, r = _pair(pred, ref)
    rng = _data_range(r, data_range)
    diff = (p - r) if mask is None else (p - r)[mask]
    mse = float(np.mean(diff ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(rng ** 2 / mse)


def ssim3d(pred: ArrayLike, ref: ArrayLike, window: int = 7, k1: float = 0.01, k2: float = 0.03,
           data_range: Optional[float] = None, mask: Optional[np.ndarray] = None) -> float:
    """Mean SSIM over all fully-contained ``window``^3 uniform windows.

    Local variances use the unbiased (N-1) normalization. With ``mask``,
    only window centres inside the mask are averaged.
    """
    p, r = _pair(pred, ref)
    if window % 2 != 1 or window < 3:
        raise ValueError(f"SSIM window must be odd and >= 3, got {window}")
    if window > min(p.shape):
        raise ValueError(f"SSIM window {window} exceeds the smallest axis of {p.shape}")
    rng = _data_range(r, data_range)
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2
    n = window ** 3
    cov_norm = n / (n - 1)

    def mean(a):
        return ndimage.uniform_filter(a, size=window, mode="reflect")

    mp, mr = mean(p), mean(r)
    vp = cov_norm * (mean(p * p) - mp * mp)
    vr = cov_norm * (mean(r * r) - mr * mr)
    cpr = cov_norm * (mean(p * r) - mp * mr)
    num = (2 * mp * mr + c1) * (2 * cpr + c2)
    den = (mp * mp + mr * mr + c1) * (vp + vr + c2)
    smap = num / den

    pad = (window - 1) // 2
    inner = (slice(pad, -pad),) * 3
    smap = smap[inner]
    if mask is not None:
        m = np.asarray(mask, dtype=bool)[inner]
        if not m.any():
            raise ValueError("mask leaves no SSIM windows")
        return float(smap[m].mean())
    return float(smap.mean())


def baseline_upsample(x: Volume3D, target_shape: Sequence[int],
                      method: ResampleMethod | str) -> Volume3D:
    return resample(x, target_shape, method)


@dataclass
class MetricRow:
    method: str
    reference: str
    psnr_db: float
    ssim: float


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)
    references: list[str] = field(default_factory=list)
    data_range: str = "reference"
    ssim_params: dict = field(default_factory=lambda: {"window": 7, "k1": 0.01, "k2": 0.03})
    masked: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def get(self, method: str, reference: str) -> MetricRow:
        for row in self.rows:
            if row.method == method and row.reference == reference:
                return row
        raise KeyError((method, reference))

    def to_dict(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "rows": [{**asdict(r), "psnr_db": _json_float(r.psnr_db)} for r in self.rows],
            "references": self.references,
            "data_range": self.data_range,
            "ssim_params": self.ssim_params,
            "masked": self.masked,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        rows = [MetricRow(r["method"], r["reference"], float(r["psnr_db"]), float(r["ssim"]))
                for r in d["rows"]]
        return cls(rows, list(d["references"]), d["data_range"], dict(d["ssim_params"]),
                   bool(d["masked"]), list(d["notes"]))

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def read_json(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([r.method, r.reference, repr(r.psnr_db), repr(r.ssim)])
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned text table: one line per method, PSNR/SSIM per reference."""
        refs = self.references
        head = ["method"] + [f"{ref} {col}" for ref in refs for col in ("PSNR", "SSIM")]
        lines = []
        for m in self.methods:
            cells = [m]
            for ref in refs:
                row = self.get(m, ref)
                cells += [f"{row.psnr_db:.4f}", f"{row.ssim:.4f}"]
            lines.append(cells)
        widths = [max(len(c[i]) for c in [head] + lines) for i in range(len(head))]
        fmt = "  ".join([f"{{:<{widths[0]}}}"] + [f"{{:>{w}}}" for w in widths[1:]])
        out = [fmt.format(*head), "-" * (sum(widths) + 2 * (len(widths) - 1))]
        out += [fmt.format(*cells) for cells in lines]
        return "\n".join(out)


def run_comparison(x_lr: Volume3D, references: Mapping[str, Volume3D],
                   outputs: Optional[Mapping[str, Volume3D]] = None,
                   methods: Sequence[str] = BASELINES + ("proposed",),
                   window: int = 7, k1: float = 0.01, k2: float = 0.03,
                   masked: bool = False) -> MetricsReport:
    """Score every method against every reference.

    Baseline methods interpolate ``x_lr`` straight onto each reference grid.
    Other methods are looked up in ``outputs``; an output on a different
    grid is linearly resampled to the reference and a note is recorded.
    """
    if not references:
        raise ConfigError("run_comparison needs at least one reference volume")
    outputs = dict(outputs or {})
    missing = [m for m in methods if m not in BASELINES and m not in outputs]
    if missing:
        raise ConfigError(f"no output volume supplied for methods {missing}")
    report = MetricsReport(
        references=list(references),
        ssim_params={"window": window, "k1": k1, "k2": k2},
        masked=masked,
    )
    for ref_name, ref in references.items():
        mask = foreground_mask(ref) if masked else None
        for method in methods:
            if method in BASELINES:
                pred = baseline_upsample(x_lr, ref.shape, method)
            else:
                pred = outputs[method]
                if pred.shape != ref.shape:
                    report.notes.append(
                        f"{method}: resampled {pred.shape} -> {ref.shape} (linear) for {ref_name}"
                    )
                    pred = resample(pred, ref.shape, "linear")
            report.rows.append(MetricRow(
                method, ref_name,
                psnr(pred, ref, mask=mask),
                ssim3d(pred, ref, window, k1, k2, mask=mask),
            ))
    return report
