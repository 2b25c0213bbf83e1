"""Product quality metrics: SNR, radially averaged power spectra and
multi-temporal registration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientTiePointsError, InvalidRegionError
from .geocal import ErrorStats, dense_match, error_stats, tie_arrays

log = logging.getLogger(__name__)

SNR_INFINITE = math.inf
MAX_DETRENDED_RELATIVE_STD = 0.05
THIRDS = ("low", "mid", "high")


# -- SNR -------------------------------------------------------------------------


@dataclass(frozen=True)
class SNRReport:
    band: int
    mean: float
    std: float
    snr: float
    n: int
    mode: str = ""

    def row(self) -> str:
        snr = "inf" if math.isinf(self.snr) else f"{self.snr:.1f}"
        return f"{self.band:>4d} {self.mean:>12.5g} {self.std:>12.5g} {snr:>10} {self.n:>8d}"


def snr_table(reports) -> str:
    head = f"{'band':>4} {'mean':>12} {'std':>12} {'snr':>10} {'n':>8}"
    return "\n".join([head] + [r.row() for r in reports])


def _region_values(image, region):
    """Pixels and coordinates of ``region``: a boolean mask or (r0, r1, c0, c1)."""
    img = np.asarray(image, dtype=float)
    if region is None:
        mask = np.ones(img.shape, bool)
    elif isinstance(region, np.ndarray) and region.dtype == bool:
        mask = region
    else:
        r0, r1, c0, c1 = (int(v) for v in region)
        mask = np.zeros(img.shape, bool)
        mask[r0:r1, c0:c1] = True
    return img, mask


def measure_snr(product_or_image, region=None, band: int | None = None, sentinel: float = -9999.0,
                min_pixels: int = 100, max_relative_std: float = MAX_DETRENDED_RELATIVE_STD) -> SNRReport:
    """Mean over standard deviation after removing a best-fit plane.

    Accepts a :class:`ProductGrid` plus ``band`` or a bare 2-D image.
    Invalid pixels (sentinel or non-finite, or quality flags of a product)
    are excluded.
    """
    mode = ""
    if hasattr(product_or_image, "radiance"):
        if band is None:
            raise DomainError("band is required for a product")
        img = product_or_image.band(band)
        valid = product_or_image.valid(band)
        mode = str(getattr(product_or_image.mode, "value", product_or_image.mode))
    else:
        img = np.asarray(product_or_image, dtype=float)
        valid = np.ones(img.shape, bool)
    img, mask = _region_values(img, region)
    mask = mask & valid & np.isfinite(img) & (img != sentinel)
    if mask.sum() < min_pixels:
        raise InvalidRegionError(f"region has {int(mask.sum())} valid pixels, need {min_pixels}")
    r, c = np.nonzero(mask)
    v = img[mask]
    a = np.stack([np.ones_like(v), r, c], axis=1).astype(float)
    coef, *_ = np.linalg.lstsq(a, v, rcond=None)
    resid = v - a @ coef
    mean = float(v.mean())
    std = float(resid.std(ddof=3))
    if mean == 0:
        raise InvalidRegionError("region mean is zero")
    if std / abs(mean) > max_relative_std:
        raise InvalidRegionError(f"detrended relative std {std / abs(mean):.3g} exceeds {max_relative_std}")
    snr = SNR_INFINITE if std <= 1e-12 * abs(mean) else mean / std
    return SNRReport(int(band) if band is not None else 0, mean, std, float(snr), int(v.size), mode)


# -- spectra ---------------------------------------------------------------------


@dataclass
class SpectrumReport:
    """Radially averaged spectra (64 bins up to Nyquist) and per-third energy ratios."""

    frequency: np.ndarray
    image_psd: np.ndarray
    truth_psd: np.ndarray
    ratios: dict = field(default_factory=dict)

    @property
    def bin_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.image_psd / self.truth_psd


def radial_psd(image, nbins: int = 64, window: bool = True):
    """Radially averaged periodogram; frequencies in cycles per pixel (0..0.5)."""
    img = np.asarray(image, dtype=float)
    img = img - img.mean()
    if window:
        img = img * np.outer(np.hanning(img.shape[0]), np.hanning(img.shape[1]))
    p = np.abs(np.fft.fft2(img)) ** 2 / img.size
    fy = np.fft.fftfreq(img.shape[0])[:, None]
    fx = np.fft.fftfreq(img.shape[1])[None, :]
    f = np.hypot(fy, fx)
    edges = np.linspace(0.0, 0.5, nbins + 1)
    which = np.digitize(f.ravel(), edges) - 1
    inside = (which >= 0) & (which < nbins) & (f.ravel() > 0)
    sums = np.bincount(which[inside], p.ravel()[inside], minlength=nbins)
    counts = np.bincount(which[inside], minlength=nbins)
    psd = np.divide(sums, counts, out=np.zeros(nbins), where=counts > 0)
    return 0.5 * (edges[:-1] + edges[1:]), psd, counts


def power_spectrum_ratio(image, truth, nbins: int = 64, window: bool = True) -> SpectrumReport:
    """Energy of ``image`` relative to ``truth`` in the low/mid/high thirds of Nyquist."""
    image = np.asarray(image, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if image.shape != truth.shape:
        raise DomainError(f"image {image.shape} and truth {truth.shape} differ in size")
    if not (np.all(np.isfinite(image)) and np.all(np.isfinite(truth))):
        raise DomainError("spectra need fully valid images")
    f, pi, counts = radial_psd(image, nbins, window)
    _, pt, _ = radial_psd(truth, nbins, window)
    ratios = {}
    for k, name in enumerate(THIRDS):
        lo, hi = k / 6.0, (k + 1) / 6.0
        sel = (f >= lo) & ((f < hi) if k < 2 else (f <= hi)) & (counts > 0)
        et = float(np.sum(pt[sel] * counts[sel]))
        ei = float(np.sum(pi[sel] * counts[sel]))
        ratios[name] = ei / et if et > 0 else (1.0 if ei == 0 else math.inf)
    return SpectrumReport(f, pi, pt, ratios)


# -- multi-temporal --------------------------------------------------------------


@dataclass
class MultitemporalResult:
    pixels: ErrorStats
    meters: ErrorStats
    offsets: dict


def multitemporal_accuracy(product_a, product_b, band: int = 10, spacing: int = 12, patch: int = 15,
                           search: int = 4, threshold: float = 0.8) -> MultitemporalResult:
    """Registration of two L1C products on the same map grid.

    Offsets are the position in B minus the position in A (rows = along the
    map's north-south axis, cols = east-west).
    """
    for p in (product_a, product_b):
        if p.level != "L1C":
            raise DomainError("multi-temporal accuracy needs L1C products")
    ga, gb = product_a.grid, product_b.grid
    keys = ("lat1", "lat2", "lat0", "lon0", "pixel_size", "x0", "y0", "rows", "cols")
    if any(not np.isclose(ga[k], gb[k]) for k in keys):
        raise DomainError("products are not on the same map grid")
    ia, ib = product_a.band_index(band), product_b.band_index(band)
    va = product_a.quality[ia] == 0
    vb = product_b.quality[ib] == 0
    if (va & vb).sum() < patch * patch * 10:
        raise DomainError("products do not overlap enough")
    try:
        ties = dense_match(product_a.radiance[ia], product_b.radiance[ib], spacing=spacing,
                           patch=patch, search=search, threshold=threshold,
                           reference_valid=va, target_valid=vb)
    except InsufficientTiePointsError as exc:
        raise DomainError(f"insufficient overlap: {exc}") from exc
    arr = tie_arrays(ties)
    px = error_stats(arr["d_along"], arr["d_across"], arr["col"], units="px")
    return MultitemporalResult(px, px.scaled(float(ga["pixel_size"]), "m"), arr)
