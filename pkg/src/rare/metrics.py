"""PSNR and SSIM on magnitude images, and run-level evaluation tables."""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricReport",
    "psnr",
    "ssim",
    "gaussian_window",
    "evaluate_images",
    "evaluate_run",
    "format_table",
    "phase_curves",
    "SSIM_K1",
    "SSIM_K2",
]

SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _magnitudes(x, ref):
    x = np.abs(np.asarray(x))
    ref = np.abs(np.asarray(ref))
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    if x.ndim != 3:
        raise ValueError("expected (phase, x, y) or (x, y) images")
    return x, ref


def psnr(x, ref, peak=None):
    """Per-phase PSNR in dB on magnitudes.

    ``peak`` defaults to the largest magnitude in ``ref``.  Phases where
    ``x`` equals ``ref`` get ``inf``.

    Returns
    -------
    per_phase : ndarray
    mean : float
        Mean over phases (``inf`` if any phase is identical).
    """
    x, ref = _magnitudes(x, ref)
    peak = float(ref.max()) if peak is None else float(peak)
    if peak <= 0:
        raise ValueError("reference is zero; PSNR undefined")
    mse = np.mean((x - ref) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        per_phase = 10.0 * np.log10(peak * peak / mse)
    return per_phase, float(np.mean(per_phase))


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g


def _filter_valid(img, g):
    # separable weighted sums over every fully contained window
    n = g.size
    h, w = img.shape
    if h < n or w < n:
        raise ValueError(f"image {img.shape} smaller than the {n}x{n} window")
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ g


def _ssim_map(a, b, c1, c2, g):
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def _ssim_global(a, b, c1, c2):
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean((a - mu_a) ** 2)
    var_b = np.mean((b - mu_b) ** 2)
    cov = np.mean((a - mu_a) * (b - mu_b))
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )


def ssim(x, ref, data_range=None, mode="window", win_size=11, sigma=1.5,
         k1=SSIM_K1, k2=SSIM_K2):
    """Per-phase SSIM on magnitudes.

    Parameters
    ----------
    x, ref : ndarray, shape (p, nx, ny) or (nx, ny)
    data_range : float, optional
        ``L`` in the stabilising constants; defaults to the dynamic range
        (max - min) of ``|ref|``.
    mode : {"window", "global"}
        ``"window"`` averages the index over all valid Gaussian-weighted
        ``win_size`` windows; ``"global"`` evaluates it once per phase.

    Returns
    -------
    per_phase : ndarray
    mean : float
    """
    x, ref = _magnitudes(x, ref)
    if data_range is None:
        data_range = float(ref.max() - ref.min())
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    if mode == "window":
        g = gaussian_window(win_size, sigma)
        per = np.array([_ssim_map(a, b, c1, c2, g).mean() for a, b in zip(x, ref)])
    elif mode == "global":
        per = np.array([_ssim_global(a, b, c1, c2) for a, b in zip(x, ref)])
    else:
        raise ValueError(f"unknown SSIM mode {mode!r}")
    return per, float(per.mean())


@dataclass
class MetricReport:
    """Scores of one image against one reference.

    ``reference_kind`` is ``"groundtruth"`` or ``"reference"``; scores
    against a non-groundtruth reference are relative (rPSNR / rSSIM).
    """

    method: str
    psnr_per_phase: np.ndarray
    ssim_per_phase: np.ndarray
    reference_kind: str = "groundtruth"
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reference_kind not in ("groundtruth", "reference"):
            raise ValueError(f"unknown reference kind {self.reference_kind!r}")

    @property
    def psnr(self):
        return float(np.mean(self.psnr_per_phase))

    @property
    def ssim(self):
        return float(np.mean(self.ssim_per_phase))

    @property
    def identical(self):
        return bool(np.all(np.isinf(self.psnr_per_phase)))

    @property
    def metric_names(self):
        if self.reference_kind == "reference":
            return "rPSNR", "rSSIM"
        return "PSNR", "SSIM"


def evaluate_images(x, ref, method, reference_kind="groundtruth", labels=None, **ssim_kw):
    p, _ = psnr(x, ref)
    s, _ = ssim(x, ref, **ssim_kw)
    return MetricReport(method, p, s, reference_kind, dict(labels or {}))


def _load(entry, loader):
    img = entry.get("image")
    return loader(img) if isinstance(img, str) else np.asarray(img)


def evaluate_run(results, references, reference_kind="groundtruth", loader=None, **ssim_kw):
    """Score every result against the reference of its case.

    Parameters
    ----------
    results : list of dict
        Entries with keys ``case``, ``method``, ``image`` (array or path) and
        optional ``rate``, ``snr_db``.
    references : dict
        ``{case: image or path}``.
    loader : callable, optional
        Reads an image path; defaults to :func:`rare.io.read_image`.

    Returns
    -------
    list of MetricReport
    """
    if loader is None:
        from .io import read_image as loader
    ref_cache = {}
    reports = []
    for entry in results:
        case = entry["case"]
        if case not in references:
            raise KeyError(f"no reference for case {case!r}")
        if case not in ref_cache:
            ref = references[case]
            ref_cache[case] = loader(ref) if isinstance(ref, str) else np.asarray(ref)
        labels = {k: entry.get(k) for k in ("case", "rate", "snr_db")}
        reports.append(
            evaluate_images(_load(entry, loader), ref_cache[case], entry["method"],
                            reference_kind, labels, **ssim_kw)
        )
    return reports


def _fmt(v):
    if isinstance(v, float):
        if np.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


def format_table(reports, sep="\t", aggregate=True):
    """Delimited table, one row per (method, rate, snr) cell or per report.

    Cell rows average the per-image mean scores; an identical image shows
    ``inf`` PSNR.
    """
    if not reports:
        raise ValueError("no reports")
    psnr_name, ssim_name = reports[0].metric_names
    if not aggregate:
        header = ["method", "case", "rate", "snr_db", psnr_name, ssim_name]
        rows = [
            [r.method, r.labels.get("case"), r.labels.get("rate"), r.labels.get("snr_db"),
             r.psnr, r.ssim]
            for r in reports
        ]
    else:
        cells = defaultdict(list)
        for r in reports:
            cells[(r.method, r.labels.get("rate"), r.labels.get("snr_db"))].append(r)
        header = ["method", "rate", "snr_db", "n", psnr_name, ssim_name]
        rows = []
        for (method, rate, snr), rs in cells.items():
            rows.append([method, rate, snr, len(rs),
                         float(np.mean([r.psnr for r in rs])),
                         float(np.mean([r.ssim for r in rs]))])
    lines = [sep.join(header)] + [sep.join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def phase_curves(reports, sep="\t"):
    """Plot data: one row per (method, case, phase) with PSNR and SSIM."""
    lines = [sep.join(["method", "case", "phase", "psnr", "ssim"])]
    for r in reports:
        for p, (a, b) in enumerate(zip(r.psnr_per_phase, r.ssim_per_phase)):
            lines.append(sep.join([r.method, str(r.labels.get("case")), str(p),
                                   _fmt(float(a)), _fmt(float(b))]))
    return "\n".join(lines) + "\n"
