"""Diagnostics for feature codings: timing entropy, map correlations, histograms.

These reproduce the measurements used to compare coding choices: the
information entropy of spike-timing distributions (a more even
distribution over temporal bins carries more bits per spike), the Pearson
correlation between C1 maps across scales versus across orientations
(high between-scale correlation is what justifies fusing scales onto one
encoding neuron), and the raw C1 response histogram with its sub-noise
mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from .features import C1Maps


@dataclass
class Histogram:
    """Fixed-width binning with counts; densities are fractions of total."""

    bin_width: float
    lower: float
    counts: np.ndarray
    total: int

    def densities(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / self.total

    def edges(self) -> np.ndarray:
        return self.lower + self.bin_width * np.arange(len(self.counts) + 1)

    def mass_below(self, x: float) -> float:
        """Fraction of samples in bins entirely below x (bin-aligned x)."""
        if self.total == 0:
            return 0.0
        k = int(round((x - self.lower) / self.bin_width))
        k = max(0, min(k, len(self.counts)))
        return float(self.counts[:k].sum() / self.total)


def spike_entropy(spike_times, bin_ms: float, t_w: float) -> float:
    """Entropy in bits of the spike-timing distribution over fixed bins.

    Bins tile [0, t_w] with width bin_ms; a spike at exactly t_w falls in
    the last bin. Empty bins contribute nothing (0 log 0 := 0).
    """
    if bin_ms <= 0 or t_w <= 0:
        raise ValueError("bin_ms and t_w must be positive")
    times = np.asarray(spike_times, dtype=np.float64).ravel()
    if times.size == 0:
        raise ValueError("no spikes: entropy undefined")
    if np.any((times < 0) | (times > t_w)):
        raise ValueError("spike times outside [0, t_w]")
    n_bins = max(1, math.ceil(t_w / bin_ms - 1e-9))
    idx = np.minimum((times / bin_ms).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    p = counts[counts > 0] / times.size
    return float(-(p * np.log2(p)).sum())


@dataclass
class CcSummary:
    """Per-sample mean correlation coefficients, between scales and
    between orientations, plus how many degenerate pairs were skipped."""

    scale_cc: list = field(default_factory=list)
    orientation_cc: list = field(default_factory=list)
    skipped_pairs: int = 0

    def add_sample(self, c1: C1Maps) -> None:
        s, skipped_s = _mean_pairwise_cc(c1.values, axis="scale")
        o, skipped_o = _mean_pairwise_cc(c1.values, axis="orientation")
        if s is not None:
            self.scale_cc.append(s)
        if o is not None:
            self.orientation_cc.append(o)
        self.skipped_pairs += skipped_s + skipped_o

    @property
    def mean_scale_cc(self) -> float:
        return float(np.mean(self.scale_cc))

    @property
    def mean_orientation_cc(self) -> float:
        return float(np.mean(self.orientation_cc))


def _pearson(a: np.ndarray, b: np.ndarray):
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None                       # zero variance: undefined
    return float(np.dot(a, b) / (na * nb))


def _mean_pairwise_cc(values: np.ndarray, axis: str):
    """Mean Pearson CC over map pairs differing along one axis only.

    axis="scale": same orientation, different scales
    (n_orientations * C(n_scales, 2) pairs); axis="orientation" swaps the
    roles. Zero-variance maps are skipped and counted.
    """
    n_s, n_th = values.shape[:2]
    if axis == "scale":
        pair_sets = [[values[s, o] for s in range(n_s)] for o in range(n_th)]
    else:
        pair_sets = [[values[s, o] for o in range(n_th)] for s in range(n_s)]
    ccs, skipped = [], 0
    for maps in pair_sets:
        for i in range(len(maps)):
            for j in range(i + 1, len(maps)):
                cc = _pearson(maps[i], maps[j])
                if cc is None:
                    skipped += 1
                else:
                    ccs.append(cc)
    if not ccs:
        return None, skipped
    return float(np.mean(ccs)), skipped


def scale_cc(c1: C1Maps) -> float:
    """Mean CC between same-orientation, different-scale C1 maps."""
    mean, _ = _mean_pairwise_cc(c1.values, axis="scale")
    if mean is None:
        raise ValueError("all scale pairs degenerate (zero variance)")
    return mean


def orientation_cc(c1: C1Maps) -> float:
    """Mean CC between same-scale, different-orientation C1 maps."""
    mean, _ = _mean_pairwise_cc(c1.values, axis="orientation")
    if mean is None:
        raise ValueError("all orientation pairs degenerate (zero variance)")
    return mean


def response_histogram(responses, bin_width: float) -> Histogram:
    """Histogram of C1 responses on bin-aligned edges (multiples of width).

    All responses are binned, including any sub-noise mass; use
    :meth:`Histogram.mass_below` to report the fraction under a floor.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.asarray(responses, dtype=np.float64).ravel()
    if values.size == 0:
        return Histogram(bin_width=bin_width, lower=0.0,
                         counts=np.zeros(0, dtype=np.int64), total=0)
    lo = math.floor(values.min() / bin_width)
    hi = math.floor(values.max() / bin_width)
    idx = np.floor(values / bin_width).astype(np.int64) - lo
    counts = np.bincount(idx, minlength=hi - lo + 1)
    return Histogram(bin_width=bin_width, lower=lo * bin_width,
                     counts=counts, total=int(values.size))
