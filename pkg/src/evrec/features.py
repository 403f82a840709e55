"""Multiscale feature extraction and latency coding of event segments.

The feature front-end mirrors the simple/complex cell split of primary
visual cortex. Each incoming event stamps a bank of Gabor kernels onto
per-(scale, orientation) response maps (S1); responses decay
exponentially between events, so both edge geometry and event timing are
captured. Non-overlapping 2x2 max pooling condenses S1 into C1. C1
responses above a noise floor are then converted to spike times by
latency coding (strong response -> early spike) and grouped into
addressed spike trains by one of four fusion modes.

S1 bookkeeping is lazy: every cell stores (value, last update time) and
is only decayed when an event actually touches it, which costs one
kernel-sized patch per event instead of a whole-map sweep. A batched
numba kernel handles long streams; a numpy fallback keeps the module
usable without a JIT.

The log latency code maps a response ``r`` to ``u - v*ln(r)`` with the
normalizers chosen so the maximum training response fires at time 0 and
the noise floor fires at the window end. The linear baseline maps
``r -> t_w - (t_w/r_max)*r``. Both are strictly decreasing in ``r``;
responses above the fitted maximum clamp to time 0 instead of
extrapolating to negative times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:                                    # pragma: no cover
    _HAVE_NUMBA = False

from .events import US_PER_MS


class DegenerateCodingError(ValueError):
    """No training response exceeds the noise floor; coding is undefined."""


# ---------------------------------------------------------------------------
# Gabor bank

@dataclass(frozen=True)
class GaborConfig:
    """Filter-bank parameters; wavelength and width are tied to scale."""

    scales: tuple[int, ...] = (3, 5, 7, 9)
    sigmas: tuple[float, ...] = (1.2, 2.0, 2.8, 3.6)
    lambdas: tuple[float, ...] = (1.5, 2.5, 3.5, 4.6)
    orientations_deg: tuple[float, ...] = (0.0, 45.0, 90.0, 135.0)
    gamma: float = 0.3

    def validate(self) -> None:
        if not (len(self.scales) == len(self.sigmas) == len(self.lambdas)):
            raise ValueError("scales, sigmas and lambdas must align")
        if not self.scales or not self.orientations_deg:
            raise ValueError("need at least one scale and one orientation")
        if any(s <= 0 for s in self.scales) or self.gamma <= 0:
            raise ValueError("scales and gamma must be positive")
        if any(v <= 0 for v in self.sigmas + self.lambdas):
            raise ValueError("sigmas and lambdas must be positive")


def gabor_kernel(s: int, theta_deg: float, gamma: float, sigma: float,
                 lam: float) -> np.ndarray:
    """Oriented Gabor grid over offsets dx, dy in [-s, s].

    Entry [dy + s, dx + s] holds the coefficient for spatial offset
    (dx, dy) between a map cell and the event address. The center is
    exactly 1 and the grid has even symmetry G(-dx,-dy) = G(dx,dy).
    """
    if s <= 0:
        raise ValueError("scale must be positive")
    theta = math.radians(theta_deg)
    dx, dy = np.meshgrid(np.arange(-s, s + 1), np.arange(-s, s + 1))
    rx = dx * math.cos(theta) + dy * math.sin(theta)
    ry = -dx * math.sin(theta) + dy * math.cos(theta)
    return np.exp(-(rx ** 2 + (gamma * ry) ** 2) / (2.0 * sigma ** 2)) \
        * np.cos(2.0 * math.pi * rx / lam)


class GaborBank:
    """All (scale, orientation) kernels for one configuration."""

    def __init__(self, config: GaborConfig = GaborConfig()):
        config.validate()
        self.config = config
        self.kernels: list[np.ndarray] = []     # per scale: (n_theta, k, k)
        for s, sigma, lam in zip(config.scales, config.sigmas, config.lambdas):
            grids = [gabor_kernel(s, th, config.gamma, sigma, lam)
                     for th in config.orientations_deg]
            self.kernels.append(np.ascontiguousarray(np.stack(grids)))

    @property
    def n_scales(self) -> int:
        return len(self.config.scales)

    @property
    def n_orientations(self) -> int:
        return len(self.config.orientations_deg)


# ---------------------------------------------------------------------------
# S1: event-driven accumulation with lazy exponential decay

def _deliver_scale_py(values, last_t, kern, xs, ys, ts, inv_tau, s):
    """Numpy fallback for the batched delivery kernel."""
    n_theta, height, width = values.shape
    for n in range(xs.shape[0]):
        ex, ey, t = int(xs[n]), int(ys[n]), ts[n]
        x0, x1 = max(0, ex - s), min(width, ex + s + 1)
        y0, y1 = max(0, ey - s), min(height, ey + s + 1)
        patch = kern[:, y0 - ey + s:y1 - ey + s, x0 - ex + s:x1 - ex + s]
        lt = last_t[y0:y1, x0:x1]
        decay = np.exp((lt - t) * inv_tau)
        region = values[:, y0:y1, x0:x1]
        region *= decay[None, :, :]
        region += patch
        lt[...] = t


if _HAVE_NUMBA:
    @numba.njit(cache=True)
    def _deliver_scale_jit(values, last_t, kern, xs, ys, ts, inv_tau, s):  # pragma: no cover
        n_theta, height, width = values.shape
        for n in range(xs.shape[0]):
            ex, ey, t = xs[n], ys[n], ts[n]
            x0, x1 = max(0, ex - s), min(width, ex + s + 1)
            y0, y1 = max(0, ey - s), min(height, ey + s + 1)
            for yy in range(y0, y1):
                ky = yy - ey + s
                for xx in range(x0, x1):
                    kx = xx - ex + s
                    d = math.exp((last_t[yy, xx] - t) * inv_tau)
                    for o in range(n_theta):
                        values[o, yy, xx] = values[o, yy, xx] * d + kern[o, ky, kx]
                    last_t[yy, xx] = t

    _deliver_scale = _deliver_scale_jit
else:                                                  # pragma: no cover
    _deliver_scale = _deliver_scale_py


class FeatureMaps:
    """S1 response maps for one segment, one map per (scale, orientation).

    Every cell is conceptually a (value, last update time) pair. All
    orientations at a given scale share the same receptive footprint, so
    the update-time grid is stored once per scale; values are
    ``(n_orientations, height, width)`` per scale. Times are
    milliseconds. Deliveries and refreshes must be time-ordered.
    """

    def __init__(self, width: int, height: int, bank: GaborBank,
                 tau_leak_ms: float):
        if tau_leak_ms <= 0:
            raise ValueError("tau_leak_ms must be positive")
        self.width = int(width)
        self.height = int(height)
        self.bank = bank
        self.tau_leak = float(tau_leak_ms)
        n_theta = bank.n_orientations
        self.values = [np.zeros((n_theta, height, width)) for _ in bank.kernels]
        self.last_t = [np.zeros((height, width)) for _ in bank.kernels]
        self.time = 0.0     # latest delivery/refresh time seen, ms

    def _check_time(self, t_ms: float) -> None:
        if t_ms < self.time:
            raise ValueError(f"time regression: {t_ms} ms after {self.time} ms")

    def deliver(self, x: int, y: int, t_ms: float) -> None:
        """Stamp one event: decay touched cells to t_ms, add the kernels."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"event address ({x}, {y}) outside sensor")
        self._check_time(t_ms)
        inv_tau = 1.0 / self.tau_leak
        xs = np.array([x], dtype=np.int64)
        ys = np.array([y], dtype=np.int64)
        ts = np.array([t_ms], dtype=np.float64)
        for si, s in enumerate(self.bank.config.scales):
            _deliver_scale_py(self.values[si], self.last_t[si],
                              self.bank.kernels[si], xs, ys, ts, inv_tau, s)
        self.time = t_ms

    def deliver_events(self, x, y, t_us) -> None:
        """Stamp a whole time-ordered batch (fast path for long segments)."""
        xs = np.ascontiguousarray(x, dtype=np.int64)
        ys = np.ascontiguousarray(y, dtype=np.int64)
        ts = np.asarray(t_us, dtype=np.float64) / US_PER_MS
        if xs.size == 0:
            return
        if np.any((xs < 0) | (xs >= self.width) | (ys < 0) | (ys >= self.height)):
            raise ValueError("event address outside sensor")
        if np.any(np.diff(ts) < 0):
            raise ValueError("events not time-ordered")
        self._check_time(float(ts[0]))
        inv_tau = 1.0 / self.tau_leak
        for si, s in enumerate(self.bank.config.scales):
            _deliver_scale(self.values[si], self.last_t[si],
                           self.bank.kernels[si], xs, ys, ts, inv_tau, int(s))
        self.time = float(ts[-1])

    def refresh(self, t_ms: float) -> None:
        """Decay every cell to a common query time (idempotent at t_ms)."""
        self._check_time(t_ms)
        inv_tau = 1.0 / self.tau_leak
        for si in range(len(self.values)):
            self.values[si] *= np.exp((self.last_t[si] - t_ms) * inv_tau)[None, :, :]
            self.last_t[si][...] = t_ms
        self.time = t_ms

    def stacked(self) -> np.ndarray:
        """Copy of all responses as (n_scales, n_orientations, H, W)."""
        return np.stack(self.values)


# ---------------------------------------------------------------------------
# C1: non-overlapping 2x2 max pooling

@dataclass
class C1Maps:
    """Pooled responses, shape (n_scales, n_orientations, Hc, Wc)."""

    values: np.ndarray

    @property
    def n_scales(self) -> int:
        return self.values.shape[0]

    @property
    def n_orientations(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]


def max_pool_2x2(grid: np.ndarray) -> np.ndarray:
    """Max over adjacent non-overlapping 2x2 regions of the trailing dims.

    Odd edges pool over the cells that exist, so the output is
    ceil(H/2) x ceil(W/2).
    """
    h, w = grid.shape[-2:]
    hc, wc = (h + 1) // 2, (w + 1) // 2
    padded = np.full(grid.shape[:-2] + (hc * 2, wc * 2), -np.inf)
    padded[..., :h, :w] = grid
    return padded.reshape(grid.shape[:-2] + (hc, 2, wc, 2)).max(axis=(-3, -1))


def c1_pool(s1) -> C1Maps:
    """Pool refreshed S1 maps (a FeatureMaps or a stacked array) into C1."""
    stacked = s1.stacked() if isinstance(s1, FeatureMaps) else np.asarray(s1)
    if stacked.ndim != 4:
        raise ValueError("expected (n_scales, n_orientations, H, W) responses")
    return C1Maps(max_pool_2x2(stacked))


# ---------------------------------------------------------------------------
# Latency coding

CODING_KINDS = ("log", "linear")


@dataclass(frozen=True)
class CodingParams:
    """Fitted response->latency mapping for one training set.

    ``u`` and ``v`` are the log-code normalizers: with
    ``v = t_w / (ln r_max - ln r_min)`` and ``u = v * ln(r_max) ...``
    the strongest training response fires at 0 ms and the noise floor
    at ``t_w``. The linear baseline uses ``r_max`` directly.
    """

    kind: str
    r_max: float
    r_min: float
    t_w: float
    u: float
    v: float

    def spike_time(self, r):
        """Latency for response(s) r; clamped into [0, t_w]."""
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "log":
            t = self.u - self.v * np.log(r)
        else:
            t = self.t_w - (self.t_w / self.r_max) * r
        return np.clip(t, 0.0, self.t_w)


def fit_coding(training_responses, r_min: float, t_w: float,
               kind: str = "log") -> CodingParams:
    """Fit the coding normalizers from training-set C1 responses."""
    if kind not in CODING_KINDS:
        raise ValueError(f"kind must be one of {CODING_KINDS}, got {kind!r}")
    if r_min <= 0 or t_w <= 0:
        raise ValueError("r_min and t_w must be positive")
    responses = np.asarray(training_responses, dtype=np.float64).ravel()
    if responses.size == 0:
        raise DegenerateCodingError("no training responses")
    r_max = float(responses.max())
    if r_max <= r_min:
        raise DegenerateCodingError(
            f"all training responses <= noise floor {r_min} (max {r_max})")
    span = math.log(r_max) - math.log(r_min)
    v = t_w / span
    u = t_w * math.log(r_max) / span
    return CodingParams(kind=kind, r_max=r_max, r_min=r_min, t_w=t_w, u=u, v=v)


# ---------------------------------------------------------------------------
# Fusion into addressed spike trains

FUSION_MODES = ("multiscale", "multi_orientation", "none", "full")


@dataclass
class SpikePattern:
    """Addressed spike trains over one coding window.

    ``addresses[i]`` is the encoding-neuron index of spike ``i`` and
    ``times[i]`` its latency in ms within [0, t_w]. Spikes are sorted by
    time (address as tie-break).
    """

    addresses: np.ndarray
    times: np.ndarray
    n_addresses: int
    t_w: float
    fusion: str

    def __len__(self) -> int:
        return len(self.addresses)


def n_fusion_addresses(fusion: str, n_scales: int, n_orientations: int,
                       height: int, width: int) -> int:
    """Encoding-neuron count for a fusion mode over a C1 geometry."""
    pos = height * width
    if fusion == "multiscale":
        return n_orientations * pos
    if fusion == "multi_orientation":
        return n_scales * pos
    if fusion == "none":
        return n_scales * n_orientations * pos
    if fusion == "full":
        return pos
    raise ValueError(f"fusion must be one of {FUSION_MODES}, got {fusion!r}")


def encode(c1: C1Maps, params: CodingParams,
           fusion: str = "multiscale") -> SpikePattern:
    """Latency-code C1 responses and fuse them into spike trains.

    Responses <= r_min emit nothing; responses above the fitted maximum
    clamp to time 0. The fusion mode only chooses how spikes share
    addresses: multiscale groups (orientation, x, y), multi_orientation
    groups (scale, x, y), none keeps every map separate, full groups by
    position alone. Spike count is identical across modes.
    """
    if fusion not in FUSION_MODES:
        raise ValueError(f"fusion must be one of {FUSION_MODES}, got {fusion!r}")
    vals = c1.values
    n_s, n_th, hc, wc = vals.shape
    si, oi, yy, xx = np.nonzero(vals > params.r_min)
    r = vals[si, oi, yy, xx]
    times = np.minimum(params.spike_time(r), params.t_w)
    pos = yy * wc + xx
    cells = hc * wc
    if fusion == "multiscale":
        addr = oi * cells + pos
    elif fusion == "multi_orientation":
        addr = si * cells + pos
    elif fusion == "none":
        addr = (si * n_th + oi) * cells + pos
    else:
        addr = pos
    order = np.lexsort((addr, times))
    return SpikePattern(addresses=addr[order].astype(np.int64),
                        times=times[order],
                        n_addresses=n_fusion_addresses(fusion, n_s, n_th, hc, wc),
                        t_w=params.t_w,
                        fusion=fusion)
