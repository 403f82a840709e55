"""Clock-driven learning layer: conductance LIF neurons under triplet STDP.

Encoding neurons (pure spike sources addressed by a
:class:`~evrec.features.SpikePattern`) connect all-to-all onto a layer of
excitatory learning neurons. Each learning neuron integrates

    tau_m * dV/dt = (V_rest - V) + g_e*(E_exc - V) + g_i*(E_inh - V)

by forward Euler; conductances and synaptic traces decay exactly
(multiplicative ``exp(-dt/tau)`` per step), and the conductance terms
enter the membrane update through their exact per-step average, which
keeps the synaptic charge delivered per input spike independent of the
step size. A neuron crossing its
adaptive threshold fires, resets, raises its threshold by ``v_plus``, and
schedules delayed lateral inhibition onto every other neuron, which keeps
the population from collapsing onto one pattern. Thresholds relax toward
``v_t`` with a very long time constant.

Plasticity is nearest-spike triplet STDP on the input synapses. Each
encoding neuron carries one presynaptic trace, each learning neuron two
postsynaptic traces; a trace is set to 1 at its spike (never summed
higher) and decays exponentially otherwise. On a presynaptic spike the
synapse is depressed by ``a_minus * a_post`` (clamped at zero); on a
postsynaptic spike it is potentiated by ``a_plus * a_pre * a_post2``
where ``a_post2`` is read *before* its reassignment, so potentiation
requires an earlier postsynaptic spike. Weights are unbounded above;
divisive normalization to a fixed per-neuron input sum at the end of each
plastic presentation is the only upper control.

Within a step the update order is fixed: membrane Euler update with
start-of-step conductances, exact decays of conductances and traces,
delivery of due lateral inhibition, delivery of due input spikes
(conductance first, then depression, then the presynaptic trace
assignment), threshold crossings (potentiation, reset, bookkeeping,
trace assignments), threshold relaxation. Spikes due inside a step take
effect at the step's end boundary; a presynaptic and postsynaptic spike
on the same boundary interact as pre-before-post.

``present`` runs a numba-compiled loop when available and a numpy
reference loop otherwise; both perform the identical arithmetic in the
identical order, so results are bitwise equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:                                    # pragma: no cover
    _HAVE_NUMBA = False

from .features import SpikePattern

USE_JIT = _HAVE_NUMBA   # tests flip this to exercise the reference path


@dataclass(frozen=True)
class SnnConfig:
    """Learning-layer constants. Voltages mV, times ms, rest dimensionless."""

    v_rest: float = -65.0
    v_reset: float = -65.0
    e_exc: float = 0.0
    e_inh: float = -100.0
    tau_m: float = 100.0
    tau_ge: float = 1.0
    tau_gi: float = 2.0
    v_t: float = -63.5          # baseline threshold
    v_plus: float = 0.07        # threshold bump per spike
    tau_thr: float = 1e7
    tau_apre: float = 20.0
    tau_apost: float = 30.0
    tau_apost2: float = 40.0
    a_plus: float = 0.1
    a_minus: float = 0.001
    w_inh: float = 2.4
    t_d_ms: float = 0.3         # lateral-inhibition delay
    dt_ms: float = 0.5
    norm_l: float = 47.0        # per-neuron input weight sum

    def validate(self) -> None:
        for name in ("tau_m", "tau_ge", "tau_gi", "tau_thr", "tau_apre",
                     "tau_apost", "tau_apost2", "dt_ms", "norm_l"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.t_d_ms < 0 or self.w_inh < 0:
            raise ValueError("t_d_ms and w_inh must be non-negative")


@dataclass
class PresentationResult:
    """Per-neuron spike counts for one presentation, plus optional raster."""

    counts: np.ndarray                         # (n_learning,) int64
    raster_neurons: Optional[np.ndarray] = None
    raster_times: Optional[np.ndarray] = None  # ms

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _delay_steps(t_d_ms: float, dt: float) -> int:
    """First step boundary at or after the inhibition due time."""
    return max(1, math.ceil(t_d_ms / dt - 1e-9))


if _HAVE_NUMBA:
    @numba.njit(cache=True)
    def _present_kernel(w, v, g_e, g_i, v_thr, a_pre, a_post, a_post2,
                        spike_steps, spike_addrs, n_steps, k_d,
                        euler, v_rest, v_reset, e_exc, e_inh,
                        k_ge, k_gi, c_ge, c_gi, k_apre, k_apost, k_apost2,
                        k_thr, v_plus, v_t, a_plus, a_minus, w_inh,
                        plastic, adapt_thr, dt,
                        counts, total_counts, inh_ring,
                        ras_n, ras_t):                  # pragma: no cover
        n_e, n_l = w.shape
        n_spk = spike_steps.shape[0]
        ring = k_d + 1
        pos = 0
        n_ras = 0
        for k in range(1, n_steps + 1):
            for l in range(n_l):
                vv = v[l]
                v[l] = vv + euler * ((v_rest - vv) + (c_ge * g_e[l]) * (e_exc - vv)
                                     + (c_gi * g_i[l]) * (e_inh - vv))
                g_e[l] *= k_ge
                g_i[l] *= k_gi
                a_post[l] *= k_apost
                a_post2[l] *= k_apost2
            for e in range(n_e):
                a_pre[e] *= k_apre

            slot = (k + 1) % ring            # fired k_d steps ago is due now
            n_src = 0
            for l in range(n_l):
                n_src += inh_ring[slot, l]
            if n_src > 0:
                for l in range(n_l):
                    g_i[l] += w_inh * (n_src - inh_ring[slot, l])
                    inh_ring[slot, l] = 0

            while pos < n_spk and spike_steps[pos] == k:
                e = spike_addrs[pos]
                cnt = 1
                pos += 1
                while (pos < n_spk and spike_steps[pos] == k
                       and spike_addrs[pos] == e):
                    cnt += 1
                    pos += 1
                for l in range(n_l):
                    g_e[l] += cnt * w[e, l]  # conductance uses pre-update w
                if plastic:
                    for l in range(n_l):
                        nw = w[e, l] - a_minus * a_post[l]
                        w[e, l] = nw if nw > 0.0 else 0.0
                a_pre[e] = 1.0

            wslot = k % ring
            for l in range(n_l):
                if v[l] > v_thr[l]:
                    if plastic:
                        ap2 = a_post2[l]     # value preceding this spike
                        for e in range(n_e):
                            w[e, l] += a_plus * (a_pre[e] * ap2)
                    v[l] = v_reset
                    if adapt_thr:
                        v_thr[l] += v_plus
                    counts[l] += 1
                    total_counts[l] += 1
                    if ras_n.shape[0] > 0:
                        ras_n[n_ras] = l
                        ras_t[n_ras] = k * dt
                        n_ras += 1
                    inh_ring[wslot, l] = 1
                    a_post[l] = 1.0
                    a_post2[l] = 1.0

            if adapt_thr:
                for l in range(n_l):
                    v_thr[l] = v_t + (v_thr[l] - v_t) * k_thr
        return n_ras


class Network:
    """All-to-all input synapses plus per-neuron LIF and trace state."""

    def __init__(self, n_encoding: int, n_learning: int,
                 config: SnnConfig = SnnConfig(), seed: int = 0):
        config.validate()
        if n_encoding < 1 or n_learning < 1:
            raise ValueError("need at least one encoding and one learning neuron")
        self.config = config
        self.n_encoding = int(n_encoding)
        self.n_learning = int(n_learning)
        rng = np.random.default_rng(seed)
        self.w = rng.random((self.n_encoding, self.n_learning))
        normalize_weights(self, config.norm_l)
        self.v_thr = np.full(self.n_learning, config.v_t)
        self.spike_count = np.zeros(self.n_learning, dtype=np.int64)
        self.v = np.full(self.n_learning, config.v_rest)
        self.g_e = np.zeros(self.n_learning)
        self.g_i = np.zeros(self.n_learning)
        self.a_pre = np.zeros(self.n_encoding)
        self.a_post = np.zeros(self.n_learning)
        self.a_post2 = np.zeros(self.n_learning)
        self._step_index = 0
        self._dt = config.dt_ms
        self._decays = self._make_decays(self._dt)
        self._inh_due: dict[int, list[np.ndarray]] = {}
        self._result: Optional[PresentationResult] = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def clock_ms(self) -> float:
        return self._step_index * self._dt

    def _make_decays(self, dt: float):
        c = self.config
        k_ge = math.exp(-dt / c.tau_ge)
        k_gi = math.exp(-dt / c.tau_gi)
        # conductances enter the membrane update through their exact mean
        # over the step (integral of the decaying exponential divided by
        # dt), so the synaptic charge per spike does not depend on dt
        c_ge = (c.tau_ge / dt) * (1.0 - k_ge)
        c_gi = (c.tau_gi / dt) * (1.0 - k_gi)
        return (k_ge, k_gi, c_ge, c_gi,
                math.exp(-dt / c.tau_apre), math.exp(-dt / c.tau_apost),
                math.exp(-dt / c.tau_apost2), math.exp(-dt / c.tau_thr))

    def set_dt(self, dt_ms: float) -> None:
        if dt_ms <= 0:
            raise ValueError("dt must be positive")
        if dt_ms != self._dt:
            self._dt = float(dt_ms)
            self._decays = self._make_decays(self._dt)

    def reset_transient(self, record_raster: bool = False) -> None:
        """Fresh membrane/conductance/trace state; thresholds persist."""
        c = self.config
        self.v[:] = c.v_rest
        self.g_e[:] = 0.0
        self.g_i[:] = 0.0
        self.a_pre[:] = 0.0
        self.a_post[:] = 0.0
        self.a_post2[:] = 0.0
        self._step_index = 0
        self._inh_due.clear()
        self._result = PresentationResult(
            counts=np.zeros(self.n_learning, dtype=np.int64),
            raster_neurons=[] if record_raster else None,
            raster_times=[] if record_raster else None)

    def column_sums(self) -> np.ndarray:
        return self.w.sum(axis=0)

    # -- dynamics ------------------------------------------------------

    def step(self, input_spikes=None, plasticity: bool = False,
             adapt_threshold: bool = True) -> None:
        """Advance the clock by one dt, delivering the due input spikes.

        ``input_spikes`` lists encoding-neuron indices whose spikes fall
        within this step (duplicates allowed; they add conductance with
        multiplicity but trigger the pre-spike plasticity rule once).
        """
        if self._result is None:
            self.reset_transient()
        if input_spikes is not None and len(input_spikes):
            idx, cnt = np.unique(np.asarray(input_spikes, dtype=np.int64),
                                 return_counts=True)
        else:
            idx, cnt = None, None
        self._step(idx, cnt, plasticity, adapt_threshold)

    def _step(self, pre_idx, pre_cnt, plastic: bool, adapt_thr: bool) -> None:
        """Numpy reference step; arithmetic mirrors the jit kernel exactly."""
        c = self.config
        dt = self._dt
        k_ge, k_gi, c_ge, c_gi, k_apre, k_apost, k_apost2, k_thr = self._decays
        euler = dt / c.tau_m
        v = self.v

        v += euler * ((c.v_rest - v) + (c_ge * self.g_e) * (c.e_exc - v)
                      + (c_gi * self.g_i) * (c.e_inh - v))
        self.g_e *= k_ge
        self.g_i *= k_gi
        self.a_pre *= k_apre
        self.a_post *= k_apost
        self.a_post2 *= k_apost2

        self._step_index += 1
        k = self._step_index

        sources = self._inh_due.pop(k, None)
        if sources is not None:
            for src in sources:
                flags = np.zeros(self.n_learning, dtype=np.int64)
                flags[src] = 1
                self.g_i += c.w_inh * (src.size - flags)

        if pre_idx is not None:
            for j in range(len(pre_idx)):
                self.g_e += pre_cnt[j] * self.w[pre_idx[j]]
            if plastic:
                self.w[pre_idx] = np.maximum(
                    self.w[pre_idx] - c.a_minus * self.a_post, 0.0)
            self.a_pre[pre_idx] = 1.0

        fired = np.flatnonzero(v > self.v_thr)
        if fired.size:
            if plastic:
                # a_post2 read before its reassignment: the triplet needs
                # a postsynaptic spike prior to this one
                self.w[:, fired] += c.a_plus * (self.a_pre[:, None]
                                                * self.a_post2[fired][None, :])
            v[fired] = c.v_reset
            if adapt_thr:
                self.v_thr[fired] += c.v_plus
            self.spike_count[fired] += 1
            res = self._result
            res.counts[fired] += 1
            if res.raster_neurons is not None:
                res.raster_neurons.extend(fired.tolist())
                res.raster_times.extend([k * dt] * fired.size)
            due = k + _delay_steps(c.t_d_ms, dt)
            self._inh_due.setdefault(due, []).append(fired)
            self.a_post[fired] = 1.0
            self.a_post2[fired] = 1.0

        if adapt_thr:
            self.v_thr = c.v_t + (self.v_thr - c.v_t) * k_thr

    def present(self, pattern: SpikePattern, duration_ms: Optional[float] = None,
                plasticity: bool = False, adapt_threshold: bool = True,
                dt_ms: Optional[float] = None,
                record_raster: bool = False) -> PresentationResult:
        """Run one pattern through the layer from a fresh transient state.

        Adaptive thresholds persist across presentations. With plasticity
        on, STDP applies throughout and the weights are normalized once at
        the end. Duration defaults to the pattern's coding window and may
        not be shorter than it.
        """
        duration = pattern.t_w if duration_ms is None else float(duration_ms)
        if duration + 1e-9 < pattern.t_w:
            raise ValueError("presentation shorter than the coding window")
        if len(pattern) and int(pattern.addresses.max()) >= self.n_encoding:
            raise ValueError(
                f"pattern address {int(pattern.addresses.max())} out of range "
                f"for {self.n_encoding} encoding neurons")
        if dt_ms is not None:
            self.set_dt(dt_ms)
        dt = self._dt
        n_steps = max(1, math.ceil(duration / dt - 1e-9))

        # spikes due in ((k-1)*dt, k*dt] land at boundary k; time-0 spikes
        # land in the first step
        steps = np.maximum(1, np.ceil(pattern.times / dt - 1e-9)).astype(np.int64)
        order = np.lexsort((pattern.addresses, steps))
        steps = np.ascontiguousarray(steps[order])
        addrs = np.ascontiguousarray(pattern.addresses[order])

        self.reset_transient(record_raster=record_raster)
        if USE_JIT and _HAVE_NUMBA:
            self._present_jit(steps, addrs, n_steps, plasticity,
                              adapt_threshold, record_raster)
        else:
            self._present_python(steps, addrs, n_steps, plasticity,
                                 adapt_threshold)

        if plasticity:
            normalize_weights(self, self.config.norm_l)

        res = self._result
        self._result = None
        if record_raster:
            res.raster_neurons = np.asarray(res.raster_neurons, dtype=np.int64)
            res.raster_times = np.asarray(res.raster_times, dtype=np.float64)
        return res

    def _present_python(self, steps, addrs, n_steps, plasticity,
                        adapt_threshold) -> None:
        pos = 0
        n_spk = len(steps)
        for k in range(1, n_steps + 1):
            if pos < n_spk and steps[pos] == k:
                end = pos
                while end < n_spk and steps[end] == k:
                    end += 1
                idx, cnt = np.unique(addrs[pos:end], return_counts=True)
                pos = end
                self._step(idx, cnt, plasticity, adapt_threshold)
            else:
                self._step(None, None, plasticity, adapt_threshold)

    def _present_jit(self, steps, addrs, n_steps, plasticity, adapt_threshold,
                     record_raster) -> None:
        c = self.config
        dt = self._dt
        k_ge, k_gi, c_ge, c_gi, k_apre, k_apost, k_apost2, k_thr = self._decays
        k_d = _delay_steps(c.t_d_ms, dt)
        inh_ring = np.zeros((k_d + 1, self.n_learning), dtype=np.int64)
        cap = n_steps * self.n_learning if record_raster else 0
        ras_n = np.empty(cap, dtype=np.int64)
        ras_t = np.empty(cap, dtype=np.float64)
        res = self._result
        n_ras = _present_kernel(
            self.w, self.v, self.g_e, self.g_i, self.v_thr,
            self.a_pre, self.a_post, self.a_post2,
            steps, addrs, n_steps, k_d,
            dt / c.tau_m, c.v_rest, c.v_reset, c.e_exc, c.e_inh,
            k_ge, k_gi, c_ge, c_gi, k_apre, k_apost, k_apost2, k_thr,
            c.v_plus, c.v_t, c.a_plus, c.a_minus, c.w_inh,
            plasticity, adapt_threshold, dt,
            res.counts, self.spike_count, inh_ring, ras_n, ras_t)
        self._step_index = n_steps
        if record_raster:
            res.raster_neurons.extend(ras_n[:n_ras].tolist())
            res.raster_times.extend(ras_t[:n_ras].tolist())


def normalize_weights(network: Network, total: Optional[float] = None) -> Network:
    """Divisively rescale each learning neuron's input weights to sum ``total``.

    Keeps within-column ratios; a zero column sum means a dead neuron and
    raises instead of silently producing NaNs.
    """
    if total is None:
        total = network.config.norm_l
    sums = network.w.sum(axis=0)
    if np.any(sums <= 0.0):
        dead = int(np.argmax(sums <= 0.0))
        raise ValueError(f"learning neuron {dead} has non-positive weight sum")
    network.w *= total / sums
    return network
