"""Adaptive event-stream segmentation by motion symbol detection (MSD).

A single leaky integrator accumulates one unit of potential per incoming
event and decays exponentially between events, so its value tracks the
instantaneous event rate. Incoming events queue up until a temporal peak
of the potential is detected; the queue is then flushed up to the peak
time as one :class:`Segment`. Bursty streams therefore split at the gaps
between motion symbols instead of at arbitrary fixed time slices.

Peak detection: the potential is sampled at every event. A sample with
potential >= ``threshold`` becomes the peak candidate (a later sample that
matches or exceeds it takes over as candidate). The candidate is
confirmed once ``confirm_window`` consecutive samples stay strictly below
it, which bounds detection latency to ``confirm_window`` events. On
confirmation, queued events with t <= candidate time flush as a segment
and the potential resets to zero; the confirming events stay queued for
the next segment.

Two safety valves: a maximum segment duration forces a flush of the whole
queue on pathological streams, and ``flush_tail`` emits whatever remains
when the stream ends so short recordings always yield a segment.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import math

import numpy as np

from .events import US_PER_MS, Event, EventStream


@dataclass(frozen=True)
class MsdConfig:
    tau_ms: float = 20.0          # integrator decay time constant
    threshold: float = 30.0       # minimum potential for a peak candidate
    confirm_window: int = 3       # samples below candidate to confirm it
    flush_tail: bool = True       # emit leftover queue at end of stream
    max_segment_ms: float = 2000.0  # forced flush bound on queue span
    debug_slice_ms: float = 0.0   # >0: fixed time slicing (debug only)

    def validate(self) -> None:
        if self.tau_ms <= 0 or self.threshold <= 0:
            raise ValueError("tau_ms and threshold must be positive")
        if self.confirm_window < 1:
            raise ValueError("confirm_window must be >= 1")
        if self.max_segment_ms <= 0:
            raise ValueError("max_segment_ms must be positive")


@dataclass
class Segment:
    """A contiguous, non-empty slice of a stream between two flushes."""

    t: np.ndarray       # int64 microseconds
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t_start: int        # microseconds
    t_end: int          # microseconds, >= every event timestamp

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration_ms(self) -> float:
        return (self.t_end - self.t_start) / US_PER_MS


def _segment_from(events: list[Event], t_end: int) -> Segment:
    t = np.array([e.t for e in events], dtype=np.int64)
    x = np.array([e.x for e in events], dtype=np.int32)
    y = np.array([e.y for e in events], dtype=np.int32)
    p = np.array([e.polarity for e in events], dtype=np.uint8)
    return Segment(t, x, y, p, t_start=int(t[0]), t_end=int(t_end))


class MsdState:
    """Streaming MSD integrator; feed events in order, collect segments.

    ``update`` returns a flushed :class:`Segment` when a peak is confirmed
    (or the queue span hits the forced-flush bound), else ``None``.
    ``finish`` flushes the tail when the config asks for it.
    """

    def __init__(self, config: MsdConfig = MsdConfig()):
        config.validate()
        self.config = config
        self.potential = 0.0
        self.last_event_t: Optional[int] = None   # microseconds
        self.queue: list[Event] = []
        # recent (t_us, potential) samples; enough to inspect a full
        # candidate-plus-confirmation window
        self.samples: deque = deque(maxlen=config.confirm_window + 1)
        self._candidate: Optional[tuple[int, float]] = None
        self._confirms = 0

    def update(self, event: Event) -> Optional[Segment]:
        if self.last_event_t is not None and event.t < self.last_event_t:
            raise ValueError(
                f"time regression: event at {event.t} us after {self.last_event_t} us")
        if self.last_event_t is None:
            decay = 1.0
        else:
            dt_ms = (event.t - self.last_event_t) / US_PER_MS
            decay = math.exp(-dt_ms / self.config.tau_ms)
        self.potential = self.potential * decay + 1.0
        self.last_event_t = event.t
        self.queue.append(event)
        self.samples.append((event.t, self.potential))

        span_ms = (event.t - self.queue[0].t) / US_PER_MS
        if span_ms >= self.config.max_segment_ms:
            return self._flush(event.t)

        p = self.potential
        if p >= self.config.threshold and (
                self._candidate is None or p >= self._candidate[1]):
            self._candidate = (event.t, p)
            self._confirms = 0
        elif self._candidate is not None:
            self._confirms += 1
            if self._confirms >= self.config.confirm_window:
                return self._flush(self._candidate[0])
        return None

    def finish(self) -> Optional[Segment]:
        if self.config.flush_tail and self.queue:
            return self._flush(self.queue[-1].t)
        return None

    def _flush(self, t_peak: int) -> Segment:
        # queue is time-ordered, so the flush prefix ends at the first
        # event strictly after the peak time
        split = len(self.queue)
        for i, e in enumerate(self.queue):
            if e.t > t_peak:
                split = i
                break
        flushed, self.queue = self.queue[:split], self.queue[split:]
        self.potential = 0.0
        self._candidate = None
        self._confirms = 0
        self.samples.clear()
        return _segment_from(flushed, t_peak)


def msd_update(state: MsdState, event: Event) -> Optional[Segment]:
    """Operation-style alias for :meth:`MsdState.update`."""
    return state.update(event)


def segment_stream(stream: EventStream, config: MsdConfig = MsdConfig()) -> list[Segment]:
    """Partition a stream into disjoint, ordered segments.

    With ``debug_slice_ms`` set, events are cut into fixed time slices
    instead (debugging aid only; MSD is the supported mode).
    """
    config.validate()
    if config.debug_slice_ms > 0:
        return _fixed_slices(stream, config.debug_slice_ms)
    state = MsdState(config)
    segments = []
    for event in stream:
        seg = state.update(event)
        if seg is not None:
            segments.append(seg)
    tail = state.finish()
    if tail is not None:
        segments.append(tail)
    return segments


def _fixed_slices(stream: EventStream, slice_ms: float) -> list[Segment]:
    if len(stream) == 0:
        return []
    width_us = max(1, int(round(slice_ms * US_PER_MS)))
    bins = (stream.t - stream.t[0]) // width_us
    segments = []
    for b in np.unique(bins):
        m = bins == b
        t = stream.t[m]
        segments.append(Segment(t, stream.x[m], stream.y[m], stream.p[m],
                                t_start=int(t[0]), t_end=int(t[-1])))
    return segments
