"""Deterministic discrete-event network simulation.

A single event queue ordered by (time, sequence number) drives every
component that shares the simulated clock. Links have gaussian latency
with jitter, bounded by a floor and cap; drops trigger bounded
retransmits with the final attempt always delivered, so honest traffic
is eventually delivered. Byzantine senders may be configured Silent
(messages never sent), Equivocate (handled in the node logic), or
DelayMax (every send at the latency cap).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .rng import substream


class ByzantineMode(Enum):
    SILENT = "silent"
    EQUIVOCATE = "equivocate"
    DELAY_MAX = "delay_max"


class EventQueue:
    """Deterministic priority queue over (time, seq)."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list = []
        self._seq = 0

    def at(self, time: float, fn, *args) -> None:
        if time < self.now:
            time = self.now
        heapq.heappush(self._heap, (time, self._seq, fn, args))
        self._seq += 1

    def after(self, delay: float, fn, *args) -> None:
        self.at(self.now + delay, fn, *args)

    def run_until(self, t_end: float) -> None:
        while self._heap and self._heap[0][0] <= t_end:
            time, _, fn, args = heapq.heappop(self._heap)
            self.now = time
            fn(*args)
        self.now = t_end

    def run_all(self, hard_stop: float = float("inf")) -> None:
        while self._heap and self._heap[0][0] <= hard_stop:
            time, _, fn, args = heapq.heappop(self._heap)
            self.now = time
            fn(*args)

    def empty(self) -> bool:
        return not self._heap


@dataclass(frozen=True)
class NetworkModel:
    latency_mean: float = 0.05
    latency_jitter: float = 0.02
    latency_floor: float = 0.001
    latency_cap: float = 0.5
    drop_rate: float = 0.0
    retransmit_timeout: float = 0.2
    max_retransmits: int = 4
    byzantine: dict = field(default_factory=dict)   # node id -> ByzantineMode

    def __post_init__(self):
        if not (0.0 <= self.drop_rate < 1.0):
            raise ConfigError(f"drop_rate {self.drop_rate} outside [0, 1)")


class SimNetwork:
    """Delivers messages between named endpoints through the event queue."""

    def __init__(self, queue: EventQueue, model: NetworkModel, seed: int,
                 label: str = "net"):
        self.queue = queue
        self.model = model
        self.rng = substream(seed, label)
        self.endpoints: dict = {}     # id -> handler(src, msg)
        self.delivered = 0
        self.dropped = 0

    def register(self, node_id: str, handler) -> None:
        self.endpoints[node_id] = handler

    def _latency(self, src: str) -> float:
        m = self.model
        if m.byzantine.get(src) is ByzantineMode.DELAY_MAX:
            return m.latency_cap
        raw = m.latency_mean + m.latency_jitter * float(self.rng.standard_normal())
        return min(max(raw, m.latency_floor), m.latency_cap)

    def send(self, src: str, dst: str, msg) -> None:
        if self.model.byzantine.get(src) is ByzantineMode.SILENT:
            return
        self._attempt(src, dst, msg, 0)

    def _attempt(self, src: str, dst: str, msg, tries: int) -> None:
        lat = self._latency(src)
        if (self.model.drop_rate > 0.0 and tries < self.model.max_retransmits
                and float(self.rng.random()) < self.model.drop_rate):
            self.dropped += 1
            self.queue.after(self.model.retransmit_timeout,
                             self._attempt, src, dst, msg, tries + 1)
            return
        self.queue.after(lat, self._deliver, src, dst, msg)

    def _deliver(self, src: str, dst: str, msg) -> None:
        handler = self.endpoints.get(dst)
        if handler is not None:
            self.delivered += 1
            handler(src, msg)
