"""Delay injection: a fixed read-phase extension and adaptive abort backoff."""
from __future__ import annotations

from collections import deque


class DelayPolicy:
    """Base policy: no delay anywhere."""

    def delay_next(self, phase: str) -> float:
        return 0.0

    def observe(self, committed: bool) -> None:
        pass


class ReadPhaseExtension(DelayPolicy):
    def __init__(self, seconds: float):
        if seconds < 0:
            raise ValueError("read phase extension must be >= 0")
        self.seconds = seconds

    def delay_next(self, phase: str) -> float:
        return self.seconds if phase == "read_phase_end" else 0.0


class AdaptiveBackoff(DelayPolicy):
    """Per-worker backoff before retrying an aborted transaction.

    The wait grows by ``factor`` while the abort rate over the last ``window``
    outcomes is rising and shrinks by the same factor while it is falling,
    always clamped to [min_wait, max_wait].
    """

    def __init__(self, min_wait: float = 1e-6, max_wait: float = 1e-3,
                 factor: float = 2.0, window: int = 8):
        if not 0 < min_wait <= max_wait:
            raise ValueError("need 0 < min_wait <= max_wait")
        if factor <= 1:
            raise ValueError("factor must be > 1")
        self.min_wait = min_wait
        self.max_wait = max_wait
        self.factor = factor
        self.window = deque([0] * window, maxlen=window)
        self.wait = min_wait
        self._last_rate = 0.0

    @property
    def abort_rate(self) -> float:
        return sum(self.window) / len(self.window)

    def observe(self, committed: bool) -> None:
        self.window.append(0 if committed else 1)

    def delay_next(self, phase: str) -> float:
        if phase != "abort_retry":
            return 0.0
        current = self.wait
        rate = self.abort_rate
        if rate > self._last_rate:
            self.wait *= self.factor
        elif rate < self._last_rate:
            self.wait /= self.factor
        self.wait = min(self.max_wait, max(self.min_wait, self.wait))
        self._last_rate = rate
        return current


class FixedNoWaitTTDelay(DelayPolicy):
    """Fixed pause between NoWaitTT lock-acquisition rounds."""

    def __init__(self, seconds: float = 1e-6):
        if seconds < 0:
            raise ValueError("delay must be >= 0")
        self.seconds = seconds

    def delay_next(self, phase: str) -> float:
        return self.seconds if phase == "lock_retry" else 0.0


def delay_next(policy: DelayPolicy | None, event: str) -> float:
    return 0.0 if policy is None else policy.delay_next(event)
