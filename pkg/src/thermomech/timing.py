"""Wall-clock phase timing with line-delimited JSON export."""

from contextlib import contextmanager
import json
import time

__all__ = ["TimingReport"]


class TimingReport:
    """Named phases with accumulated wall seconds and call counts.

    Phases must not be nested; each second of wall time is attributed to at
    most one phase, so the phase sum can be compared against a total.
    Per-step records of transient runs are kept in :attr:`steps`.

    Examples
    --------
    >>> timer = TimingReport()
    >>> with timer.phase("assembly"):
    ...     pass
    >>> timer.calls("assembly")
    1
    """

    def __init__(self):
        self._seconds = {}
        self._calls = {}
        self.order = []
        self.steps = []

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - t0)

    def add(self, name, seconds, calls=1):
        if seconds < 0:
            raise ValueError(f"negative duration for phase {name!r}")
        if name not in self._seconds:
            self._seconds[name] = 0.0
            self._calls[name] = 0
        self._seconds[name] += seconds
        self._calls[name] += calls
        self.order.append(name)

    def seconds(self, name):
        return self._seconds.get(name, 0.0)

    def calls(self, name):
        return self._calls.get(name, 0)

    @property
    def phases(self):
        return list(self._seconds)

    def total(self):
        return sum(self._seconds.values())

    def merge(self, other):
        for name in other.phases:
            self.add(name, other.seconds(name), other.calls(name))

    def records(self):
        """Phase records in first-use order, then step records."""
        out = [{"record": "phase", "name": k, "seconds": self._seconds[k],
                "calls": self._calls[k]} for k in self._seconds]
        out.extend({"record": "step", **s} for s in self.steps)
        return out

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=False) + "\n" for r in self.records())
