"""Event records and columnar event streams."""

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InputError


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def canonical_order(t, x, y, p):
    """Indices sorting events by (t, y, x, p) ascending."""
    return np.lexsort((p, x, y, t))


@dataclass(eq=False)
class EventStream:
    """Time-sorted events over a ``width`` x ``height`` sensor.

    Stored column-wise: ``t`` int64 microseconds, ``x``/``y`` int32 pixel
    coordinates and ``p`` int8 polarity in {-1, +1}. ``t_start``/``t_end``
    bound the time interval the stream covers.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t_start: int
    t_end: int

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        self.x = np.ascontiguousarray(self.x, dtype=np.int32)
        self.y = np.ascontiguousarray(self.y, dtype=np.int32)
        self.p = np.ascontiguousarray(self.p, dtype=np.int8)
        self.width = int(self.width)
        self.height = int(self.height)
        self.t_start = int(self.t_start)
        self.t_end = int(self.t_end)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise InputError("event columns have different lengths")

    @classmethod
    def empty(cls, width, height, t_start=0, t_end=0):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, t_start, t_end)

    @classmethod
    def from_events(cls, events: Iterable[Event], width, height, t_start, t_end, sort=True):
        rows = list(events)
        if rows:
            x, y, t, p = (np.array(c) for c in zip(*rows))
        else:
            x = y = t = p = np.zeros(0, dtype=np.int64)
        stream = cls(t, x, y, p, width, height, t_start, t_end)
        return stream.sorted() if sort else stream

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    @property
    def events(self):
        return list(self)

    @property
    def duration(self):
        return self.t_end - self.t_start

    def polarity_sum(self):
        return int(self.p.sum(dtype=np.int64))

    def sorted(self):
        order = canonical_order(self.t, self.x, self.y, self.p)
        return EventStream(self.t[order], self.x[order], self.y[order], self.p[order],
                           self.width, self.height, self.t_start, self.t_end)

    def is_canonical(self):
        if len(self) < 2:
            return True
        order = canonical_order(self.t, self.x, self.y, self.p)
        return bool(np.all(order == np.arange(len(self))))

    def validate(self):
        """Raise InputError on any invariant violation."""
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"invalid geometry {self.width}x{self.height}")
        if self.t_end < self.t_start:
            raise InputError(f"t_end {self.t_end} precedes t_start {self.t_start}")
        if len(self) == 0:
            return self
        bad = np.flatnonzero((self.p != 1) & (self.p != -1))
        if bad.size:
            raise InputError(f"invalid polarity {self.p[bad[0]]} at event {bad[0]}")
        bad = np.flatnonzero((self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height))
        if bad.size:
            k = bad[0]
            raise InputError(f"event {k} at ({self.x[k]}, {self.y[k]}) outside {self.width}x{self.height}")
        bad = np.flatnonzero((self.t < self.t_start) | (self.t > self.t_end))
        if bad.size:
            raise InputError(f"event {bad[0]} timestamp {self.t[bad[0]]} outside [{self.t_start}, {self.t_end}]")
        if not self.is_canonical():
            raise InputError("events are not in canonical (t, y, x, p) order")
        return self

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height, self.t_start, self.t_end)
            == (other.width, other.height, other.t_start, other.t_end)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self):
        return (f"EventStream(n={len(self)}, {self.width}x{self.height}, "
                f"t=[{self.t_start}, {self.t_end}])")
