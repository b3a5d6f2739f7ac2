"""Frame-to-event simulation by per-pixel log-brightness threshold crossings.

Each pixel keeps a reference log level. Between two frame samples the log
signal is taken to evolve linearly; every time it reaches ``ref + c_pos``
(or ``ref - c_neg``) an event of polarity +1 (or -1) is emitted at the
interpolated crossing time and the reference jumps to the crossed level.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .events import EventStream

# Absorbs float rounding so that a signal landing exactly on a threshold
# multiple (0.3 with c = 0.1) fires that event.
CROSSING_TOL = 1e-9


@dataclass(frozen=True)
class SimulatorConfig:
    c_pos: float = 0.15
    c_neg: float = 0.15
    refractory_us: float = 0.0
    log_eps: float = 1e-3
    max_interp: int = 16

    def __post_init__(self):
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise InputError(f"contrast thresholds must be positive, got c_pos={self.c_pos}, c_neg={self.c_neg}")
        if not self.log_eps > 0:
            raise InputError(f"log_eps must be positive, got {self.log_eps}")
        if self.refractory_us < 0:
            raise InputError(f"refractory_us must be >= 0, got {self.refractory_us}")
        if int(self.max_interp) != self.max_interp or self.max_interp < 0:
            raise InputError(f"max_interp must be a non-negative integer, got {self.max_interp}")


@dataclass
class FrameSequence:
    """Grayscale frames in [0, 1] with strictly increasing microsecond timestamps."""

    frames: np.ndarray
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise InputError(f"expected frames of shape (K, H, W), got {frames.shape}")
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if ts.shape[0] != frames.shape[0]:
            raise InputError(f"{frames.shape[0]} frames but {ts.shape[0]} timestamps")
        if not np.all(np.isfinite(ts)):
            raise InputError("non-finite frame timestamp")
        if ts.shape[0] > 1 and not np.all(np.diff(ts) > 0):
            k = int(np.flatnonzero(np.diff(ts) <= 0)[0])
            raise InputError(f"timestamps not strictly increasing at frame {k + 1}: {ts[k]} -> {ts[k + 1]}")
        self.frames = frames
        self.timestamps = ts

    def __len__(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


def _describe_pixels(mask, limit=5):
    idx = np.argwhere(mask)
    shown = ", ".join(str(tuple(int(v) for v in row)) for row in idx[:limit])
    more = f" and {len(idx) - limit} more" if len(idx) > limit else ""
    return f"{shown}{more}"


def log_intensity(frame, log_eps=1e-3):
    """Elementwise ``ln(frame + log_eps)``.

    Works on a single frame or a stack of frames. Non-finite or
    out-of-range inputs raise InputError listing the offending indices.
    """
    if not log_eps > 0:
        raise InputError(f"log_eps must be positive, got {log_eps}")
    frame = np.asarray(frame, dtype=np.float64)
    bad = ~np.isfinite(frame)
    if bad.any():
        raise InputError(f"non-finite intensity at {_describe_pixels(bad)}")
    bad = (frame < 0) | (frame > 1)
    if bad.any():
        raise InputError(f"intensity outside [0, 1] at {_describe_pixels(bad)}")
    return np.log(frame + log_eps)


def insertion_count(max_abs_dlog, c_min, max_interp):
    """Number of frames to insert in a gap whose largest log change is ``max_abs_dlog``."""
    if max_abs_dlog <= 0:
        return 0
    n = math.ceil(max_abs_dlog / c_min - CROSSING_TOL) - 1
    return int(min(max_interp, max(n, 0)))


def adaptive_upsample(seq: FrameSequence, cfg: SimulatorConfig) -> FrameSequence:
    """Insert log-linearly interpolated frames where brightness changes fast.

    Each gap receives enough equally spaced frames that no pixel moves by more
    than one contrast threshold between samples, capped at ``cfg.max_interp``.
    """
    if len(seq) < 2:
        return seq
    logs = log_intensity(seq.frames, cfg.log_eps)
    c_min = min(cfg.c_pos, cfg.c_neg)
    frames, stamps = [seq.frames[0]], [seq.timestamps[0]]
    for i in range(len(seq) - 1):
        l0, l1 = logs[i], logs[i + 1]
        t0, t1 = seq.timestamps[i], seq.timestamps[i + 1]
        n = insertion_count(float(np.max(np.abs(l1 - l0))), c_min, cfg.max_interp)
        for j in range(1, n + 1):
            a = j / (n + 1)
            lj = (1.0 - a) * l0 + a * l1
            frames.append(np.clip(np.exp(lj) - cfg.log_eps, 0.0, 1.0))
            stamps.append(t0 + a * (t1 - t0))
        frames.append(seq.frames[i + 1])
        stamps.append(t1)
    return FrameSequence(np.stack(frames), np.array(stamps))


def _round_half_up(t):
    return np.floor(t + 0.5).astype(np.int64)


def _segment_crossings(ref, l0, l1, c, sign):
    """Crossings of levels ``ref + sign*k*c`` by a linear ramp l0 -> l1.

    Returns (pixel index, fraction of the segment, new reference levels).
    """
    n = np.floor((sign * (l1 - ref) + CROSSING_TOL) / c)
    n = np.where(sign * (l1 - l0) > 0, np.maximum(n, 0), 0).astype(np.int64)
    pix = np.flatnonzero(n)
    if pix.size == 0:
        return pix, np.zeros(0), ref
    counts = n[pix]
    rep = np.repeat(pix, counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(rep.size) - np.repeat(starts, counts) + 1
    level = ref[rep] + sign * k * c
    frac = np.clip((level - l0[rep]) / (l1[rep] - l0[rep]), 0.0, 1.0)
    ref = ref.copy()
    ref[pix] += sign * counts * c
    return rep, frac, ref


def _apply_refractory(pix, t, refractory):
    """Drop events closer than ``refractory`` us to the previous kept event at the same pixel."""
    order = np.argsort(pix, kind="stable")
    keep = np.zeros(pix.size, dtype=bool)
    last_pix, last_t = -1, 0
    for i in order.tolist():
        q, ti = pix[i], t[i]
        if q != last_pix or ti - last_t >= refractory:
            keep[i] = True
            last_pix, last_t = q, ti
    return keep


def simulate_events(seq: FrameSequence, cfg: SimulatorConfig = SimulatorConfig()) -> EventStream:
    """Convert a frame sequence into an event stream in canonical order."""
    if seq is None or len(seq) < 1:
        raise InputError("cannot simulate events from an empty frame sequence")
    h, w = seq.height, seq.width
    t_start = int(_round_half_up(np.array(seq.timestamps[0])))
    t_end = int(_round_half_up(np.array(seq.timestamps[-1])))
    logs = log_intensity(seq.frames, cfg.log_eps).reshape(len(seq), -1)
    ref = logs[0].copy()
    pix_parts, t_parts, p_parts = [], [], []
    for i in range(len(seq) - 1):
        l0, l1 = logs[i], logs[i + 1]
        t0, t1 = seq.timestamps[i], seq.timestamps[i + 1]
        for sign, c in ((1, cfg.c_pos), (-1, cfg.c_neg)):
            pix, frac, ref = _segment_crossings(ref, l0, l1, c, sign)
            if pix.size:
                pix_parts.append(pix)
                t_parts.append(_round_half_up(t0 + frac * (t1 - t0)))
                p_parts.append(np.full(pix.size, sign, dtype=np.int8))
    if not pix_parts:
        return EventStream.empty(w, h, t_start, t_end)
    pix = np.concatenate(pix_parts)
    t = np.concatenate(t_parts)
    p = np.concatenate(p_parts)
    if cfg.refractory_us > 0:
        # Per pixel, segment order then level order is chronological; a stable
        # sort by pixel keeps it.
        keep = _apply_refractory(pix, t, cfg.refractory_us)
        pix, t, p = pix[keep], t[keep], p[keep]
    t = np.clip(t, t_start, t_end)
    y, x = np.divmod(pix, w)
    return EventStream(t, x, y, p, w, h, t_start, t_end).sorted()


from .scenes import synth_scene  # noqa: E402  (re-export)

__all__ = [
    "CROSSING_TOL",
    "FrameSequence",
    "SimulatorConfig",
    "adaptive_upsample",
    "insertion_count",
    "log_intensity",
    "simulate_events",
    "synth_scene",
]
