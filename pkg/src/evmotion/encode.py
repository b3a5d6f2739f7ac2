"""Voxel grid encoding of event streams and clip assembly."""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .events import EventStream

DEFAULT_BINS = 3
CLIP_BOUNDS = (-0.5, 0.5)


@dataclass
class VoxelGrid:
    data: np.ndarray        # (B, H, W)
    t_lo: float
    t_hi: float

    @property
    def bins(self):
        return self.data.shape[0]

    def mass(self):
        return float(self.data.sum(dtype=np.float64))


@dataclass
class VoxelClip:
    grids: list
    sampling: str

    def __post_init__(self):
        shapes = {g.data.shape for g in self.grids}
        if len(shapes) > 1:
            raise InputError(f"clip grids disagree in shape: {sorted(shapes)}")
        for a, b in zip(self.grids, self.grids[1:]):
            if b.t_lo < a.t_hi:
                raise InputError("clip windows overlap or are out of order")

    def __len__(self):
        return len(self.grids)

    def to_array(self):
        """Stack as ``(T, B, H, W)``."""
        return np.stack([g.data for g in self.grids])

    def mass(self):
        return float(sum(g.mass() for g in self.grids))


def _select_window(stream, t_lo, t_hi, closed_hi):
    t = stream.t
    if t.size < 2 or bool(np.all(t[1:] >= t[:-1])):
        # time-sorted: the window is a contiguous slice
        i0 = int(np.searchsorted(t, t_lo, side="left"))
        i1 = int(np.searchsorted(t, t_hi, side="right" if closed_hi else "left"))
        sel = slice(i0, i1)
    else:
        sel = (t >= t_lo) & ((t <= t_hi) if closed_hi else (t < t_hi))
    return stream.t[sel], stream.x[sel], stream.y[sel], stream.p[sel]


def _accumulate(t, x, y, p, t_lo, t_hi, bins, height, width):
    hw = height * width
    n_cells = bins * hw
    if t.size == 0:
        return np.zeros(n_cells)
    # divide first: t == t_hi then maps to exactly bins - 1
    ts = ((t - t_lo) / (t_hi - t_lo)) * (bins - 1)
    lower = np.floor(ts)
    frac = ts - lower
    idx_type = np.int32 if n_cells + hw < 2**31 else np.int64
    base = lower.astype(idx_type) * idx_type(hw) + (y.astype(idx_type) * idx_type(width) + x)
    pol = p.astype(np.float64)
    grid = np.bincount(base, weights=pol * (1.0 - frac), minlength=n_cells)
    # Upper-neighbour weights go one channel up; events in the last bin have
    # frac == 0, so the overflow channel only ever receives zeros.
    upper = np.bincount(base + idx_type(hw), weights=pol * frac, minlength=n_cells + hw)
    return grid + upper[:n_cells]


def voxel_grid(stream: EventStream, window=None, bins=DEFAULT_BINS, height=None, width=None,
               closed_hi=True, dtype=np.float64, threads=1, chunk_size=1 << 18) -> VoxelGrid:
    """Accumulate events in ``window`` into ``bins`` temporal channels.

    Each event's timestamp is rescaled to ``t* in [0, bins-1]`` over the
    window and its polarity is split between ``floor(t*)`` and
    ``floor(t*) + 1`` by the triangular kernel ``max(0, 1 - |b - t*|)``.
    Events outside the window are ignored. ``closed_hi=False`` excludes
    events sitting exactly on the upper bound.

    With ``threads > 1`` events are split into fixed chunks whose partial
    grids are summed in chunk order.
    """
    if bins < 1:
        raise InputError(f"bin count must be >= 1, got {bins}")
    height = stream.height if height is None else int(height)
    width = stream.width if width is None else int(width)
    t_lo, t_hi = (stream.t_start, stream.t_end) if window is None else window
    if not t_hi > t_lo:
        raise InputError(f"empty window [{t_lo}, {t_hi}]")
    t, x, y, p = _select_window(stream, t_lo, t_hi, closed_hi)
    if threads > 1 and t.size > chunk_size:
        bounds = list(range(0, t.size, chunk_size)) + [t.size]
        parts = list(zip(bounds, bounds[1:]))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(
                lambda ab: _accumulate(t[ab[0]:ab[1]], x[ab[0]:ab[1]], y[ab[0]:ab[1]], p[ab[0]:ab[1]],
                                       t_lo, t_hi, bins, height, width), parts))
        flat = partials[0]
        for part in partials[1:]:
            flat = flat + part
    else:
        flat = _accumulate(t, x, y, p, t_lo, t_hi, bins, height, width)
    return VoxelGrid(flat.reshape(bins, height, width).astype(dtype, copy=False), t_lo, t_hi)


def clip_values(grid: VoxelGrid, lo=CLIP_BOUNDS[0], hi=CLIP_BOUNDS[1]) -> VoxelGrid:
    if not lo < hi:
        raise InputError(f"clip bounds must satisfy lo < hi, got [{lo}, {hi}]")
    return VoxelGrid(np.clip(grid.data, lo, hi), grid.t_lo, grid.t_hi)


def clip_windows(t_start, t_end, segments, mode="uniform_T", span_us=None, training=False, seed=None):
    """Window boundaries ``[(lo, hi), ...]`` for a clip of ``segments`` grids.

    ``uniform_T`` tiles the whole interval. ``dense_window`` tiles a
    contiguous sub-interval of length ``span_us`` (default: half the
    stream), placed at random when ``training`` and centred otherwise.
    """
    if segments < 1:
        raise InputError(f"segment count must be >= 1, got {segments}")
    if mode == "uniform_T":
        lo, hi = float(t_start), float(t_end)
    elif mode == "dense_window":
        duration = t_end - t_start
        span = duration / 2.0 if span_us is None else float(span_us)
        if not 0 < span <= duration:
            raise InputError(f"dense window span {span} outside (0, {duration}]")
        slack = duration - span
        if training:
            offset = np.random.default_rng(seed).uniform(0.0, slack) if slack > 0 else 0.0
        else:
            offset = slack / 2.0
        lo = t_start + offset
        hi = lo + span
    else:
        raise InputError(f"unknown sampling mode {mode!r}")
    edges = np.linspace(lo, hi, segments + 1)
    edges[0], edges[-1] = lo, hi
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def make_clip(stream: EventStream, mode="uniform_T", segments=5, bins=DEFAULT_BINS, clip_bounds=CLIP_BOUNDS,
              span_us=None, training=False, seed=None, dtype=np.float64) -> VoxelClip:
    """Encode a stream as ``segments`` consecutive voxel grids.

    Windows are closed-open except the last, which is closed so the final
    event is encoded. ``clip_bounds=None`` skips clipping.
    """
    if stream.t_end <= stream.t_start:
        warnings.warn(f"degenerate stream: t_start == t_end == {stream.t_start}; returning zero clip",
                      RuntimeWarning, stacklevel=2)
        zero = np.zeros((bins, stream.height, stream.width), dtype=dtype)
        return VoxelClip([VoxelGrid(zero.copy(), stream.t_start, stream.t_end) for _ in range(segments)], mode)
    windows = clip_windows(stream.t_start, stream.t_end, segments, mode, span_us, training, seed)
    grids = []
    for k, (lo, hi) in enumerate(windows):
        g = voxel_grid(stream, (lo, hi), bins, closed_hi=(k == len(windows) - 1), dtype=dtype)
        if clip_bounds is not None:
            g = clip_values(g, *clip_bounds)
        grids.append(g)
    return VoxelClip(grids, mode)
