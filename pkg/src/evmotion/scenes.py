"""Deterministic synthetic scenes with known motion, used as ground truth."""

import numpy as np

from .errors import InputError
from .simulate import FrameSequence

DEFAULT_EPS = 1e-3


def frame_times(duration_us, fps):
    """Integer microsecond sample times covering ``[0, duration_us]``."""
    if not fps > 0 or not duration_us > 0:
        raise InputError(f"fps and duration must be positive, got fps={fps}, duration={duration_us}")
    period = 1e6 / fps
    if period < 1:
        raise InputError(f"fps {fps} exceeds the 1 MHz timestamp resolution")
    n = int(np.floor(duration_us / period + 1e-9)) + 1
    return np.round(np.arange(n) * period).astype(np.int64)


def periodic_texture(rng, size, scale=4.0):
    """Seeded smooth periodic texture of shape ``(size, size)`` normalised to [0, 1].

    White noise low-pass filtered in the Fourier domain with a Gaussian of
    spatial width ``scale`` pixels.
    """
    noise = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    gain = np.exp(-2.0 * (np.pi * scale) ** 2 * (fx ** 2 + fy ** 2))
    tex = np.real(np.fft.ifft2(np.fft.fft2(noise) * gain))
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / (hi - lo) if hi > lo else np.zeros_like(tex)


def sample_periodic(tex, ys, xs):
    """Bilinear sample of a periodic texture at real-valued coordinates."""
    sy, sx = tex.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy, fx = ys - y0, xs - x0
    y0 %= sy
    x0 %= sx
    y1 = (y0 + 1) % sy
    x1 = (x0 + 1) % sx
    top = tex[y0, x0] * (1 - fx) + tex[y0, x1] * fx
    bot = tex[y1, x0] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def interval_coverage(lo, hi, n):
    """Fraction of each unit cell ``[j, j+1)``, j < n, covered by ``[lo, hi]``."""
    j = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(j + 1, hi) - np.maximum(j, lo), 0.0, 1.0)


def _check_speed(speed_px_s, fps):
    step = abs(speed_px_s) / fps
    if step > 1.0 + 1e-12:
        raise InputError(f"motion of {step:.3f} px per frame at {fps} fps exceeds 1 px (aliasing guard)")


def _moving_bar(params, width, height, times, fps):
    background = float(params.get("background", 0.2))
    contrast = float(params.get("contrast", 0.6))
    bar_width = float(params.get("width", 3.0))
    velocity = float(params.get("velocity", fps * 0.5))
    x0 = float(params.get("x0", -bar_width if velocity >= 0 else width))
    eps = float(params.get("log_eps", DEFAULT_EPS))
    _check_speed(velocity, fps)
    bar = (background + eps) * np.exp(contrast) - eps
    if not (0.0 <= background <= 1.0 and 0.0 <= bar <= 1.0):
        raise InputError(f"bar intensity {bar:.4f} for contrast {contrast} leaves [0, 1]")
    frames = np.empty((len(times), height, width))
    for k, t in enumerate(times):
        left = x0 + velocity * t * 1e-6
        cov = interval_coverage(left, left + bar_width, width)
        frames[k] = background + cov[None, :] * (bar - background)
    return frames


def _translating_texture(params, width, height, times, fps, rng):
    vx, vy = (float(v) for v in params.get("velocity", (fps * 0.5, 0.0)))
    _check_speed(vx, fps)
    _check_speed(vy, fps)
    scale = float(params.get("scale", 4.0))
    lo, hi = params.get("range", (0.1, 0.9))
    size = int(params.get("texture_size", 2 * max(width, height)))
    tex = lo + (hi - lo) * periodic_texture(rng, size, scale)
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    frames = np.empty((len(times), height, width))
    for k, t in enumerate(times):
        s = t * 1e-6
        frames[k] = sample_periodic(tex, yy - vy * s, xx - vx * s)
    return frames


def synth_scene(kind, params=None, geometry=(32, 32), duration_us=100_000, fps=1000.0, seed=0) -> FrameSequence:
    """Render a synthetic scene.

    kind
        ``moving_bar``: vertical bar ``width`` px wide whose log contrast
        against ``background`` is ``contrast``, moving at ``velocity`` px/s.
        ``translating_texture``: seeded smooth texture shifted at
        ``velocity = (vx, vy)`` px/s. ``static``: one seeded texture repeated.
    geometry
        ``(width, height)`` in pixels.
    """
    params = dict(params or {})
    width, height = (int(v) for v in geometry)
    if width <= 0 or height <= 0:
        raise InputError(f"invalid geometry {geometry}")
    times = frame_times(duration_us, fps)
    rng = np.random.default_rng(seed)
    if kind == "moving_bar":
        frames = _moving_bar(params, width, height, times, fps)
    elif kind == "translating_texture":
        frames = _translating_texture(params, width, height, times, fps, rng)
    elif kind == "static":
        params["velocity"] = (0.0, 0.0)
        frames = _translating_texture(params, width, height, times[:1], fps, rng)
        frames = np.repeat(frames, len(times), axis=0)
    else:
        raise InputError(f"unknown scene kind {kind!r}")
    return FrameSequence(frames, times)
