"""File formats: EVT1 event files, CSV events, VOX1 voxel tensors, TNW1
checkpoints, PGM frame directories and PPM event-frame renderings.

All binary layouts are little-endian.
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CoordinateOutOfRange,
    FormatError,
    InputError,
    InvalidPolarity,
    LengthMismatch,
    MagicMismatch,
    TimestampError,
)
from .events import EventStream
from .simulate import FrameSequence

EVT1_MAGIC = b"EVT1"
EVT1_HEADER = struct.Struct("<4sIIQQQ")
EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])
assert EVT1_HEADER.size == 36 and EVT1_RECORD.itemsize == 14

VOX1_MAGIC = b"VOX1"
VOX1_HEADER = struct.Struct("<4sIIII")

TNW1_MAGIC = b"TNW1"

CSV_COLUMNS = ["t", "x", "y", "p"]


def _read_bytes(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    return path.read_bytes()


def _write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return len(payload)


# EVT1

def events_to_bytes(stream: EventStream) -> bytes:
    stream.validate()
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise InputError(f"geometry {stream.width}x{stream.height} exceeds 16-bit coordinates")
    if stream.t_start < 0:
        raise InputError(f"negative t_start {stream.t_start}")
    rec = np.zeros(len(stream), dtype=EVT1_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    header = EVT1_HEADER.pack(EVT1_MAGIC, stream.width, stream.height, stream.t_start, stream.t_end, len(stream))
    return header + rec.tobytes()


def write_events(stream: EventStream, path) -> int:
    """Write an EVT1 file and return its size in bytes."""
    return _write_bytes(path, events_to_bytes(stream))


def _record_offset(k, field=None):
    base = EVT1_HEADER.size + k * EVT1_RECORD.itemsize
    return base + (EVT1_RECORD.fields[field][1] if field else 0)


def events_from_bytes(buf: bytes) -> EventStream:
    if len(buf) < EVT1_HEADER.size:
        if len(buf) >= 4 and buf[:4] != EVT1_MAGIC:
            raise MagicMismatch(f"bad magic {buf[:4]!r}, expected {EVT1_MAGIC!r}", offset=0)
        raise LengthMismatch(f"truncated header: {len(buf)} of {EVT1_HEADER.size} bytes", offset=len(buf))
    magic, width, height, t_start, t_end, count = EVT1_HEADER.unpack_from(buf, 0)
    if magic != EVT1_MAGIC:
        raise MagicMismatch(f"bad magic {magic!r}, expected {EVT1_MAGIC!r}", offset=0)
    if t_end < t_start:
        raise TimestampError(f"t_end {t_end} precedes t_start {t_start}", offset=20)
    body = len(buf) - EVT1_HEADER.size
    if body != count * EVT1_RECORD.itemsize:
        raise LengthMismatch(f"header declares {count} records ({count * EVT1_RECORD.itemsize} bytes) "
                             f"but body holds {body} bytes", offset=EVT1_HEADER.size)
    rec = np.frombuffer(buf, dtype=EVT1_RECORD, count=count, offset=EVT1_HEADER.size)

    def first(mask):
        return int(np.flatnonzero(mask)[0])

    bad = (rec["p"] != 1) & (rec["p"] != -1)
    if bad.any():
        k = first(bad)
        raise InvalidPolarity(f"invalid polarity {rec['p'][k]} at record {k}", offset=_record_offset(k, "p"))
    bad = rec["pad"] != 0
    if bad.any():
        k = first(bad)
        raise FormatError(f"non-zero pad byte at record {k}", offset=_record_offset(k, "pad"))
    bad = (rec["x"] >= width) | (rec["y"] >= height)
    if bad.any():
        k = first(bad)
        raise CoordinateOutOfRange(f"record {k} at ({rec['x'][k]}, {rec['y'][k]}) outside {width}x{height}",
                                   offset=_record_offset(k, "x"))
    t = rec["t"]
    bad = (t < t_start) | (t > t_end)
    if bad.any():
        k = first(bad)
        raise TimestampError(f"record {k} timestamp {t[k]} outside [{t_start}, {t_end}]",
                             offset=_record_offset(k, "t"))
    stream = EventStream(t.astype(np.int64), rec["x"], rec["y"], rec["p"], width, height, t_start, t_end)
    if not stream.is_canonical():
        key = np.lexsort((stream.p, stream.x, stream.y, stream.t))
        k = first(key != np.arange(count))
        raise TimestampError(f"records not in canonical (t, y, x, p) order near record {k}",
                             offset=_record_offset(k))
    return stream


def read_events(path) -> EventStream:
    return events_from_bytes(_read_bytes(path))


# CSV

def events_to_csv(stream: EventStream, path):
    """Write ``t,x,y,p`` rows after a ``#`` metadata line carrying geometry and interval."""
    stream.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# width={stream.width} height={stream.height} t_start={stream.t_start} t_end={stream.t_end}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()))
    return path


def _parse_meta(line, lineno):
    meta = {}
    for item in line.lstrip("#").split():
        key, sep, val = item.partition("=")
        if not sep:
            raise FormatError(f"line {lineno}: malformed metadata item {item!r}")
        try:
            meta[key] = int(val)
        except ValueError:
            raise FormatError(f"line {lineno}: metadata {key} is not an integer: {val!r}") from None
    return meta


def csv_to_events(path, width=None, height=None) -> EventStream:
    """Read a CSV written by :func:`events_to_csv`.

    Without a metadata line the geometry comes from ``width``/``height`` (or
    the largest coordinates) and the interval from the first and last
    timestamps.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    meta, rows = {}, []
    seen_header = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                meta.update(_parse_meta(line, lineno))
                continue
            fields = next(csv.reader([line]))
            if not seen_header and [f.strip() for f in fields] == CSV_COLUMNS:
                seen_header = True
                continue
            if len(fields) != 4:
                raise FormatError(f"line {lineno}: expected 4 fields t,x,y,p, got {len(fields)}")
            try:
                t, x, y, p = (int(f) for f in fields)
            except ValueError:
                raise FormatError(f"line {lineno}: non-integer field in {line!r}") from None
            if p not in (-1, 1):
                raise InvalidPolarity(f"line {lineno}: invalid polarity {p}")
            if x < 0 or y < 0 or t < 0:
                raise FormatError(f"line {lineno}: negative value in {line!r}")
            rows.append((t, x, y, p))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    width = meta.get("width", width if width is not None else (int(arr[:, 1].max()) + 1 if len(arr) else 1))
    height = meta.get("height", height if height is not None else (int(arr[:, 2].max()) + 1 if len(arr) else 1))
    t_start = meta.get("t_start", int(arr[:, 0].min()) if len(arr) else 0)
    t_end = meta.get("t_end", int(arr[:, 0].max()) if len(arr) else 0)
    stream = EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height, t_start, t_end)
    try:
        return stream.validate()
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None


# VOX1

def voxels_to_bytes(data) -> bytes:
    arr = np.asarray(data.to_array() if hasattr(data, "to_array") else data)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise InputError(f"voxel tensor must be (T, B, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("voxel tensor contains non-finite values")
    return VOX1_HEADER.pack(VOX1_MAGIC, *arr.shape) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_voxels(data, path) -> int:
    """Write a ``(T, B, H, W)`` array or a VoxelClip as VOX1."""
    return _write_bytes(path, voxels_to_bytes(data))


def voxels_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < VOX1_HEADER.size:
        raise LengthMismatch(f"truncated header: {len(buf)} of {VOX1_HEADER.size} bytes", offset=len(buf))
    magic, t, b, h, w = VOX1_HEADER.unpack_from(buf, 0)
    if magic != VOX1_MAGIC:
        raise MagicMismatch(f"bad magic {magic!r}, expected {VOX1_MAGIC!r}", offset=0)
    n = t * b * h * w
    body = len(buf) - VOX1_HEADER.size
    if body != 4 * n:
        raise LengthMismatch(f"shape {t}x{b}x{h}x{w} needs {4 * n} bytes, body holds {body}",
                             offset=VOX1_HEADER.size)
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=VOX1_HEADER.size).reshape(t, b, h, w)
    return arr.astype(np.float32)


def read_voxels(path) -> np.ndarray:
    return voxels_from_bytes(_read_bytes(path))


# TNW1

def checkpoint_to_bytes(tensors, meta=None) -> bytes:
    """Serialise named float64 tensors.

    Layout: magic, u32 manifest length, UTF-8 JSON manifest
    ``{"meta": ..., "tensors": [{"name", "shape"}, ...]}``, then each tensor
    as little-endian f64 in manifest order.
    """
    items = list(tensors.items()) if hasattr(tensors, "items") else list(tensors)
    manifest = {
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(np.shape(arr))} for name, arr in items],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [TNW1_MAGIC, struct.pack("<I", len(blob)), blob]
    parts += [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in items]
    return b"".join(parts)


def write_checkpoint(path, tensors, meta=None) -> int:
    return _write_bytes(path, checkpoint_to_bytes(tensors, meta))


def checkpoint_from_bytes(buf: bytes):
    """Return ``(tensors, meta)`` with tensors as an ordered dict of float64 arrays."""
    if len(buf) < 8:
        raise LengthMismatch(f"truncated header: {len(buf)} bytes", offset=len(buf))
    if buf[:4] != TNW1_MAGIC:
        raise MagicMismatch(f"bad magic {buf[:4]!r}, expected {TNW1_MAGIC!r}", offset=0)
    (mlen,) = struct.unpack_from("<I", buf, 4)
    if 8 + mlen > len(buf):
        raise LengthMismatch(f"manifest of {mlen} bytes runs past end of file", offset=8)
    try:
        manifest = json.loads(buf[8:8 + mlen].decode("utf-8"))
        entries = [(str(e["name"]), tuple(int(d) for d in e["shape"])) for e in manifest["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", offset=8) from None
    offset = 8 + mlen
    tensors = {}
    for name, shape in entries:
        n = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * n > len(buf):
            raise LengthMismatch(f"tensor {name!r} {shape} runs past end of file", offset=offset)
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(buf):
        raise LengthMismatch(f"{len(buf) - offset} trailing bytes after last tensor", offset=offset)
    return tensors, manifest.get("meta", {})


def read_checkpoint(path):
    return checkpoint_from_bytes(_read_bytes(path))


# PGM / PPM

def _pnm_header(buf, path):
    """Parse a binary PNM header; returns (magic, width, height, maxval, data offset)."""
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if i >= len(buf):
            raise FormatError(f"{path}: truncated header", offset=i)
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        tokens.append(buf[i:j])
        i = j
    if i >= len(buf) or not buf[i:i + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header", offset=i)
    magic = tokens[0]
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field", offset=0) from None
    return magic, width, height, maxval, i + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 255 as uint8 ``(H, W)``."""
    buf = _read_bytes(path)
    if buf[:2] != b"P5":
        raise MagicMismatch(f"{path}: bad magic {buf[:2]!r}, expected b'P5'", offset=0)
    _, width, height, maxval, start = _pnm_header(buf, path)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (need 255)", offset=0)
    need = width * height
    if len(buf) - start != need:
        raise LengthMismatch(f"{path}: expected {need} pixel bytes, found {len(buf) - start}", offset=start)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=start).reshape(height, width).copy()


def write_pgm(path, image) -> int:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    return _write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_ppm(path, rgb) -> int:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return _write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = _read_bytes(path)
    if buf[:2] != b"P6":
        raise MagicMismatch(f"{path}: bad magic {buf[:2]!r}, expected b'P6'", offset=0)
    _, width, height, maxval, start = _pnm_header(buf, path)
    need = width * height * 3
    if maxval != 255 or len(buf) - start != need:
        raise LengthMismatch(f"{path}: expected {need} pixel bytes at maxval 255", offset=start)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=start).reshape(height, width, 3).copy()


# frame directories

TIMESTAMPS_FILE = "timestamps.txt"


def read_frame_dir(directory) -> FrameSequence:
    """Load ``*.pgm`` frames (lexicographic order) and their ``timestamps.txt`` sidecar."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"frame directory not found: {directory}")
    stamp_path = directory / TIMESTAMPS_FILE
    if not stamp_path.is_file():
        raise InputError(f"missing timestamps file: {stamp_path}")
    names = sorted(p.name for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    if not names:
        raise InputError(f"no .pgm frames in {directory}")
    stamps = []
    for lineno, line in enumerate(stamp_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            stamps.append(int(line.strip()))
        except ValueError:
            raise FormatError(f"{stamp_path}: line {lineno}: not an integer: {line.strip()!r}") from None
    if len(stamps) != len(names):
        raise FormatError(f"{stamp_path}: {len(stamps)} timestamps for {len(names)} frames")
    frames = [read_pgm(directory / n) for n in names]
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"frames in {directory} differ in size")
    return FrameSequence(np.stack(frames).astype(np.float64) / 255.0, np.array(stamps))


def write_frame_dir(seq: FrameSequence, directory):
    """Write frames as 8-bit PGMs plus ``timestamps.txt``; timestamps are rounded to integers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = max(5, len(str(len(seq))))
    for k, frame in enumerate(seq.frames):
        write_pgm(directory / f"frame_{k:0{digits}d}.pgm", frame)
    stamps = np.round(seq.timestamps).astype(np.int64)
    (directory / TIMESTAMPS_FILE).write_text("".join(f"{t}\n" for t in stamps.tolist()))
    return directory


# rendering

RED = (255, 0, 0)
BLUE = (0, 0, 255)
BACKGROUND = (255, 255, 255)


def render_event_frames(stream: EventStream, window_us, out_dir, background=BACKGROUND):
    """Write one P6 image per ``window_us`` slice of the stream.

    A pixel is red where the window's net polarity is positive, blue where
    negative and ``background`` otherwise. The last window is closed so the
    final event is drawn. Returns the written paths.
    """
    if not window_us > 0:
        raise InputError(f"window_us must be positive, got {window_us}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    duration = stream.t_end - stream.t_start
    n_windows = max(1, int(np.ceil(duration / window_us)))
    idx = np.minimum((stream.t - stream.t_start) // window_us, n_windows - 1).astype(np.int64)
    hw = stream.width * stream.height
    net = np.bincount(idx * hw + stream.y.astype(np.int64) * stream.width + stream.x,
                      weights=stream.p.astype(np.float64), minlength=n_windows * hw)
    net = net.reshape(n_windows, stream.height, stream.width)
    paths = []
    digits = max(5, len(str(n_windows)))
    for k in range(n_windows):
        img = np.empty((stream.height, stream.width, 3), dtype=np.uint8)
        img[:] = background
        img[net[k] > 0] = RED
        img[net[k] < 0] = BLUE
        path = out_dir / f"events_{k:0{digits}d}.ppm"
        write_ppm(path, img)
        paths.append(path)
    return paths


__all__ = [
    "csv_to_events",
    "events_from_bytes",
    "events_to_bytes",
    "events_to_csv",
    "read_checkpoint",
    "read_events",
    "read_frame_dir",
    "read_pgm",
    "read_ppm",
    "read_voxels",
    "render_event_frames",
    "write_checkpoint",
    "write_events",
    "write_frame_dir",
    "write_pgm",
    "write_ppm",
    "write_voxels",
]
