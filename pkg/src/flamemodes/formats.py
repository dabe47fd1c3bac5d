"""On-disk formats: CSV and PMTS pressure records, dataset directories, BLVC checkpoints.

All binary formats are little-endian. PMTS layout::

    b"PMTS" | u16 version=1 | u16 channels | f64 sample_rate | u64 n_samples
    | f64 Q | f64 phi | u8 label (0 none, 1..3 = Mode I..III) | f64 samples, row-major

Unknown operating points are stored as NaN. The checkpoint layout (``BLVC``)
is documented on :func:`save_checkpoint`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetNotFoundError, FormatError, HyperparameterMismatch
from .numgrad import ParamStore
from .records import N_CHANNELS, ModeLabel, OperatingPoint, PressureRecord

PMTS_MAGIC = b"PMTS"
PMTS_VERSION = 1
CKPT_MAGIC = b"BLVC"
CKPT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_PMTS_HEADER = struct.Struct("<4sHHdQddB")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# PMTS
# ---------------------------------------------------------------------------

def pmts_bytes(rec: PressureRecord) -> bytes:
    op = rec.operating_point
    Q, phi = (op.Q, op.phi) if op is not None else (math.nan, math.nan)
    label = 0 if rec.label is None else int(rec.label)
    header = _PMTS_HEADER.pack(PMTS_MAGIC, PMTS_VERSION, rec.samples.shape[1], float(rec.sample_rate),
                               rec.n_samples, float(Q), float(phi), label)
    return header + np.ascontiguousarray(rec.samples, dtype="<f8").tobytes()


def parse_pmts(data: bytes, case_id: str = "", source: str = "<bytes>") -> PressureRecord:
    if len(data) < _PMTS_HEADER.size:
        raise FormatError(f"{source}: truncated PMTS header ({len(data)} of {_PMTS_HEADER.size} bytes)")
    magic, version, n_ch, rate, n, Q, phi, label = _PMTS_HEADER.unpack_from(data, 0)
    if magic != PMTS_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0, expected {PMTS_MAGIC!r}")
    if version != PMTS_VERSION:
        raise FormatError(f"{source}: unsupported PMTS version {version} at offset 4")
    if n_ch != N_CHANNELS:
        raise FormatError(f"{source}: channel count {n_ch} at offset 6, expected {N_CHANNELS}")
    if label > 3:
        raise FormatError(f"{source}: invalid label code {label} at offset {_PMTS_HEADER.size - 1}")
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(f"{source}: invalid sample rate {rate} at offset 8")
    expected = _PMTS_HEADER.size + 8 * n * n_ch
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes in"
        raise FormatError(f"{source}: {kind} sample block ({len(data)} bytes, expected {expected})")
    samples = np.frombuffer(data, dtype="<f8", offset=_PMTS_HEADER.size).reshape(n, n_ch).astype(np.float64)
    op = None if (math.isnan(Q) or math.isnan(phi)) else OperatingPoint(Q, phi)
    return PressureRecord(samples, rate, op, ModeLabel(label) if label else None, case_id)


def save_pmts(rec: PressureRecord, path) -> None:
    atomic_write_bytes(path, pmts_bytes(rec))


def load_pmts(path) -> PressureRecord:
    path = Path(path)
    return parse_pmts(path.read_bytes(), case_id=path.stem, source=str(path))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

CHANNEL_COLUMNS = [f"ch{k:02d}" for k in range(N_CHANNELS)]


def csv_text(rec: PressureRecord, with_time: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow((["t"] if with_time else []) + CHANNEL_COLUMNS)
    for k, row in enumerate(rec.samples):
        vals = [repr(float(v)) for v in row]
        writer.writerow(([repr(k / rec.sample_rate)] if with_time else []) + vals)
    return buf.getvalue()


def save_csv(rec: PressureRecord, path, with_time: bool = True) -> None:
    atomic_write_text(path, csv_text(rec, with_time))


def parse_csv(text: str, sample_rate: float | None = None, case_id: str = "", source: str = "<text>") -> PressureRecord:
    """Parse ``[t,]ch00..ch15`` CSV. Without a time column ``sample_rate`` is required."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(f"{source}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    has_time = bool(header) and header[0].lower() == "t"
    channels = header[1:] if has_time else header
    if len(channels) != N_CHANNELS:
        raise FormatError(f"{source}: line 1: header has {len(channels)} channel columns, expected {N_CHANNELS}")
    if channels != CHANNEL_COLUMNS:
        raise FormatError(f"{source}: line 1: malformed header {header!r}; expected [t,]ch00..ch15")
    width = len(header)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise FormatError(f"{source}: line {lineno}: {len(row)} fields, expected {width}")
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise FormatError(f"{source}: line {lineno}: {exc}") from None
    if not data:
        raise FormatError(f"{source}: no sample rows after the header")
    arr = np.asarray(data, dtype=np.float64)
    if has_time:
        if arr.shape[0] >= 2:
            dt = arr[1, 0] - arr[0, 0]
            if not dt > 0:
                raise FormatError(f"{source}: line 3: time column is not increasing")
            rate = 1.0 / dt if sample_rate is None else sample_rate
        elif sample_rate is None:
            raise FormatError(f"{source}: cannot infer sample rate from a single row; pass sample_rate")
        else:
            rate = sample_rate
        samples = arr[:, 1:]
    else:
        if sample_rate is None:
            raise FormatError(f"{source}: no time column; pass sample_rate")
        rate = sample_rate
        samples = arr
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{source}: non-finite sample values")
    return PressureRecord(samples, float(rate), None, None, case_id)


def load_csv(path, sample_rate: float | None = None) -> PressureRecord:
    path = Path(path)
    return parse_csv(path.read_text(encoding="utf-8"), sample_rate, case_id=path.stem, source=str(path))


def load_dataset(path, format: str | None = None, sample_rate: float | None = None) -> PressureRecord:
    """Load one record; ``format`` is ``"csv"`` or ``"pmts"`` (inferred from the suffix if omitted)."""
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"{path}: no such file")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        return load_csv(path, sample_rate)
    if fmt == "pmts":
        return load_pmts(path)
    raise FormatError(f"{path}: unknown dataset format {fmt!r} (expected csv or pmts)")


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def save_dataset_dir(records: list[PressureRecord], directory, extra: dict | None = None) -> dict:
    """Write one PMTS file per record plus ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cases = []
    for rec in records:
        fname = f"{rec.case_id}.pmts"
        save_pmts(rec, directory / fname)
        op = rec.operating_point
        cases.append({
            "case_id": rec.case_id,
            "file": fname,
            "Q": None if op is None else op.Q,
            "phi": None if op is None else op.phi,
            "label": None if rec.label is None else str(rec.label),
            "n_samples": rec.n_samples,
            "sample_rate": rec.sample_rate,
        })
    manifest = {"format": "PMTS", "format_version": PMTS_VERSION, "n_cases": len(cases), "cases": cases}
    if extra:
        manifest.update(extra)
    write_json(directory / MANIFEST_NAME, manifest)
    return manifest


def load_dataset_dir(directory) -> list[PressureRecord]:
    """Load every case of a dataset directory (manifest order, else sorted file names)."""
    directory = Path(directory)
    if not directory.exists():
        raise DatasetNotFoundError(f"{directory}: no such dataset")
    if directory.is_file():
        return [load_dataset(directory)]
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            files = [c["file"] for c in manifest["cases"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{manifest_path}: malformed manifest ({exc})") from None
    else:
        files = sorted(p.name for p in directory.iterdir() if p.suffix.lower() in (".pmts", ".csv"))
    if not files:
        raise DatasetNotFoundError(f"{directory}: no .pmts or .csv cases found")
    return [load_dataset(directory / f) for f in files]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Normalizer:
    """Per-channel z-score statistics."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


@dataclass
class Checkpoint:
    params: ParamStore
    normalizer: Normalizer
    hidden1: int
    hidden2: int
    window_len: int
    stride: int
    beta: float = 1.0
    seed: int = 0
    best_epoch: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)
    latent_dim: int = 2
    n_channels: int = N_CHANNELS
    version: int = CKPT_VERSION


_CKPT_HYPER = struct.Struct("<IIIIIIdQI")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialise a checkpoint.

    Layout after ``b"BLVC" | u16 version``:

    * hyperparameters: u32 n_channels, hidden1, hidden2, window_len, stride,
      latent_dim | f64 beta | u64 seed | u32 best_epoch
    * normalizer: u16 n | f64[n] mean | f64[n] std
    * tensors: u32 count, then per tensor u16 name length | name (UTF-8) |
      u32 rank | u64 dims[rank] | f64 data (row-major)
    * history: u32 epochs | (f64 train, f64 val) per epoch
    """
    out = [CKPT_MAGIC, struct.pack("<H", ckpt.version)]
    out.append(_CKPT_HYPER.pack(ckpt.n_channels, ckpt.hidden1, ckpt.hidden2, ckpt.window_len, ckpt.stride,
                                ckpt.latent_dim, float(ckpt.beta), int(ckpt.seed), int(ckpt.best_epoch)))
    mean = np.ascontiguousarray(ckpt.normalizer.mean, dtype="<f8")
    std = np.ascontiguousarray(ckpt.normalizer.std, dtype="<f8")
    out.append(struct.pack("<H", mean.size))
    out += [mean.tobytes(), std.tobytes()]
    out.append(struct.pack("<I", len(ckpt.params)))
    for name, value in ckpt.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", value.ndim))
        out.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    out.append(struct.pack("<I", len(ckpt.history)))
    if ckpt.history:
        out.append(np.asarray(ckpt.history, dtype="<f8").reshape(-1, 2).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated while reading {what} at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))

    def floats(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0, expected {CKPT_MAGIC!r}")
    (version,) = r.unpack("H", "version")
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    n_ch, h1, h2, W, stride, latent, beta, seed, best = r.unpack(_CKPT_HYPER.format[1:], "hyperparameters")
    (n_norm,) = r.unpack("H", "normalizer size")
    mean = r.floats(n_norm, "normalizer mean")
    std = r.floats(n_norm, "normalizer std")
    (count,) = r.unpack("I", "tensor count")
    params = ParamStore()
    for _ in range(count):
        (nlen,) = r.unpack("H", "tensor name length")
        try:
            name = r.take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{source}: tensor name is not UTF-8 near offset {r.pos}") from None
        (rank,) = r.unpack("I", f"rank of {name}")
        dims = r.unpack(f"{rank}Q", f"dims of {name}") if rank else ()
        size = int(np.prod(dims)) if dims else 1
        try:
            params.add(name, r.floats(size, f"data of {name}").reshape(dims))
        except KeyError:
            raise FormatError(f"{source}: duplicate tensor {name!r}") from None
    (n_hist,) = r.unpack("I", "history length")
    hist = r.floats(2 * n_hist, "history").reshape(-1, 2)
    if r.pos != len(data):
        raise FormatError(f"{source}: {len(data) - r.pos} trailing bytes after history block")
    return Checkpoint(params=params, normalizer=Normalizer(mean, std), hidden1=h1, hidden2=h2, window_len=W,
                      stride=stride, beta=beta, seed=seed, best_epoch=best,
                      history=[(float(a), float(b)) for a, b in hist], latent_dim=latent, n_channels=n_ch,
                      version=version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path, hidden1: int | None = None, hidden2: int | None = None,
                    window_len: int | None = None) -> Checkpoint:
    """Read a checkpoint; any of ``hidden1``/``hidden2``/``window_len`` given must match it."""
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"{path}: checkpoint not found")
    ckpt = parse_checkpoint(path.read_bytes(), str(path))
    for name, want in (("hidden1", hidden1), ("hidden2", hidden2), ("window_len", window_len)):
        have = getattr(ckpt, name)
        if want is not None and want != have:
            raise HyperparameterMismatch(f"{path}: checkpoint has {name}={have}, run expects {want}")
    return ckpt
