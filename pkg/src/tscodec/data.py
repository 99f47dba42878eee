"""Signal containers, flat-file formats, synthetic ECG and preprocessing.

Records are ``(channels, length)`` float64 arrays. Two on-disk formats are
supported:

* CSV: a ``channels,length,sampling_rate`` header, then for each record an
  ``id,label`` line followed by one line of comma-separated values per channel.
* RawF32: magic ``TSC1``, little-endian u32 ``record_count, channels, length,
  sampling_rate_millihertz``, then per record a u8 label and
  ``channels * length`` little-endian f32 samples.
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Label",
    "Format",
    "Record",
    "Dataset",
    "StandardizationStats",
    "NoiseSpec",
    "SyntheticConfig",
    "DataError",
    "LoadError",
    "load_dataset",
    "save_dataset",
    "generate_synthetic",
    "standardize",
    "apply_standardization",
    "unstandardize",
    "resample",
    "random_crop",
    "tile_offsets",
    "add_noise",
    "add_noise_dataset",
]

MAGIC = b"TSC1"
_HEADER = struct.Struct("<4sIIII")


class DataError(ValueError):
    """Invalid data or preprocessing request."""


class LoadError(DataError):
    """A dataset file could not be parsed."""


class Label(enum.IntEnum):
    NORMAL = 0
    ANOMALY = 1
    UNKNOWN = 2

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().upper()
        if key.isdigit():
            return cls(int(key))
        try:
            return cls[key]
        except KeyError:
            raise DataError(f"unknown label {text!r}") from None

    def __str__(self) -> str:
        return self.name.capitalize()


class Format(str, enum.Enum):
    CSV = "csv"
    RAWF32 = "rawf32"

    @classmethod
    def infer(cls, path: str | os.PathLike) -> "Format":
        return cls.CSV if str(path).lower().endswith(".csv") else cls.RAWF32


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    samples: np.ndarray
    sampling_rate: float
    label: Label = Label.UNKNOWN

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 2:
            raise DataError(f"record {self.id!r}: samples must be (channels >= 1, length >= 2), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError(f"record {self.id!r}: non-finite samples")
        if not self.sampling_rate > 0:
            raise DataError(f"record {self.id!r}: sampling_rate must be positive")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "label", Label(self.label))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray, **changes) -> "Record":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple[Record, ...]
    name: str = "dataset"

    def __post_init__(self):
        recs = tuple(self.records)
        if not recs:
            raise DataError("dataset must contain at least one record")
        c, n, fs = recs[0].channels, recs[0].length, recs[0].sampling_rate
        for i, r in enumerate(recs):
            if (r.channels, r.length) != (c, n) or r.sampling_rate != fs:
                raise DataError(
                    f"record {i} ({r.id!r}) has shape {(r.channels, r.length)} @ {r.sampling_rate} Hz, "
                    f"expected {(c, n)} @ {fs} Hz"
                )
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def channels(self) -> int:
        return self.records[0].channels

    @property
    def length(self) -> int:
        return self.records[0].length

    @property
    def sampling_rate(self) -> float:
        return self.records[0].sampling_rate

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(r.label) for r in self.records], dtype=np.int64)

    def stack(self) -> np.ndarray:
        """All samples as one ``(records, channels, length)`` array."""
        return np.stack([r.samples for r in self.records])

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices), name or self.name)

    def map(self, fn, name: str | None = None) -> "Dataset":
        return Dataset(tuple(fn(r) for r in self.records), name or self.name)

    @classmethod
    def from_array(cls, x, sampling_rate: float, labels=None, name: str = "dataset", ids=None) -> "Dataset":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, None, :]
        labels = [Label.UNKNOWN] * len(x) if labels is None else labels
        ids = [f"r{i:05d}" for i in range(len(x))] if ids is None else ids
        return cls(tuple(Record(i, s, sampling_rate, Label(l)) for i, s, l in zip(ids, x, labels)), name)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(~(self.std > 0)):
            raise DataError("standardization std must be positive for every channel")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(d["mean"], d["std"])


@dataclass(frozen=True)
class NoiseSpec:
    variance_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.variance_ratio < 1):
            raise DataError(f"variance_ratio must be in [0, 1), got {self.variance_ratio}")


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 256
    channels: int = 1
    length: int = 1000
    sampling_rate: float = 100.0
    heart_rate_range: tuple[float, float] = (60.0, 100.0)
    anomaly_fraction: float = 0.0
    seed: int = 0
    jitter: float = 0.01
    wander: float = 0.1

    def validate(self) -> None:
        lo, hi = self.heart_rate_range
        if self.count < 1:
            raise DataError("synthetic count must be >= 1")
        if self.channels < 1 or self.length < 2 or not self.sampling_rate > 0:
            raise DataError("synthetic channels >= 1, length >= 2 and sampling_rate > 0 required")
        if not (0 < lo <= hi):
            raise DataError(f"heart_rate_range must satisfy 0 < low <= high, got {self.heart_rate_range}")
        if not (0 <= self.anomaly_fraction <= 1):
            raise DataError("anomaly_fraction must be in [0, 1]")


# ---------------------------------------------------------------------------
# file formats


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path, format: Format | str | None = None) -> None:
    path = Path(path)
    fmt = Format(format) if format is not None else Format.infer(path)
    try:
        if fmt is Format.CSV:
            _atomic_write(path, lambda fh: fh.write(_csv_bytes(dataset)))
        else:
            _atomic_write(path, lambda fh: fh.write(_raw_bytes(dataset)))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def _fmt_rate(rate: float) -> str:
    return repr(float(rate))


def _csv_bytes(ds: Dataset) -> bytes:
    lines = [f"{ds.channels},{ds.length},{_fmt_rate(ds.sampling_rate)}"]
    for r in ds.records:
        if "," in r.id or "\n" in r.id:
            raise DataError(f"record id {r.id!r} cannot be written to CSV")
        lines.append(f"{r.id},{r.label}")
        for row in r.samples:
            # repr of a float64 round-trips exactly
            lines.append(",".join(repr(float(v)) for v in row))
    return ("\n".join(lines) + "\n").encode()


def _raw_bytes(ds: Dataset) -> bytes:
    mhz = int(round(ds.sampling_rate * 1000))
    parts = [_HEADER.pack(MAGIC, len(ds), ds.channels, ds.length, mhz)]
    for r in ds.records:
        parts.append(struct.pack("<B", int(r.label)))
        parts.append(r.samples.astype("<f4").tobytes())
    return b"".join(parts)


def load_dataset(path, format: Format | str | None = None, name: str | None = None) -> Dataset:
    """Read a dataset written in either flat format.

    Raises :class:`LoadError` naming the offending record for malformed input.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    fmt = Format(format) if format is not None else Format.infer(path)
    data = path.read_bytes()
    if not data.strip():
        raise LoadError(f"{path}: empty file")
    name = name or path.stem
    if fmt is Format.CSV:
        return _parse_csv(data.decode(), path, name)
    return _parse_raw(data, path, name)


def _parse_csv(text: str, path: Path, name: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        c_s, n_s, fs_s = lines[0].split(",")
        channels, length, rate = int(c_s), int(n_s), float(fs_s)
    except ValueError:
        raise LoadError(f"{path}: malformed header {lines[0]!r}, expected channels,length,sampling_rate") from None
    if channels < 1 or length < 2 or not rate > 0:
        raise LoadError(f"{path}: invalid header values {lines[0]!r}")
    body = lines[1:]
    group = channels + 1
    if not body or len(body) % group:
        raise LoadError(f"{path}: {len(body)} body lines is not a multiple of {group} (id line + {channels} channels)")
    records = []
    for i in range(len(body) // group):
        head = body[i * group].split(",")
        if len(head) != 2:
            raise LoadError(f"{path}: record {i}: malformed id,label line {body[i * group]!r}")
        try:
            label = Label.parse(head[1])
        except DataError as exc:
            raise LoadError(f"{path}: record {i}: {exc}") from None
        rows = []
        for c in range(channels):
            vals = body[i * group + 1 + c].split(",")
            if len(vals) != length:
                raise LoadError(f"{path}: record {i} channel {c}: {len(vals)} values, expected {length}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise LoadError(f"{path}: record {i} channel {c}: unparseable value") from None
        x = np.array(rows)
        if not np.all(np.isfinite(x)):
            raise LoadError(f"{path}: record {i}: non-finite values")
        records.append(Record(head[0], x, rate, label))
    return Dataset(tuple(records), name)


def _parse_raw(data: bytes, path: Path, name: str) -> Dataset:
    if len(data) < _HEADER.size:
        raise LoadError(f"{path}: truncated header")
    magic, count, channels, length, mhz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if count < 1 or channels < 1 or length < 2 or mhz == 0:
        raise LoadError(f"{path}: invalid header values count={count} channels={channels} length={length}")
    payload = channels * length * 4
    expected = _HEADER.size + count * (1 + payload)
    if len(data) != expected:
        raise LoadError(f"{path}: file is {len(data)} bytes, header implies {expected}")
    rate = mhz / 1000.0
    records = []
    off = _HEADER.size
    for i in range(count):
        label = data[off]
        if label > 2:
            raise LoadError(f"{path}: record {i}: invalid label byte {label}")
        x = np.frombuffer(data, dtype="<f4", count=channels * length, offset=off + 1)
        x = x.astype(np.float64).reshape(channels, length)
        if not np.all(np.isfinite(x)):
            raise LoadError(f"{path}: record {i}: non-finite values")
        records.append(Record(f"r{i:05d}", x, rate, Label(label)))
        off += 1 + payload
    return Dataset(tuple(records), name)


# ---------------------------------------------------------------------------
# synthetic ECG

# (amplitude, centre offset [s], width [s]) of the Gaussian waves of one beat,
# grouped into the P, QRS and T components that channels mix.
_P_WAVE = [(0.12, -0.20, 0.025)]
_QRS = [(-0.12, -0.035, 0.010), (1.0, 0.0, 0.012), (-0.25, 0.035, 0.012)]
_T_WAVE = [(0.30, 0.26, 0.045)]


def _component_trains(t, beats, amps, severity: float = 0.0) -> np.ndarray:
    """Return (3, len(t)) P / QRS / T pulse trains for the given beat times.

    ``severity`` in [0, 1] morphs the template towards an abnormal beat: the
    dominant QRS pulse shrinks and, past 0.5, inverts; the complex widens and
    the T wave flattens. Zero is the normal beat.
    """
    qrs, twave = _QRS, _T_WAVE
    if severity:
        s = severity
        qrs = [(a * (1 - 2 * s) if i == 1 else a, mu * (1 + 0.8 * s), w * (1 + 1.2 * s))
               for i, (a, mu, w) in enumerate(qrs)]
        twave = [(a * (1 - 1.5 * s), mu, w) for a, mu, w in twave]
    out = np.zeros((3, t.size))
    for comp, waves in enumerate((_P_WAVE, qrs, twave)):
        for a, mu, w in waves:
            d = t[None, :] - (beats[:, None] + mu)
            out[comp] += (amps[:, None] * a * np.exp(-0.5 * (d / w) ** 2)).sum(axis=0)
    return out


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Generate a pseudo-ECG dataset.

    Each record is a train of P/QRS/T pulses at a heart rate drawn from
    ``heart_rate_range`` with small per-beat timing and amplitude jitter, plus
    slow baseline wander. Channels are a dataset-wide fixed random mixture of
    the three component trains, so leads are strongly correlated. A fraction
    ``anomaly_fraction`` of the records uses a beat template altered by a
    severity drawn from ``U(0, 1)`` per record and is labelled ``Anomaly``;
    mild cases are hard to tell from normal beats.
    """
    config.validate()
    root = np.random.SeedSequence(config.seed)
    mix_seq, label_seq, rec_seq = root.spawn(3)
    mix_rng = np.random.default_rng(mix_seq)
    if config.channels == 1:
        mixing = np.ones((1, 3))
    else:
        # columns weight the P, QRS and T trains per lead
        mixing = np.column_stack([
            mix_rng.uniform(0.5, 1.5, config.channels) * mix_rng.choice([-1, 1], config.channels, p=[0.2, 0.8]),
            mix_rng.uniform(0.3, 1.2, config.channels) * mix_rng.choice([-1, 1], config.channels, p=[0.25, 0.75]),
            mix_rng.uniform(0.5, 1.5, config.channels),
        ])
    n_anom = int(round(config.anomaly_fraction * config.count))
    anomalous = np.zeros(config.count, dtype=bool)
    anomalous[np.random.default_rng(label_seq).permutation(config.count)[:n_anom]] = True

    fs = float(config.sampling_rate)
    t = np.arange(config.length) / fs
    duration = config.length / fs
    lo, hi = config.heart_rate_range
    records = []
    for i, seq in enumerate(rec_seq.spawn(config.count)):
        rng = np.random.default_rng(seq)
        severity = rng.uniform(0.0, 1.0) if anomalous[i] else 0.0
        rr = 60.0 / rng.uniform(lo, hi)
        start = rng.uniform(-rr, 0.0)
        n_beats = int(np.ceil((duration - start) / rr)) + 2
        jitter = np.clip(rng.normal(0.0, config.jitter, n_beats), -2 * config.jitter, 2 * config.jitter)
        beats = start + rr * (np.arange(n_beats) + jitter)
        amps = 1.0 + np.clip(rng.normal(0.0, 0.05, n_beats), -0.15, 0.15)
        trains = _component_trains(t, beats, amps, severity)
        gains = rng.uniform(0.9, 1.1, (config.channels, 1))
        x = gains * (mixing @ trains)
        if config.wander:
            f = rng.uniform(0.05, 0.3)
            phase = rng.uniform(0, 2 * np.pi, (config.channels, 1))
            x = x + config.wander * np.sin(2 * np.pi * f * t[None, :] + phase)
        label = Label.ANOMALY if anomalous[i] else Label.NORMAL
        records.append(Record(f"syn{i:05d}", x, fs, label))
    return Dataset(tuple(records), "synthetic")


# ---------------------------------------------------------------------------
# preprocessing


def standardize(dataset: Dataset) -> tuple[Dataset, StandardizationStats]:
    """Per-channel z-score over the whole dataset."""
    x = dataset.stack()
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    for c, s in enumerate(std):
        # relative test: floating residue on a constant channel is not variance
        if not s > 1e-12 * max(1.0, abs(mean[c])):
            raise DataError(f"channel {c} has zero variance and cannot be standardized")
    stats = StandardizationStats(mean, std)
    return apply_standardization(dataset, stats), stats


def apply_standardization(dataset: Dataset, stats: StandardizationStats) -> Dataset:
    if stats.mean.shape != (dataset.channels,):
        raise DataError(f"stats cover {stats.mean.shape[0]} channels, dataset has {dataset.channels}")
    m, s = stats.mean[:, None], stats.std[:, None]
    return dataset.map(lambda r: r.with_samples((r.samples - m) / s))


def unstandardize(dataset: Dataset, stats: StandardizationStats) -> Dataset:
    m, s = stats.mean[:, None], stats.std[:, None]
    return dataset.map(lambda r: r.with_samples(r.samples * s + m))


def resample(record: Record, target_rate: float) -> Record:
    """Linearly interpolate onto a uniform grid at ``target_rate``.

    The grid spans the same time interval as the input, so the first and last
    samples are kept and the output has
    ``round((length - 1) * target_rate / sampling_rate) + 1`` samples.
    """
    if not target_rate > 0:
        raise DataError("target_rate must be positive")
    if target_rate == record.sampling_rate:
        return record
    n_out = int(round((record.length - 1) * target_rate / record.sampling_rate)) + 1
    if n_out < 2:
        raise DataError(f"resampling {record.id!r} to {target_rate} Hz leaves {n_out} samples")
    src = np.arange(record.length, dtype=np.float64)
    pos = np.linspace(0.0, record.length - 1.0, n_out)
    out = np.stack([np.interp(pos, src, ch) for ch in record.samples])
    return record.with_samples(out, sampling_rate=float(target_rate))


def random_crop(record: Record, crop_len: int, rng: np.random.Generator) -> Record:
    """Contiguous window of ``crop_len`` samples at a uniform random offset."""
    if crop_len > record.length or crop_len < 2:
        raise DataError(f"cannot crop {crop_len} samples from a record of length {record.length}")
    off = int(rng.integers(0, record.length - crop_len + 1))
    return record.with_samples(record.samples[:, off : off + crop_len])


def tile_offsets(length: int, crop_len: int, count: int) -> list[int]:
    """Evenly spaced window offsets whose windows cover ``[0, length)``."""
    if crop_len > length:
        raise DataError(f"crop_len {crop_len} exceeds length {length}")
    if count < 1:
        raise DataError("count must be >= 1")
    if count == 1:
        return [0]
    span = length - crop_len
    return [int(round(i * span / (count - 1))) for i in range(count)]


def add_noise(record: Record, spec: NoiseSpec) -> Record:
    """Add white Gaussian noise with per-channel variance ``ratio * var(channel)``."""
    if spec.variance_ratio == 0:
        return record
    rng = np.random.default_rng(spec.seed)
    sd = np.sqrt(spec.variance_ratio * record.samples.var(axis=1, keepdims=True))
    return record.with_samples(record.samples + sd * rng.standard_normal(record.samples.shape))


def add_noise_dataset(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Apply :func:`add_noise` to every record with independent per-record seeds."""
    seeds = np.random.SeedSequence(spec.seed).generate_state(len(dataset), dtype=np.uint64)
    return Dataset(
        tuple(add_noise(r, NoiseSpec(spec.variance_ratio, int(s))) for r, s in zip(dataset, seeds)),
        dataset.name,
    )
