"""Periodic orthonormal DWT and coefficient-selection compression.

Coefficients of a record are kept as a ``(channels, coefficients)`` array whose
rows are laid out ``[approx_L, detail_L, detail_{L-1}, ..., detail_1]``; the
flattened (row-major) vector is what global and oracle selection rank.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, Record
from .results import CompressionResult, Method

__all__ = [
    "Family",
    "WaveletSpec",
    "CoefficientTree",
    "EnergyProfile",
    "SelectionMask",
    "WaveletError",
    "max_level",
    "dwt_forward",
    "dwt_inverse",
    "energy_profile",
    "select_global",
    "select_oracle",
    "threshold",
    "compress_reconstruct",
    "coefficients_for_fraction",
]


class WaveletError(ValueError):
    pass


class Family(str, enum.Enum):
    HAAR = "haar"
    DB4 = "db4"


_S2 = 1.0 / math.sqrt(2.0)
# Daubechies scaling filter with four vanishing moments (8 taps).
_DB4 = np.array([
    0.2303778133088965, 0.7148465705529157, 0.6308807679298589, -0.027983769416859854,
    -0.18703481171909309, 0.030841381835560764, 0.0328830116668852, -0.010597401785069032,
])
_LOWPASS = {Family.HAAR: np.array([_S2, _S2]), Family.DB4: _DB4}


def _filters(family: Family) -> tuple[np.ndarray, np.ndarray]:
    h = _LOWPASS[family]
    g = h[::-1] * (-1.0) ** np.arange(h.size)
    return h, g


def max_level(length: int, family: Family | str) -> int:
    family = Family(family)
    k = _LOWPASS[family].size
    if family is Family.HAAR:
        return int(math.floor(math.log2(length))) if length >= 2 else 0
    return int(math.floor(math.log2(length / (k - 1)))) if length >= k - 1 else 0


@dataclass(frozen=True)
class WaveletSpec:
    family: Family = Family.DB4
    levels: int | None = None  # None: deepest valid level for the signal length

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.levels is not None and self.levels < 1:
            raise WaveletError("levels must be >= 1")

    def resolve(self, length: int) -> int:
        top = max_level(length, self.family)
        levels = top if self.levels is None else self.levels
        if levels < 1 or levels > top:
            raise WaveletError(
                f"{levels} levels of {self.family.value} is too deep for length {length} (max {top})"
            )
        return levels

    def padded_length(self, length: int) -> int:
        step = 2 ** self.resolve(length)
        return -(-length // step) * step


@dataclass(frozen=True, eq=False)
class CoefficientTree:
    coeffs: np.ndarray  # (channels, padded_length)
    spec: WaveletSpec
    levels: int
    original_length: int
    sampling_rate: float = 1.0
    record_id: str = ""

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def size(self) -> int:
        return self.coeffs.size

    def band_lengths(self) -> list[int]:
        m = self.coeffs.shape[1]
        return [m >> self.levels] + [m >> lv for lv in range(self.levels, 0, -1)]

    def bands(self, channel: int = 0) -> list[np.ndarray]:
        """``[approx_L, detail_L, ..., detail_1]`` views for one channel."""
        edges = np.cumsum([0] + self.band_lengths())
        row = self.coeffs[channel]
        return [row[a:b] for a, b in zip(edges[:-1], edges[1:])]

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def with_flat(self, values: np.ndarray) -> "CoefficientTree":
        return replace(self, coeffs=np.asarray(values, dtype=np.float64).reshape(self.coeffs.shape))

    def to_record(self) -> Record:
        """The coefficient array packed as a record, for RawF32 debugging dumps."""
        return Record(self.record_id or "coeffs", self.coeffs.copy(), self.sampling_rate)


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    mean_abs: np.ndarray
    dataset_size: int


@dataclass(frozen=True, eq=False)
class SelectionMask:
    kept_positions: np.ndarray  # sorted flattened indices
    n: int


def _analysis(x: np.ndarray, h: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[-1]
    # filter centred with offset K/2 - 1 (same phase as PyWavelets "periodization")
    shift = h.size // 2 - 1
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(h.size)[None, :] - shift) % n
    win = x[:, idx]
    return win @ h, win @ g


def _synthesis(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = a.shape[-1]
    n = 2 * half
    out = np.zeros((a.shape[0], n))
    base = 2 * np.arange(half) - (h.size // 2 - 1)
    for k in range(h.size):
        # for fixed k the target positions (2i + k) mod n are distinct
        out[:, (base + k) % n] += a * h[k] + d * g[k]
    return out


def _forward_array(x: np.ndarray, spec: WaveletSpec, rate: float = 1.0, rid: str = "") -> CoefficientTree:
    length = x.shape[1]
    levels = spec.resolve(length)
    padded = spec.padded_length(length)
    if padded != length:
        x = np.pad(x, ((0, 0), (0, padded - length)))
    h, g = _filters(spec.family)
    details = []
    a = x
    for _ in range(levels):
        a, d = _analysis(a, h, g)
        details.append(d)
    coeffs = np.concatenate([a] + details[::-1], axis=1)
    return CoefficientTree(coeffs, spec, levels, length, rate, rid)


def dwt_forward(record: Record, spec: WaveletSpec = WaveletSpec()) -> CoefficientTree:
    """Multi-level periodic DWT of every channel.

    Lengths that are not a multiple of ``2**levels`` are zero-padded; the tree
    remembers the original length so :func:`dwt_inverse` can trim.
    """
    return _forward_array(record.samples, spec, record.sampling_rate, record.id)


def _inverse_array(tree: CoefficientTree) -> np.ndarray:
    m = tree.coeffs.shape[1]
    if tree.coeffs.ndim != 2 or m % (2 ** tree.levels) or m < tree.original_length:
        raise WaveletError(
            f"coefficient array {tree.coeffs.shape} is inconsistent with {tree.levels} levels "
            f"and original length {tree.original_length}"
        )
    h, g = _filters(tree.spec.family)
    lengths = tree.band_lengths()
    a = tree.coeffs[:, : lengths[0]]
    off = lengths[0]
    for size in lengths[1:]:
        d = tree.coeffs[:, off : off + size]
        if d.shape[1] != a.shape[1]:
            raise WaveletError("approximation and detail bands differ in length")
        a = _synthesis(a, d, h, g)
        off += size
    return a[:, : tree.original_length]


def dwt_inverse(tree: CoefficientTree) -> Record:
    return Record(tree.record_id or "reconstruction", _inverse_array(tree), tree.sampling_rate)


def energy_profile(dataset: Dataset, spec: WaveletSpec = WaveletSpec()) -> EnergyProfile:
    """Mean absolute coefficient value per flattened position across the dataset."""
    if len(dataset) == 0:
        raise WaveletError("energy profile of an empty dataset")
    total = None
    for r in dataset:
        a = np.abs(dwt_forward(r, spec).flat())
        total = a if total is None else total + a
    return EnergyProfile(total / len(dataset), len(dataset))


def _check_n(n: int, total: int) -> None:
    if not (1 <= n <= total):
        raise WaveletError(f"n must be within [1, {total}], got {n}")


def global_mask(profile: EnergyProfile, n: int) -> SelectionMask:
    _check_n(n, profile.mean_abs.size)
    order = np.argsort(-profile.mean_abs, kind="stable")
    return SelectionMask(np.sort(order[:n]), n)


def select_global(tree: CoefficientTree, profile: EnergyProfile, n: int) -> CoefficientTree:
    """Keep the ``n`` positions with highest dataset-mean magnitude, zero the rest."""
    if profile.mean_abs.size != tree.size:
        raise WaveletError(f"profile has {profile.mean_abs.size} positions, tree has {tree.size}")
    mask = global_mask(profile, n)
    out = np.zeros(tree.size)
    out[mask.kept_positions] = tree.flat()[mask.kept_positions]
    return tree.with_flat(out)


def select_oracle(tree: CoefficientTree, n: int) -> tuple[CoefficientTree, SelectionMask]:
    """Keep this record's ``n`` largest-magnitude coefficients.

    Ties go to the lower flattened index. The mask is what a decoder would
    additionally need to receive.
    """
    flat = tree.flat()
    _check_n(n, flat.size)
    order = np.argsort(-np.abs(flat), kind="stable")
    kept = np.sort(order[:n])
    out = np.zeros(flat.size)
    out[kept] = flat[kept]
    return tree.with_flat(out), SelectionMask(kept, n)


def threshold(tree: CoefficientTree, lam: float, mode: str = "hard") -> CoefficientTree:
    if lam < 0:
        raise WaveletError("threshold must be non-negative")
    c = tree.coeffs
    mode = mode.lower()
    if mode == "hard":
        out = np.where(np.abs(c) > lam, c, 0.0)
    elif mode == "soft":
        out = np.sign(c) * np.maximum(np.abs(c) - lam, 0.0)
    else:
        raise WaveletError(f"unknown threshold mode {mode!r}")
    return replace(tree, coeffs=out)


def coefficients_for_fraction(fraction: float, total: int) -> int:
    """Coefficient budget for a kept fraction, at least one coefficient."""
    if not (0 < fraction <= 1):
        raise WaveletError(f"fraction must be in (0, 1], got {fraction}")
    return max(1, min(total, int(round(fraction * total))))


def compress_reconstruct(
    record: Record,
    spec: WaveletSpec,
    n: int,
    method: Method | str = Method.WAVELET_ORACLE,
    profile: EnergyProfile | None = None,
) -> tuple[Record, CompressionResult]:
    """Transform, keep ``n`` coefficients, invert, and score against the input.

    The kept fraction is ``n`` over the number of coefficients, which equals
    the sample count unless the record had to be padded.
    """
    method = Method.parse(method) if isinstance(method, str) else method
    tree = dwt_forward(record, spec)
    if method is Method.WAVELET_GLOBAL:
        if profile is None:
            raise WaveletError("global selection needs an energy profile")
        kept = select_global(tree, profile, n)
    elif method is Method.WAVELET_ORACLE:
        kept, _ = select_oracle(tree, n)
    else:
        raise WaveletError(f"{method.value} is not a wavelet method")
    rec = record.with_samples(_inverse_array(kept))
    err = float(np.mean((rec.samples - record.samples) ** 2))
    return rec, CompressionResult(method, n / tree.size, err, record.id)
