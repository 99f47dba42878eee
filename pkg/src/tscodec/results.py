"""Benchmark result rows and the reference numbers they are compared with."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Method(str, enum.Enum):
    VAE = "VAE"
    WAVELET_GLOBAL = "WaveletGlobal"
    WAVELET_ORACLE = "WaveletOracle"
    FPCA = "FPCA"

    @classmethod
    def parse(cls, text: str) -> "Method":
        aliases = {
            "vae": cls.VAE,
            "global": cls.WAVELET_GLOBAL,
            "waveletglobal": cls.WAVELET_GLOBAL,
            "oracle": cls.WAVELET_ORACLE,
            "waveletoracle": cls.WAVELET_ORACLE,
            "fpca": cls.FPCA,
        }
        try:
            return aliases[text.strip().lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown method {text!r}; choose from vae, global, oracle, fpca") from None


class Regime(str, enum.Enum):
    CLEAN_CLEAN = "CleanTrainCleanTest"
    CLEAN_NOISY = "CleanTrainNoisyTest"
    NOISY_NOISY = "NoisyTrainNoisyTest"


@dataclass(frozen=True)
class CompressionResult:
    method: Method
    kept_fraction: float
    mse: float
    dataset_id: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.mse) and self.mse >= 0):
            raise ValueError(f"mse must be finite and non-negative, got {self.mse}")
        if not (0 < self.kept_fraction <= 1):
            raise ValueError(f"kept_fraction must be in (0, 1], got {self.kept_fraction}")


@dataclass(frozen=True)
class NoiseExperimentResult:
    regime: Regime
    kept_fraction: float
    mse: float
    dataset_id: str = ""
    train_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.mse >= 0:
            raise ValueError(f"mse must be non-negative, got {self.mse}")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with Anomaly as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rates(self) -> dict[str, tuple[float, float]]:
        """Row percentages keyed by true class: ``(predicted Anomaly %, predicted Normal %)``."""
        pos, neg = self.tp + self.fn, self.fp + self.tn
        nan = float("nan")
        return {
            "Anomaly": (100.0 * self.tp / pos, 100.0 * self.fn / pos) if pos else (nan, nan),
            "Normal": (100.0 * self.fp / neg, 100.0 * self.tn / neg) if neg else (nan, nan),
        }

    @property
    def balanced_accuracy(self) -> float:
        recalls = []
        if self.tp + self.fn:
            recalls.append(self.tp / (self.tp + self.fn))
        if self.tn + self.fp:
            recalls.append(self.tn / (self.tn + self.fp))
        return sum(recalls) / len(recalls) if recalls else float("nan")


# Mean squared errors at 0.5 / 2 / 33 percent of kept coefficients, 12-lead data.
REFERENCE_TABLE = {
    "PTB": {
        Method.VAE: (0.02201, 0.00723, 0.00487),
        Method.WAVELET_GLOBAL: (0.05074, 0.03815, 0.00603),
        Method.WAVELET_ORACLE: (0.03624, 0.02002, 0.00008),
    },
    "Georgia": {
        Method.VAE: (0.01759, 0.00723, 0.00531),
        Method.WAVELET_GLOBAL: (0.04057, 0.03220, 0.00576),
        Method.WAVELET_ORACLE: (0.02871, 0.01612, 0.00008),
    },
    "China": {
        Method.VAE: (0.03632, 0.01972, 0.01424),
        Method.WAVELET_GLOBAL: (0.06356, 0.05313, 0.00710),
        Method.WAVELET_ORACLE: (0.04053, 0.02175, 0.00009),
    },
}
REFERENCE_FRACTIONS = (0.005, 0.02, 0.33)

# Row-normalised anomaly-detection confusion matrices (percent), rows = true class.
REFERENCE_CONFUSION = {
    "VAE": {"Anomaly": (69.0, 31.0), "Normal": (31.0, 69.0)},
    "WaveletGlobal": {"Anomaly": (55.0, 45.0), "Normal": (45.0, 55.0)},
}
