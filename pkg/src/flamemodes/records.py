"""Shared domain records: operating points, mode labels and pressure records."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .exceptions import InputError

N_CHANNELS = 16


class ModeLabel(IntEnum):
    """Dynamical mode of a case; the integer values double as file codes."""

    MODE_I = 1
    MODE_II = 2
    MODE_III = 3

    def __str__(self) -> str:
        return ("I", "II", "III")[self.value - 1]

    @classmethod
    def parse(cls, value) -> "ModeLabel":
        if isinstance(value, ModeLabel):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip().upper()
        for prefix in ("MODE_", "MODE", "MODE "):
            if text.startswith(prefix):
                text = text[len(prefix):].strip()
        lookup = {"I": cls.MODE_I, "II": cls.MODE_II, "III": cls.MODE_III, "1": cls.MODE_I,
                  "2": cls.MODE_II, "3": cls.MODE_III}
        if text not in lookup:
            raise InputError(f"unrecognised mode label {value!r}")
        return lookup[text]


@dataclass(frozen=True)
class OperatingPoint:
    """Premixed flow rate ``Q`` (SLM) and equivalence ratio ``phi``."""

    Q: float
    phi: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.Q, self.phi)


@dataclass
class PressureRecord:
    samples: np.ndarray
    sample_rate: float
    operating_point: OperatingPoint | None = None
    label: ModeLabel | None = None
    case_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != N_CHANNELS:
            raise InputError(f"pressure record must be N x {N_CHANNELS}, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError(f"pressure record {self.case_id!r} contains non-finite samples")
        if not self.sample_rate > 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")
        if self.label is not None:
            self.label = ModeLabel.parse(self.label)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate
