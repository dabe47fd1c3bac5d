"""Synthetic 16-sensor annular pressure records with known dynamical mode.

The acoustic field around the annulus is a pair of counter-rotating azimuthal
waves::

    p(theta, t) = A+ cos(n theta - 2 pi f0 t) + A- cos(n theta + 2 pi f0 t)

Equal amplitudes give a standing wave, ``A- = 0`` a spinning one. Each mode
adds its own time structure on top:

* Mode I   low-amplitude standing wave whose envelope breathes slowly, so
           successive windows differ along one direction only. The breathing
           profile spends most of its time near the nominal amplitude with
           rarer, larger excursions (a Laplace-shaped amplitude histogram).
* Mode II  large standing wave plus a second tone at ``f0 + f_mod`` and
           strong broadband noise. Windows scatter in every direction
           rather than along a line or between two poles.
* Mode III standing wave that flips its nodal-line orientation by
           ``pi / (2n)`` with exponentially distributed dwell times
           (telegraph switching between two attractors).

The default ``f0 = 400 Hz`` makes both the desk-scale (stride 25 @ 5 kHz) and
the full-scale (stride 100 @ 20 kHz) window strides span two whole periods, so
Mode I and Mode III windows are phase-locked. Mode II runs at ``MODE_II_F0``
with its second tone at 800 Hz, so both tones are locked to the stride too
and the encoder cannot confuse the Mode II carrier with the Mode I one.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, InputError
from .records import ModeLabel, OperatingPoint, PressureRecord

PAPER_FLOW_RATES = (1600.0, 2240.0, 2560.0, 2880.0)
PHI_MIN, PHI_MAX = 0.65, 0.95

# 23 operating points over the four flow rates
PAPER_GRID_PHI = {
    1600.0: (0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95),
    2240.0: (0.65, 0.70, 0.75, 0.80, 0.85, 0.90),
    2560.0: (0.70, 0.80, 0.85, 0.90, 0.95),
    2880.0: (0.70, 0.80, 0.85, 0.90, 0.95),
}

DEFAULT_F0 = 400.0
MODE_II_F0 = 600.0
MODE_II_F_MOD = 200.0
MODE_I_PHI_MAX = 0.70
HIGH_PHI = 0.90
MODE_III_MIN_Q = 2560.0
MODE_II_CENTER = 0.80
# antinode half-way between sensors, so no channel sits on a nodal line
DEFAULT_ORIENTATION = np.pi / 8
# the breathing profile's quantile range is clipped to [q, 1 - q]
BREATHING_CLIP = 0.02
BREATHING_PEAK = float(np.log(0.5 / BREATHING_CLIP) / np.sqrt(2.0))


@dataclass(frozen=True)
class SensorArray:
    """Eight azimuthal positions at each of two longitudinal stations.

    Channels are ordered station-major: ``ch00..ch07`` are station 1 at
    angles ``2 pi k / 8``, ``ch08..ch15`` station 2 at the same angles.
    """

    n_azimuthal: int = 8
    n_stations: int = 2

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_azimuthal) / self.n_azimuthal

    @property
    def n_channels(self) -> int:
        return self.n_azimuthal * self.n_stations

    @property
    def channel_angles(self) -> np.ndarray:
        return np.tile(self.angles, self.n_stations)

    @property
    def channel_station(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_stations), self.n_azimuthal)


@dataclass(frozen=True)
class RegimeSpec:
    regime: ModeLabel
    A_plus: float
    A_minus: float
    n: int = 1
    f0: float = DEFAULT_F0
    f_mod: float = 0.0
    mod_depth: float = 0.0
    dwell_mean: float | None = None
    noise_sigma: float = 0.0
    longitudinal_gain: float = 0.8
    envelope_depth: float = 0.0
    envelope_period: float = 0.2
    orientation_offset: float = 0.0

    def __post_init__(self):
        if self.A_plus < 0 or self.A_minus < 0:
            raise ConfigError("wave amplitudes must be >= 0")
        if not self.f0 > 0:
            raise ConfigError("f0 must be > 0")
        if self.n < 1:
            raise ConfigError("azimuthal wavenumber must be >= 1")
        if self.regime == ModeLabel.MODE_III and not (self.dwell_mean and self.dwell_mean > 0):
            raise ConfigError("Mode III regimes need dwell_mean > 0")
        if self.noise_sigma < 0 or self.envelope_depth < 0 or self.mod_depth < 0 or self.f_mod < 0:
            raise ConfigError("noise, envelope depth, modulation depth and f_mod must be >= 0")
        if self.envelope_depth > 0 and not self.envelope_period > 0:
            raise ConfigError("envelope_period must be > 0")
        if self.envelope_depth * BREATHING_PEAK >= 1.0:
            raise ConfigError(f"envelope_depth must be < {1.0 / BREATHING_PEAK:.3f} to keep the envelope positive")

    @property
    def max_frequency(self) -> float:
        return self.f0 + (self.f_mod if self.mod_depth > 0 else 0.0)


@dataclass
class FieldState:
    """Switching orientation (0/1) and envelope factor; both may be per-sample arrays."""

    orientation: np.ndarray | int = 0
    envelope: np.ndarray | float = 1.0


def pressure_field(spec: RegimeSpec, array: SensorArray, t, state: FieldState | None = None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Sensor pressures at time(s) ``t``; shape ``(16,)`` for scalar ``t`` else ``(N, 16)``.

    Noise is added only when ``rng`` is given.
    """
    state = state or FieldState()
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InputError("time must be >= 0")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)[:, None]
    orientation = np.broadcast_to(np.asarray(state.orientation, dtype=np.float64), t.shape[:1])[:, None]
    envelope = np.broadcast_to(np.asarray(state.envelope, dtype=np.float64), t.shape[:1])[:, None]

    theta = array.channel_angles[None, :] - spec.orientation_offset - orientation * (np.pi / (2 * spec.n))
    phase = spec.n * theta
    w0 = 2.0 * np.pi * spec.f0
    p = spec.A_plus * np.cos(phase - w0 * t) + spec.A_minus * np.cos(phase + w0 * t)
    if spec.mod_depth > 0:
        w1 = 2.0 * np.pi * (spec.f0 + spec.f_mod)
        p = p + spec.mod_depth * (spec.A_plus * np.cos(phase - w1 * t) + spec.A_minus * np.cos(phase + w1 * t))
    gain = np.where(array.channel_station == 0, 1.0, spec.longitudinal_gain)
    p = envelope * p * gain[None, :]
    if rng is not None and spec.noise_sigma > 0:
        p = p + rng.normal(0.0, spec.noise_sigma, size=p.shape)
    return p[0] if scalar else p


def mode_ii_half_width(Q: float) -> float:
    """Half-width of the Mode II phi band, shrinking linearly from 0.10 to 0.05 over the Q range."""
    lo, hi = PAPER_FLOW_RATES[0], PAPER_FLOW_RATES[-1]
    return 0.10 - 0.05 * (Q - lo) / (hi - lo)


def regime_label(op: OperatingPoint) -> ModeLabel:
    Q, phi = op.Q, op.phi
    if not (PAPER_FLOW_RATES[0] - 1e-9 <= Q <= PAPER_FLOW_RATES[-1] + 1e-9):
        raise InputError(f"Q={Q} outside the grid range {PAPER_FLOW_RATES[0]}..{PAPER_FLOW_RATES[-1]} SLM")
    if not (PHI_MIN - 1e-9 <= phi <= PHI_MAX + 1e-9):
        raise InputError(f"phi={phi} outside [{PHI_MIN}, {PHI_MAX}]")
    if phi <= MODE_I_PHI_MAX + 1e-9:
        return ModeLabel.MODE_I
    if phi >= HIGH_PHI - 1e-9:
        return ModeLabel.MODE_III if Q >= MODE_III_MIN_Q else ModeLabel.MODE_I
    if abs(phi - MODE_II_CENTER) < mode_ii_half_width(Q) - 1e-9:
        return ModeLabel.MODE_II
    return ModeLabel.MODE_I


def regime_for(op: OperatingPoint) -> RegimeSpec:
    """Synthetic regime recipe for an operating point."""
    label = regime_label(op)
    # mild flow-rate dependence so cases of one mode are not identical
    q_scale = 0.85 + 0.3 * (op.Q - PAPER_FLOW_RATES[0]) / (PAPER_FLOW_RATES[-1] - PAPER_FLOW_RATES[0])
    # Amplitudes and noise levels keep every regime in the encoder's
    # near-linear range after per-channel scaling.
    if label == ModeLabel.MODE_I:
        a = 0.12 * q_scale
        return RegimeSpec(label, A_plus=a, A_minus=a, noise_sigma=0.01 * a, envelope_depth=0.25,
                          envelope_period=0.2, orientation_offset=DEFAULT_ORIENTATION)
    if label == ModeLabel.MODE_II:
        a = 0.15 * q_scale
        return RegimeSpec(label, A_plus=a, A_minus=a, f0=MODE_II_F0, f_mod=MODE_II_F_MOD, mod_depth=0.6,
                          noise_sigma=0.3 * a, orientation_offset=DEFAULT_ORIENTATION)
    # a small telegraph amplitude keeps windows that straddle a switch near
    # the segment between the two states
    a = 0.045 * q_scale
    return RegimeSpec(label, A_plus=a, A_minus=a, dwell_mean=0.04, noise_sigma=0.05 * a,
                      orientation_offset=DEFAULT_ORIENTATION)


def case_id_for(op: OperatingPoint) -> str:
    return f"Q{op.Q:g}_phi{op.phi:.3f}"


def case_rng(seed: int, case_id: str) -> np.random.Generator:
    """Independent stream per case, derived from the master seed and the case id."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(case_id.encode("utf-8"))]))


def telegraph_switch_times(duration: float, dwell_mean: float, rng: np.random.Generator) -> np.ndarray:
    """Switch instants in ``[0, duration)`` with i.i.d. exponential dwell times."""
    times = []
    t = rng.exponential(dwell_mean)
    while t < duration:
        times.append(t)
        t += rng.exponential(dwell_mean)
    return np.asarray(times)


def breathing_envelope(t, depth: float, period: float, phase: float = 0.0) -> np.ndarray:
    """Slow amplitude breathing ``1 + depth * x(t)``.

    ``x`` is a triangle wave pushed through the quantile function of a
    unit-variance Laplace law, clipped to the central ``1 - 2 * BREATHING_CLIP``
    of probability. Over whole periods its values follow that truncated Laplace
    law (standard deviation about 0.81). ``phase`` is a fraction of a period.
    """
    u = (np.asarray(t, dtype=np.float64) / period + phase) % 1.0
    tri = 1.0 - np.abs(2.0 * u - 1.0)
    q = BREATHING_CLIP + (1.0 - 2.0 * BREATHING_CLIP) * tri
    x = -np.sign(q - 0.5) * np.log(1.0 - 2.0 * np.abs(q - 0.5)) / np.sqrt(2.0)
    return 1.0 + depth * x


def generate_case(op: OperatingPoint, duration: float = 0.2, sample_rate: float = 5000.0, seed: int = 0,
                  case_id: str | None = None, spec: RegimeSpec | None = None,
                  array: SensorArray | None = None) -> PressureRecord:
    """Sample one labelled record; identical arguments give bit-identical output."""
    if not duration > 0:
        raise ConfigError(f"duration must be > 0, got {duration}")
    spec = spec or regime_for(op)
    array = array or SensorArray()
    if not sample_rate > 2.0 * spec.max_frequency:
        raise ConfigError(
            f"sample rate {sample_rate} Hz violates Nyquist for content up to {spec.max_frequency:.1f} Hz"
        )
    case_id = case_id or case_id_for(op)
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ConfigError("duration x sample_rate rounds to zero samples")
    t = np.arange(n) / sample_rate
    rng = case_rng(seed, case_id)

    orientation = np.zeros(n, dtype=np.int64)
    n_switches = 0
    if spec.regime == ModeLabel.MODE_III:
        start = int(rng.integers(2))
        switches = telegraph_switch_times(duration, spec.dwell_mean, rng)
        n_switches = len(switches)
        orientation = (start + np.searchsorted(switches, t, side="right")) % 2
    envelope = 1.0
    if spec.envelope_depth > 0:
        envelope = breathing_envelope(t, spec.envelope_depth, spec.envelope_period, rng.uniform())
    samples = pressure_field(spec, array, t, FieldState(orientation, envelope), rng)
    return PressureRecord(samples, float(sample_rate), op, spec.regime, case_id,
                          metadata={"n_switches": n_switches})


def paper_grid() -> list[OperatingPoint]:
    return [OperatingPoint(Q, phi) for Q, phis in PAPER_GRID_PHI.items() for phi in phis]


def generate_grid(points: list[OperatingPoint] | None = None, duration: float = 0.2, sample_rate: float = 5000.0,
                  seed: int = 0) -> list[PressureRecord]:
    points = paper_grid() if points is None else points
    return [generate_case(op, duration, sample_rate, seed) for op in points]


__all__ = [
    "PAPER_FLOW_RATES", "PAPER_GRID_PHI", "SensorArray", "RegimeSpec", "FieldState", "pressure_field",
    "regime_label", "regime_for", "generate_case", "generate_grid", "paper_grid", "telegraph_switch_times",
    "breathing_envelope", "case_id_for", "case_rng",
]
