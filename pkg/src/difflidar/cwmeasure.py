"""Continuous-wave phase-shift ranging of the URG-04LX class of scanners.

Every return event becomes a sinusoid at each modulation frequency whose
amplitude is its radiance and whose phase encodes the two-way travel time.
The summed waveform is sampled in equivalent time, its phase is extracted
with a one-bin discrete Fourier sum, the transmitted reference phase is
subtracted, and the two frequencies are combined to resolve the range.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import scalar as sc
from .geometry import Ray, Scene
from .raytrace import DEFAULT_HALF_ANGLE, BeamSpec, ReturnEvent, beam_directions, trace_batch
from .scalar import PoseSE2

C_LIGHT = 299_792_458.0
TWO_PI = 2.0 * np.pi


class NoReturnError(ValueError):
    """The sampled waveform carries no measurable signal."""


class InconsistentPhasesError(ValueError):
    """The two modulation frequencies disagree about the range."""


@dataclass(frozen=True)
class SensorModel:
    f1: float = 46.55e6
    f2: float = 53.2e6
    periods_observed: int = 15
    sample_count: int = 30
    ray_count: int = 682
    fov_deg: float = 240.0
    angular_resolution_deg: float = 0.352
    scan_rate_hz: float = 10.0
    beam_half_angle: float = DEFAULT_HALF_ANGLE
    beam_rays: int = 3
    r_min: float = 0.02
    r_max: float = 4.095
    diode: tuple = (0.0, 0.0, 0.0)
    height: float = 0.14
    noise_sigma: float = 0.0
    c_light: float = C_LIGHT
    sensor_id: str = "URG-04LX"

    def __post_init__(self):
        if not self.f2 > self.f1 > 0:
            raise ValueError("need f2 > f1 > 0")
        if abs(self.ray_count * self.angular_resolution_deg - self.fov_deg) > 2 * self.angular_resolution_deg:
            raise ValueError("ray_count * angular_resolution must match the field of view")
        if not 0 <= self.r_min < self.r_max < self.c_light / (2 * (self.f2 - self.f1)):
            raise ValueError("range gate must lie inside the combined unambiguous range")
        object.__setattr__(self, "diode", tuple(float(v) for v in self.diode))

    @property
    def beam(self) -> BeamSpec:
        return BeamSpec(self.beam_half_angle, self.beam_rays)

    def beam_angles(self) -> np.ndarray:
        """Beam yaw offsets relative to the sensor heading, radians."""
        k = np.arange(self.ray_count)
        return np.deg2rad(-self.fov_deg / 2.0 + k * self.angular_resolution_deg)

    def sample_interval(self, f: float) -> float:
        # 30 samples 31/60 of a period apart: span 15.5 periods, phases tile one period
        return (2 * self.periods_observed + 1) / (2 * self.sample_count) / f

    def with_diode(self, a, b, c) -> "SensorModel":
        return replace(self, diode=(a, b, c))


@dataclass
class Waveform:
    frequency: float
    amplitudes: object
    phases: object


@dataclass
class Scan:
    ranges: np.ndarray
    valid: np.ndarray
    pose: PoseSE2 = field(default_factory=PoseSE2)
    sensor_id: str = "URG-04LX"

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.ranges.shape != self.valid.shape:
            raise ValueError("ranges and validity flags must have equal length")

    def __len__(self):
        return len(self.ranges)

    def points(self, sensor: SensorModel) -> np.ndarray:
        """Valid returns as 2D points in the sensor frame."""
        ang = sensor.beam_angles()[self.valid]
        r = self.ranges[self.valid]
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


# -- waveform chain -------------------------------------------------------------


def phase_of_range(distance, f: float, c_light: float = C_LIGHT):
    """Phase lag accumulated over a two-way trip of one-way length ``distance``."""
    return 4.0 * np.pi * f * distance / c_light


def synthesize_received(events: Sequence[ReturnEvent], f: float, quadrature_offset: float = 0.0,
                        c_light: float = C_LIGHT) -> Waveform:
    if not events:
        raise NoReturnError("no return events to synthesize")
    amps = sc.stack([e.radiance for e in events])
    dist = sc.stack([e.path_distance for e in events])
    return Waveform(f, amps, phase_of_range(dist, f, c_light) + quadrature_offset)


def sample_times(sensor: SensorModel, f: float) -> np.ndarray:
    return np.arange(sensor.sample_count) * sensor.sample_interval(f)


def sample_waveform(w: Waveform, sensor: SensorModel, rng=None):
    """Samples ``s_i`` of the summed sinusoids at equivalent-time instants ``t_i``."""
    t = sample_times(sensor, w.frequency)
    arg = TWO_PI * w.frequency * t
    amps, phases = w.amplitudes, w.phases
    if np.ndim(sc.value(amps)) == 0:
        amps, phases = amps + np.zeros(1), phases + np.zeros(1)
    s = sc.dsum(amps[:, None] * np.sin(arg[None, :] + phases[:, None]), axis=0)
    if rng is not None and sensor.noise_sigma > 0:
        s = s + rng.normal(0.0, sensor.noise_sigma, size=t.shape)
    return s, t


def sample_phase_angles(times, period: float) -> np.ndarray:
    return TWO_PI * np.remainder(times, period) / period


def extract_phase(samples, times, period: float):
    """Phase of the fundamental from equivalent-time samples, in (-pi, pi]."""
    psi = sample_phase_angles(np.asarray(times, dtype=float), period)
    num = sc.dsum(samples * np.cos(psi), axis=-1)
    den = sc.dsum(samples * np.sin(psi), axis=-1)
    if np.any((np.abs(sc.value(num)) < 1e-12) & (np.abs(sc.value(den)) < 1e-12)):
        raise NoReturnError("no return")
    return np.arctan2(num, den)


def diode_correct(delta_phi, radiance_total, a, b, c):
    """Subtract the radiance-dependent phase bias a L^2 + b L + c."""
    return delta_phi - (a * radiance_total * radiance_total + b * radiance_total + c)


def phase_to_range(delta_phi, f: float, c_light: float = C_LIGHT):
    return c_light / (4.0 * np.pi * f) * delta_phi


def _resolve(phi1, phi2, sensor: SensorModel):
    beat = np.remainder(phi2 - phi1, TWO_PI)
    coarse = phase_to_range(beat, sensor.f2 - sensor.f1, sensor.c_light)
    unit = phase_to_range(TWO_PI, sensor.f1, sensor.c_light)
    base = phase_to_range(phi1, sensor.f1, sensor.c_light)
    k = np.maximum(np.rint(sc.value((coarse - base) / unit)), 0.0)
    refined = base + k * unit
    consistent = np.abs(sc.value(refined - coarse)) <= sensor.c_light / (4.0 * sensor.f1)
    return refined, consistent


def resolve_ambiguity(phi1, phi2, sensor: SensorModel = SensorModel()):
    """Range from the f1 phase, with the wrap count chosen by the beat phase.

    Phases are wrapped to [0, 2pi) with the quadrature offset removed.
    """
    refined, consistent = _resolve(phi1, phi2, sensor)
    if not np.all(consistent):
        raise InconsistentPhasesError("inconsistent phases")
    return refined


# -- scan simulation -----------------------------------------------------------


@dataclass
class BeamMeasurements:
    """Per-beam output of the measurement chain (ranges may carry derivatives)."""

    ranges: object
    valid: np.ndarray
    radiance: object
    touched: np.ndarray

    def to_scan(self, pose: PoseSE2, sensor: SensorModel) -> Scan:
        r = np.where(self.valid, sc.value(self.ranges), 0.0)
        return Scan(r, self.valid.copy(), pose.values(), sensor.sensor_id)

    def objects_seen(self) -> set:
        return set(np.unique(self.touched[:, 1]).tolist()) if len(self.touched) else set()


def _reference_phase(sensor: SensorModel, f: float, offset: float) -> float:
    w = Waveform(f, np.ones(1), np.full(1, offset))
    s, t = sample_waveform(w, sensor)
    return float(extract_phase(s, t, 1.0 / f))


def measure_returns(returns, n_beams: int, sensor: SensorModel, diode=None, rng=None) -> BeamMeasurements:
    """Waveform synthesis, sampling, phase extraction and range resolution for all beams."""
    a, b, c = sensor.diode if diode is None else diode
    beam = returns.beam
    has = np.bincount(beam, minlength=n_beams) > 0
    total = sc.segment_sum(returns.radiance, beam, n_beams) if len(beam) else np.zeros(n_beams)
    phis = []
    signal = np.ones(n_beams, dtype=bool)
    for f, offset in ((sensor.f1, 0.0), (sensor.f2, np.pi / 2.0)):
        t = sample_times(sensor, f)
        arg = TWO_PI * f * t
        if len(beam):
            ph = phase_of_range(returns.distance, f, sensor.c_light) + offset
            comp = returns.radiance[:, None] * np.sin(arg[None, :] + ph[:, None])
            s = sc.segment_sum(comp, beam, n_beams)
        else:
            s = np.zeros((n_beams, len(t)))
        if rng is not None and sensor.noise_sigma > 0:
            s = s + rng.normal(0.0, sensor.noise_sigma, size=np.shape(sc.value(s)))
        psi = sample_phase_angles(t, 1.0 / f)
        num = sc.dsum(s * np.cos(psi), axis=-1)
        den = sc.dsum(s * np.sin(psi), axis=-1)
        signal &= (np.abs(sc.value(num)) >= 1e-12) | (np.abs(sc.value(den)) >= 1e-12)
        phi = np.arctan2(num, den) - _reference_phase(sensor, f, offset)
        phi = np.remainder(phi, TWO_PI)
        phi = diode_correct(phi, total, a, b, c)
        phis.append(np.remainder(phi, TWO_PI))
    ranges, consistent = _resolve(phis[0], phis[1], sensor)
    rv = sc.value(ranges)
    valid = has & signal & consistent & (rv >= sensor.r_min) & (rv <= sensor.r_max)
    return BeamMeasurements(ranges, valid, total, returns.touched)


def beam_rays(pose: PoseSE2, sensor: SensorModel, angles=None):
    """Central ray origins and directions for the beams of a scan."""
    ang = sensor.beam_angles() if angles is None else np.asarray(angles, dtype=float)
    yaw = pose.yaw + ang
    zero = 0.0 * yaw
    dirs = sc.stack([np.cos(yaw), np.sin(yaw), zero], axis=-1)
    origin = sc.stack([pose.x + zero, pose.y + zero, zero + sensor.height], axis=-1)
    return origin, dirs


def simulate_beams(scene: Scene, pose: PoseSE2, sensor: SensorModel, angles=None,
                   diode=None, rng=None) -> BeamMeasurements:
    origin, dirs = beam_rays(pose, sensor, angles)
    n = len(sc.value(dirs))
    beam = sensor.beam
    sub = sc.normalize(beam_directions(dirs, beam.half_angle, beam.count))
    sub = sub.reshape((n * beam.count, 3))
    org = sc.concatenate([origin[:, None, :]] * beam.count, axis=1).reshape((n * beam.count, 3))
    ids = np.repeat(np.arange(n), beam.count)
    weights = np.tile(beam.weights, n)
    returns = trace_batch(scene, org, sub, ids, weights)
    return measure_returns(returns, n, sensor, diode, rng)


def measure_beam(scene: Scene, central: Ray, sensor: SensorModel = SensorModel()):
    """Range and validity of a single beam along ``central``."""
    origin = central.origin
    yaw = float(np.arctan2(central.direction[1], central.direction[0]))
    pose = PoseSE2(origin[0], origin[1], 0.0)
    sensor_at = replace(sensor, height=float(origin[2]))
    m = simulate_beams(scene, pose, sensor_at, angles=[yaw])
    return float(sc.value(m.ranges)[0]), bool(m.valid[0])


def simulate_scan(scene: Scene, pose: PoseSE2, sensor: SensorModel = SensorModel(), seed=None) -> Scan:
    rng = np.random.default_rng(seed) if seed is not None else None
    return simulate_beams(scene, pose.values(), sensor, rng=rng).to_scan(pose, sensor)
