"""Continuous-wave time-of-flight sensor model.

A C-ToF camera illuminates the scene with a sinusoidally modulated point
source and correlates the return against phase-shifted references. Four
phase-shifted exposures combine linearly into a complex-valued *phasor*
per pixel: its magnitude is the reflected light, its phase encodes the
round-trip path length. All functions here are pure and operate on
scalars or numpy arrays.

Conventions:
  * Phasors are numpy complex scalars/arrays.
  * Phase principal values live in [0, 2*pi).
  * Quad exposures are stacked on the last axis, ordered by reference
    phase offset (0, pi/2, pi, 3*pi/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s

# Reference phase offsets of the four exposures, in combination order.
QUAD_PHASE_OFFSETS = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)

# Below this phasor magnitude the derived phase (hence depth) is
# considered unreliable; the value is still returned, only flagged.
DEFAULT_AMPLITUDE_FLOOR = 1e-6


class CalibrationError(ValueError):
    """Raised when zero-phase calibration receives unusable input."""


@dataclass(frozen=True)
class ToFModel:
    """Parameters of a continuous-wave ToF sensor.

    mod_frequency: modulation frequency of the emitted signal [Hz].
    light_speed: propagation speed [m/s].
    zero_phase_offset: constant sensor phase bias [rad], recovered by
        :func:`estimate_zero_phase_offset` on real hardware.
    source_intensity: radiant intensity of the collocated source.
    """

    mod_frequency: float = 30e6
    light_speed: float = SPEED_OF_LIGHT
    zero_phase_offset: float = 0.0
    source_intensity: float = 1.0

    def __post_init__(self):
        if self.mod_frequency <= 0:
            raise ValueError(f"mod_frequency must be > 0, got {self.mod_frequency}")
        if self.light_speed <= 0:
            raise ValueError(f"light_speed must be > 0, got {self.light_speed}")

    @property
    def period(self) -> float:
        """Modulation period T = 1/f [s]."""
        return 1.0 / self.mod_frequency

    def unambiguous_range(self) -> float:
        """Depth interval c/(2f) beyond which phase wraps [m]."""
        return self.light_speed / (2.0 * self.mod_frequency)

    def depth_to_phase(self, depth):
        """Round-trip phase 4*pi*f*d/c + offset for a surface at ``depth``."""
        return 4.0 * np.pi * self.mod_frequency * np.asarray(depth) / self.light_speed \
            + self.zero_phase_offset


@dataclass(frozen=True)
class TemporalResponse:
    """Impulse-train approximation of a pixel's temporal response.

    Each impulse is (delay [s], energy >= 0); delays must be
    non-negative and strictly increasing.
    """

    delays: np.ndarray
    energies: np.ndarray

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=float)
        energies = np.asarray(self.energies, dtype=float)
        if delays.shape != energies.shape or delays.ndim != 1:
            raise ValueError("delays and energies must be equal-length 1-D arrays")
        if delays.size:
            if np.any(delays < 0):
                raise ValueError("delays must be non-negative")
            if np.any(np.diff(delays) <= 0):
                raise ValueError("delays must be strictly increasing")
            if np.any(energies < 0):
                raise ValueError("energies must be non-negative")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "energies", energies)

    @classmethod
    def from_pairs(cls, pairs) -> "TemporalResponse":
        if len(pairs) == 0:
            return cls(np.empty(0), np.empty(0))
        delays, energies = map(np.asarray, zip(*pairs))
        return cls(np.asarray(delays, float), np.asarray(energies, float))


def amplitude(p):
    """Magnitude of a phasor (array-safe)."""
    return np.abs(p)


def phase(p):
    """Principal phase of a phasor in [0, 2*pi)."""
    return np.mod(np.angle(p), 2.0 * np.pi)


def importance_weight(d, model: ToFModel):
    """Complex path-length weight exp(i*(2*pi*d*f/c + offset)) for a path of length ``d``.

    Unit amplitude by construction. ``d`` is the full (round-trip) path
    length in meters and must be non-negative.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("path length must be non-negative")
    theta = 2.0 * np.pi * d * model.mod_frequency / model.light_speed \
        + model.zero_phase_offset
    return np.exp(1j * theta)


def quad_exposures_from_impulses(delays, energies, model: ToFModel, n_periods: int):
    """Closed-form quad exposures for impulse-train responses.

    For impulses (delay_k, e_k) the exposure at reference offset phi is
        L_phi = N * sum_k e_k * (T/4) * cos(2*pi*f*delay_k + offset + phi)
    which is the sinusoidal-modulation correlation evaluated per impulse.
    ``delays``/``energies`` may carry any (broadcastable) leading shape
    with impulses on the last axis; returns that shape + (4,).
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    delays = np.asarray(delays, dtype=float)
    energies = np.asarray(energies, dtype=float)
    theta = (2.0 * np.pi * model.mod_frequency * delays
             + model.zero_phase_offset)[..., None] + np.asarray(QUAD_PHASE_OFFSETS)
    gain = n_periods * model.period / 4.0
    return gain * np.sum(energies[..., None] * np.cos(theta), axis=-2)


def simulate_quad_exposures(response: TemporalResponse, model: ToFModel,
                            n_periods: int = 1) -> np.ndarray:
    """Simulate the four phase-shifted exposures of one pixel.

    Returns a 1x1 quad image of shape (1, 1, 4). An empty response
    yields all-zero exposures.
    """
    if response.delays.size == 0:
        return np.zeros((1, 1, 4))
    quad = quad_exposures_from_impulses(response.delays, response.energies,
                                        model, n_periods)
    return quad.reshape(1, 1, 4)


def combine_quad(quad: np.ndarray) -> np.ndarray:
    """Combine quad exposures into a phasor image.

    quad: (..., 4) real array ordered (L_0, L_pi/2, L_pi, L_3pi/2).
    Returns complex (...) with value (L_0 - L_pi) - i*(L_pi/2 - L_3pi/2).
    """
    quad = np.asarray(quad)
    if quad.shape[-1] != 4:
        raise ValueError(f"quad image needs 4 channels on the last axis, got shape {quad.shape}")
    return (quad[..., 0] - quad[..., 2]) - 1j * (quad[..., 1] - quad[..., 3])


def quad_from_phasor(p, dc: float = 0.0) -> np.ndarray:
    """Synthesize quad exposures whose combination reproduces phasor ``p``.

    The split is the minimal non-negative one plus an optional common dc
    level; combine_quad(quad_from_phasor(p)) == p exactly. Useful for
    building sensor-format data from rendered phasor images.
    """
    p = np.asarray(p, dtype=complex)
    re, im = p.real, p.imag
    quad = np.stack([np.maximum(re, 0.0), np.maximum(-im, 0.0),
                     np.maximum(-re, 0.0), np.maximum(im, 0.0)], axis=-1)
    return quad + dc


def phasor_to_depth(p, model: ToFModel,
                    amplitude_floor: float = DEFAULT_AMPLITUDE_FLOOR):
    """Derive (amplitude, depth, reliable) from a phasor under the single-path assumption.

    depth = ((phase - offset) mod 2*pi) * c / (4*pi*f), in [0, c/2f).
    Pixels with amplitude at or below ``amplitude_floor`` keep their
    numeric depth but are flagged unreliable.
    """
    p = np.asarray(p, dtype=complex)
    amp = np.abs(p)
    rel_phase = np.mod(np.angle(p) - model.zero_phase_offset, 2.0 * np.pi)
    depth = rel_phase * model.light_speed / (4.0 * np.pi * model.mod_frequency)
    reliable = amp > amplitude_floor
    return amp, depth, reliable


def unwrap_depth(depth, model: ToFModel, threshold: float):
    """Single-threshold manual unwrap: depths below ``threshold`` gain one range period."""
    depth = np.asarray(depth, dtype=float)
    r = model.unambiguous_range()
    if not (0 <= threshold < r):
        raise ValueError(f"threshold must lie in [0, {r}), got {threshold}")
    return np.where(depth < threshold, depth + r, depth)


def estimate_zero_phase_offset(measured_phases, true_depths, model: ToFModel) -> float:
    """Recover the constant sensor phase bias from a calibration target.

    Circular mean of (measured_phase - 4*pi*f*d/c) over the samples,
    returned in [0, 2*pi).
    """
    phases = np.asarray(measured_phases, dtype=float)
    depths = np.asarray(true_depths, dtype=float)
    if phases.size == 0 or phases.shape != depths.shape:
        raise CalibrationError("need equal-length, non-empty phase/depth samples")
    expected = 4.0 * np.pi * model.mod_frequency * depths / model.light_speed
    residual = phases - expected
    mean_vec = np.mean(np.exp(1j * residual))
    if np.abs(mean_vec) < 1e-12:
        raise CalibrationError("phase residuals cancel; offset is undetermined")
    return float(np.mod(np.angle(mean_vec), 2.0 * np.pi))
