"""Synthetic anchor trajectories for desk-scale training.

A real video is one shared low-frequency head motion (a few random-phase
sinusoids per axis) seen by all seven regions through a small per-region
gain and offset, with independent measurement noise on every row. A fake
video is the same base trajectory (same seed, same draws) plus two
artifacts drawn from a separate stream:

* burrs: Poisson-timed 1-2 frame position spikes displacing one region
  (both axes, independent signed amplitudes),
* desync: a slow Ornstein-Uhlenbeck drift per region and axis that breaks
  the regions' relative positions.

With ``burr_rate=0`` and ``desync_std=0`` a fake is bit-identical to the
real video of the same seed.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import InputError
from .geom import ROI_NAMES
from .rng import Xoshiro256, derive_seed
from .traj import FAKE, N_FEATURES, REAL, AnchorSeries, SampleSet, window_samples

_ARTIFACT_STREAM = 0xFA4E


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    T: int = 300
    fps: float = 25.0
    n_harmonics: int = 3
    base_freq: tuple = (0.2, 1.5)  # Hz
    motion_amp: tuple = (0.004, 0.012)  # per harmonic, face-size units
    noise_std: float = 0.002
    burr_rate: float = 1.5  # events per second
    burr_amp: tuple = (0.01, 0.05)
    desync_std: float = 0.005
    desync_tau: float = 1.0  # seconds
    roi_gain_std: float = 0.05
    roi_offset_std: float = 0.01

    def __post_init__(self):
        if self.T < 1 or self.fps <= 0 or self.n_harmonics < 1:
            raise InputError("T, fps and n_harmonics must be positive")
        scalars = (self.noise_std, self.burr_rate, self.desync_std, self.desync_tau,
                   self.roi_gain_std, self.roi_offset_std)
        if min(scalars) < 0 or min(self.base_freq + self.motion_amp + self.burr_amp) < 0:
            raise InputError("synthetic generator parameters must be non-negative")

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=seed)


def _base(cfg: SynthConfig) -> np.ndarray:
    rng = Xoshiro256(cfg.seed)
    t = np.arange(cfg.T) / cfg.fps
    motion = np.zeros((2, cfg.T))
    for axis in range(2):
        for _ in range(cfg.n_harmonics):
            f = rng.uniform(*cfg.base_freq)
            amp = rng.uniform(*cfg.motion_amp)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            motion[axis] += amp * np.sin(2.0 * math.pi * f * t + phase)
    values = np.empty((N_FEATURES, cfg.T))
    for r in range(len(ROI_NAMES)):
        gain = 1.0 + cfg.roi_gain_std * rng.normal()
        for axis in range(2):
            offset = cfg.roi_offset_std * rng.normal()
            row = gain * motion[axis] + offset
            values[4 * r + axis] = row  # mean
            values[4 * r + 2 + axis] = row  # median
    values += cfg.noise_std * rng.normal(size=(N_FEATURES, cfg.T))
    return values


def _ou(rng, n, std, rho):
    eps = rng.normal(size=n)
    d0 = std * eps[0]
    if n == 1:
        return np.array([d0])
    c = std * math.sqrt(1.0 - rho * rho)
    rest = signal.lfilter([c], [1.0, -rho], eps[1:], zi=[rho * d0])[0]
    return np.concatenate([[d0], rest])


def burr_events(cfg: SynthConfig):
    """List of ``(frame, duration, roi, (amp_x, amp_y))`` burrs for ``cfg``."""
    rng = Xoshiro256(derive_seed(cfg.seed, _ARTIFACT_STREAM, 1))
    events = []
    if cfg.burr_rate <= 0:
        return events
    mean_gap = cfg.fps / cfg.burr_rate  # frames
    t = rng.exponential(mean_gap)
    while t < cfg.T:
        frame = int(t)
        dur = 1 + rng.integers(0, 2)
        roi = rng.integers(0, len(ROI_NAMES))
        amp = rng.uniform(*cfg.burr_amp, size=2) * rng.choice_sign(2)
        events.append((frame, dur, roi, (float(amp[0]), float(amp[1]))))
        t += rng.exponential(mean_gap)
    return events


def _artifacts(cfg: SynthConfig) -> np.ndarray:
    extra = np.zeros((N_FEATURES, cfg.T))
    if cfg.desync_std > 0:
        rng = Xoshiro256(derive_seed(cfg.seed, _ARTIFACT_STREAM, 2))
        rho = math.exp(-1.0 / (cfg.desync_tau * cfg.fps)) if cfg.desync_tau > 0 else 0.0
        for r in range(len(ROI_NAMES)):
            for axis in range(2):
                d = _ou(rng, cfg.T, cfg.desync_std, rho)
                extra[4 * r + axis] += d
                extra[4 * r + 2 + axis] += d
    for frame, dur, roi, amp in burr_events(cfg):
        sl = slice(frame, min(frame + dur, cfg.T))
        for axis in range(2):
            extra[4 * roi + axis, sl] += amp[axis]
            extra[4 * roi + 2 + axis, sl] += amp[axis]
    return extra


def gen_real(cfg: SynthConfig, video_id=None) -> AnchorSeries:
    vid = f"real-{cfg.seed}" if video_id is None else video_id
    return AnchorSeries(_base(cfg), cfg.fps, vid, 0, REAL)


def gen_fake(cfg: SynthConfig, video_id=None) -> AnchorSeries:
    vid = f"fake-{cfg.seed}" if video_id is None else video_id
    return AnchorSeries(_base(cfg) + _artifacts(cfg), cfg.fps, vid, 0, FAKE)


def generate(profile, cfg: SynthConfig, video_id=None) -> AnchorSeries:
    if profile == "real":
        return gen_real(cfg, video_id)
    if profile == "fake":
        return gen_fake(cfg, video_id)
    raise InputError(f"unknown profile {profile!r} (expected 'real' or 'fake')")


def video_seed(seed, profile, index):
    return derive_seed(seed, 0 if profile == "real" else 1, index)


def make_videos(n_videos, seed, profile, base: SynthConfig | None = None):
    """``n_videos`` series of one profile; video ``i`` gets its own derived seed."""
    base = base or SynthConfig()
    return [generate(profile, base.with_seed(video_seed(seed, profile, i)), f"{profile}-{seed}-{i:05d}")
            for i in range(n_videos)]


def make_dataset(n_real, n_fake, seed, base: SynthConfig | None = None) -> SampleSet:
    """Windowed, normalized samples from ``n_real`` real and ``n_fake`` fake videos."""
    samples = []
    for profile, n in (("real", n_real), ("fake", n_fake)):
        for series in make_videos(n, seed, profile, base):
            samples.extend(window_samples(series))
    return SampleSet.from_samples(samples)
