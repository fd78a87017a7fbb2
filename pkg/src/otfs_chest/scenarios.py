"""Channel generators: the aircraft Rician model and small demo channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ChannelState, FrameParams


@dataclass(frozen=True)
class AircraftScenarioConfig:
    """Rician multipath with a LOS path at the maximum Doppler shift.

    ``normalization="per-draw"`` rescales the NLOS gains of each draw so the
    total power is exactly one; ``"expectation"`` leaves them as drawn.
    """

    P: int = 5
    K_dB: float = 15.0
    tau_max: float = 7e-6
    tau_slope: float = 1e-6
    nu_max: float = 1700.0
    normalization: str = "per-draw"

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.tau_max < 0 or self.nu_max < 0:
            raise ValueError("tau_max and nu_max must be non-negative")
        if not self.tau_slope > 0:
            raise ValueError("tau_slope must be positive")
        if self.normalization not in ("per-draw", "expectation"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def K(self) -> float:
        return 10.0 ** (self.K_dB / 10.0)


def _open_uniform(rng: np.random.Generator, high: float, size: int) -> np.ndarray:
    """Uniform draws on ``(0, high]``."""
    return high * (1.0 - rng.random(size))


def aircraft_channel(config: AircraftScenarioConfig, rng: np.random.Generator | int | None = None) -> ChannelState:
    """One channel draw.

    Path 1 is the LOS path (``tau = 0``, ``nu = nu_max``) with power
    ``K / (K + 1)``. The other paths have uniform delays, Doppler
    ``nu_max cos(theta)`` for a uniform angle, and Rayleigh gains whose mean
    power decays as ``exp(-tau / tau_slope)`` and sums to ``1 / (K + 1)``.
    """
    rng = np.random.default_rng(rng)
    P, K = config.P, config.K
    h = np.empty(P, dtype=complex)
    tau = np.zeros(P)
    nu = np.empty(P)
    los_power = K / (K + 1) if P > 1 else 1.0
    h[0] = math.sqrt(los_power) * np.exp(2j * np.pi * rng.random())
    nu[0] = config.nu_max
    if P > 1:
        tau[1:] = _open_uniform(rng, config.tau_max, P - 1)
        theta = _open_uniform(rng, 2 * np.pi, P - 1)
        nu[1:] = config.nu_max * np.cos(theta)
        # relative to the earliest path so tiny slopes cannot underflow every weight
        w = np.exp(-(tau[1:] - tau[1:].min()) / config.tau_slope)
        var = w / w.sum() / (K + 1)
        g = (rng.standard_normal(P - 1) + 1j * rng.standard_normal(P - 1)) * np.sqrt(var / 2)
        if config.normalization == "per-draw":
            g *= math.sqrt((1.0 - los_power) / float(np.sum(np.abs(g) ** 2)))
        h[1:] = g
    return ChannelState.from_arrays(h, tau, nu, normalized=config.normalization == "per-draw")


def aircraft_frame(M: int = 64, N: int = 32, delta_f: float = 30e3, config: AircraftScenarioConfig | None = None, E_p: float = 1.0) -> FrameParams:
    """Frame parameters matching an aircraft scenario."""
    config = config or AircraftScenarioConfig()
    return FrameParams(M=M, N=N, delta_f=delta_f, E_p=E_p, tau_max=config.tau_max, nu_max=config.nu_max)


DEMO_DELTA_F = 30e3


def two_path_demo(resolution: str = "coarse") -> tuple[FrameParams, ChannelState]:
    """Two equal-power paths that merge on a 16 x 16 frame but separate on 64 x 64.

    Both frames share the subcarrier spacing, so the physical delays and
    Doppler shifts are the same; the paths sit 0.8 coarse bins apart in
    each dimension, which is 3.2 fine bins.
    """
    sizes = {"coarse": 16, "fine": 64}
    if resolution not in sizes:
        raise ValueError(f"resolution must be one of {sorted(sizes)}")
    MN = sizes[resolution]
    T = 1.0 / DEMO_DELTA_F
    tau_bin, nu_bin = T / 16, DEMO_DELTA_F / 16
    tau = np.array([1.1, 1.9]) * tau_bin
    nu = np.array([1.1, 1.9]) * nu_bin
    h = np.array([1.0, np.exp(1j * np.pi / 3)]) / math.sqrt(2)
    params = FrameParams(M=MN, N=MN, delta_f=DEMO_DELTA_F, tau_max=3 * tau_bin, nu_max=3 * nu_bin)
    return params, ChannelState.from_arrays(h, tau, nu, normalized=True)


def single_path_demo(tau_bins: float = 1.3, nu_bins: float = 1.4, M: int = 64, N: int = 32) -> tuple[FrameParams, ChannelState]:
    """One fractional path, given in delay and Doppler bins."""
    params = FrameParams(
        M=M, N=N, delta_f=DEMO_DELTA_F,
        tau_max=max(tau_bins, 1.0) / (M * DEMO_DELTA_F),
        nu_max=max(abs(nu_bins), 1.0) * DEMO_DELTA_F / N,
    )
    ch = ChannelState.from_arrays([1.0], [tau_bins * params.delay_resolution], [nu_bins * params.doppler_resolution], normalized=True)
    return params, ch


DEMOS = {
    "two-path-coarse": lambda: two_path_demo("coarse"),
    "two-path-fine": lambda: two_path_demo("fine"),
    "single-path": single_path_demo,
}
