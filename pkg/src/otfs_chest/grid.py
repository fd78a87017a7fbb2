"""OTFS numerology, delay-Doppler index conventions and refined hypothesis grids.

Frames are stored column-wise: the DD sample ``x[l, k]`` (delay index ``l``,
Doppler index ``k``) sits at flat position ``k * M + l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

# slack for ceil() of products that are integers up to rounding
_CEIL_SLACK = 1e-9


def _ceil(x: float) -> int:
    return math.ceil(x - _CEIL_SLACK)


@dataclass(frozen=True)
class FrameParams:
    """OTFS frame numerology.

    Parameters
    ----------
    M, N : int
        Number of delay and Doppler bins.
    delta_f : float
        Subcarrier spacing in Hz. The symbol duration is ``T = 1 / delta_f``.
    E_p : float
        Energy of the transmitted time-domain pilot signal.
    l_p, k_p : int, optional
        Pilot DDRE. Defaults to the frame centre ``(M // 2, N // 2)``.
    tau_max : float
        Maximum path delay in seconds, ``0 <= tau_max < T``.
    nu_max : float
        Maximum absolute Doppler shift in Hz.
    """

    M: int
    N: int
    delta_f: float = 1.0
    E_p: float = 1.0
    l_p: int | None = None
    k_p: int | None = None
    tau_max: float = 0.0
    nu_max: float = 0.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        if not self.delta_f > 0:
            raise ValueError("delta_f must be positive")
        if not self.E_p > 0:
            raise ValueError("E_p must be positive")
        if self.l_p is None:
            object.__setattr__(self, "l_p", self.M // 2)
        if self.k_p is None:
            object.__setattr__(self, "k_p", self.N // 2)
        if not 0 <= self.l_p < self.M:
            raise ValueError(f"l_p={self.l_p} outside [0, {self.M})")
        if not 0 <= self.k_p < self.N:
            raise ValueError(f"k_p={self.k_p} outside [0, {self.N})")
        if not 0 <= self.tau_max < self.T:
            raise ValueError(f"tau_max must lie in [0, T={self.T}), got {self.tau_max}")
        if self.nu_max < 0:
            raise ValueError("nu_max must be non-negative")
        if self.M_tau > self.M:
            raise ValueError(f"delay spread needs M_tau={self.M_tau} > M={self.M} bins")
        if self.N_nu > self.N:
            raise ValueError(f"Doppler spread needs N_nu={self.N_nu} > N={self.N} bins")

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def delay_resolution(self) -> float:
        """Width of one delay bin, ``T / M`` seconds."""
        return self.T / self.M

    @property
    def doppler_resolution(self) -> float:
        """Width of one Doppler bin, ``delta_f / N`` Hz."""
        return self.delta_f / self.N

    @property
    def M_tau(self) -> int:
        return _ceil(self.M * self.delta_f * self.tau_max) + 1

    @property
    def N_nu(self) -> int:
        return 2 * _ceil(self.nu_max * self.N * self.T) + 1

    @property
    def pilot_index(self) -> int:
        return flat_index(self.l_p, self.k_p, self.M, self.N)

    def replace(self, **changes) -> "FrameParams":
        values = {
            "M": self.M, "N": self.N, "delta_f": self.delta_f, "E_p": self.E_p,
            "l_p": self.l_p, "k_p": self.k_p, "tau_max": self.tau_max, "nu_max": self.nu_max,
        }
        # re-centre the pilot when the frame size changes and no pilot is given
        if "M" in changes and "l_p" not in changes:
            values["l_p"] = None
        if "N" in changes and "k_p" not in changes:
            values["k_p"] = None
        values.update(changes)
        return FrameParams(**values)


@dataclass(frozen=True)
class ChannelPath:
    """One propagation path: complex gain ``h``, delay ``tau`` (s), Doppler ``nu`` (Hz)."""

    h: complex
    tau: float
    nu: float

    def delay_bins(self, params: FrameParams) -> float:
        return self.tau * params.M * params.delta_f

    def doppler_bins(self, params: FrameParams) -> float:
        return self.nu * params.N * params.T

    def delay_index(self, params: FrameParams) -> tuple[int, float]:
        """Integer delay index and fractional remainder in [-0.5, 0.5]."""
        x = self.delay_bins(params)
        l = int(np.round(x))
        return l, x - l

    def doppler_index(self, params: FrameParams) -> tuple[int, float]:
        """Integer Doppler index and fractional remainder in [-0.5, 0.5]."""
        x = self.doppler_bins(params)
        k = int(np.round(x))
        return k, x - k

    @classmethod
    def from_indices(cls, h, l, iota, k, kappa, params: FrameParams) -> "ChannelPath":
        return cls(h, (l + iota) / (params.M * params.delta_f), (k + kappa) / (params.N * params.T))


@dataclass(frozen=True)
class ChannelState:
    """Ground-truth parametric channel, an ordered collection of paths."""

    paths: tuple[ChannelPath, ...]
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if len(self.paths) == 0:
            raise ValueError("a channel needs at least one path")
        if self.normalized:
            power = float(np.sum(np.abs(self.h) ** 2))
            if abs(power - 1.0) > 1e-12:
                raise ValueError(f"normalized channel has total power {power}")

    @classmethod
    def from_arrays(cls, h, tau, nu, normalized: bool = False) -> "ChannelState":
        h, tau, nu = np.broadcast_arrays(np.asarray(h, complex), np.asarray(tau, float), np.asarray(nu, float))
        paths = [ChannelPath(complex(a), float(b), float(c)) for a, b, c in zip(h.ravel(), tau.ravel(), nu.ravel())]
        return cls(tuple(paths), normalized)

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def h(self) -> np.ndarray:
        return np.array([p.h for p in self.paths], dtype=complex)

    @property
    def tau(self) -> np.ndarray:
        return np.array([p.tau for p in self.paths], dtype=float)

    @property
    def nu(self) -> np.ndarray:
        return np.array([p.nu for p in self.paths], dtype=float)

    def check_bounds(self, params: FrameParams, atol: float = 1e-15) -> None:
        """Raise if any path falls outside the frame's delay/Doppler spread."""
        if np.any(self.tau < -atol) or np.any(self.tau > params.tau_max + atol):
            raise ValueError("path delay outside [0, tau_max]")
        if np.any(np.abs(self.nu) > params.nu_max + atol):
            raise ValueError("path Doppler exceeds nu_max")


@dataclass(frozen=True)
class DdVector:
    """A length-MN delay-Doppler frame in column-wise (Doppler-major) order."""

    data: np.ndarray
    params: FrameParams = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape == (self.params.M, self.params.N):
            data = data.ravel(order="F")
        if data.shape != (self.params.MN,):
            raise ValueError(f"expected {self.params.MN} samples, got shape {data.shape}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def matrix(self) -> np.ndarray:
        """The frame as an ``M x N`` matrix, rows are delay bins."""
        return to_matrix(self.data, self.params.M, self.params.N)

    @property
    def energy(self) -> float:
        return float(np.vdot(self.data, self.data).real)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def flat_index(l: int, k: int, M: int, N: int | None = None) -> int:
    """0-based flat position ``k * M + l`` of DDRE ``(l, k)``."""
    if not 0 <= l < M:
        raise IndexError(f"delay index {l} outside [0, {M})")
    if k < 0 or (N is not None and k >= N):
        raise IndexError(f"Doppler index {k} outside [0, {N})")
    return k * M + l


def unflatten(q: int, M: int, N: int | None = None) -> tuple[int, int]:
    """Inverse of :func:`flat_index`."""
    if q < 0 or (N is not None and q >= M * N):
        raise IndexError(f"flat index {q} out of range")
    return q % M, q // M


def to_matrix(x: np.ndarray, M: int, N: int) -> np.ndarray:
    return np.asarray(x).reshape(N, M).T


def to_vector(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).T.ravel()


def wrap_doppler_index(k: int | np.ndarray, N: int):
    """Map ``k`` (any integer) onto the signed range ``[-floor(N/2), ceil(N/2))``."""
    h = N // 2
    return (np.asarray(k) + h) % N - h if np.ndim(k) else int((k + h) % N - h)


@dataclass(frozen=True)
class RefinedGrid:
    """Refinement factors along delay and Doppler."""

    m_tau: int = 6
    n_nu: int = 6

    def __post_init__(self):
        if self.m_tau < 1 or self.n_nu < 1:
            raise ValueError("grid refinements must be >= 1")

    @property
    def gamma(self) -> np.ndarray:
        return np.arange(-(self.m_tau // 2), self.m_tau // 2 + 1)

    @property
    def chi(self) -> np.ndarray:
        return np.arange(-(self.n_nu // 2), self.n_nu // 2 + 1)

    @property
    def size(self) -> int:
        return len(self.gamma) * len(self.chi)

    def delay_step(self, params: FrameParams) -> float:
        return params.T / (self.m_tau * params.M)

    def doppler_step(self, params: FrameParams) -> float:
        return params.delta_f / (self.n_nu * params.N)


def refined_grid_tau(l: int, m_tau: int, params: FrameParams, clamp: bool = True) -> np.ndarray:
    """Delay hypotheses ``lT/M + gamma T/(m_tau M)``, optionally clamped to [0, tau_max]."""
    gamma = RefinedGrid(m_tau, 1).gamma
    taus = l * params.T / params.M + gamma * params.T / (m_tau * params.M)
    if clamp:
        taus = np.clip(taus, 0.0, params.tau_max)
    return taus


def refined_grid_nu(k: int, n_nu: int, params: FrameParams) -> np.ndarray:
    """Signed Doppler hypotheses ``k delta_f/N + chi delta_f/(n_nu N)``."""
    chi = RefinedGrid(1, n_nu).chi
    return k * params.delta_f / params.N + chi * params.delta_f / (n_nu * params.N)


def refined_grid_2d(l: int, k: int, grid: RefinedGrid, params: FrameParams, clamp: bool = True):
    """All (tau, nu) points of the refined cell around DDRE ``(l, k)``.

    Returns two equal-length arrays ordered delay-major (delay offset outer,
    Doppler offset inner).
    """
    taus = refined_grid_tau(l, grid.m_tau, params, clamp=clamp)
    nus = refined_grid_nu(k, grid.n_nu, params)
    tt, nn = np.meshgrid(taus, nus, indexing="ij")
    return tt.ravel(), nn.ravel()


class SupportRegion(NamedTuple):
    rows: np.ndarray  # delay indices l'
    cols: np.ndarray  # Doppler indices k'

    @property
    def size(self) -> int:
        return len(self.rows) * len(self.cols)


def support_region(params: FrameParams) -> SupportRegion:
    """DDREs holding most of the received pilot energy.

    ``M_tau`` delay bins starting at ``l_p`` and ``N_nu`` Doppler bins centred
    on ``k_p``, both wrapping around the frame.
    """
    rows = (params.l_p + np.arange(params.M_tau)) % params.M
    half = params.N_nu // 2
    cols = (params.k_p + np.arange(-half, half + 1)) % params.N
    return SupportRegion(rows, cols)


def region_flat_indices(region: SupportRegion, params: FrameParams) -> np.ndarray:
    """Flat frame indices of a region, column-wise over the block."""
    return (region.cols[:, None] * params.M + region.rows[None, :]).ravel()


def hypothesis_cell(l: int, k: int, params: FrameParams) -> tuple[int, int]:
    """Offset of peak DDRE ``(l, k)`` from the pilot: delay mod M, Doppler signed."""
    return (l - params.l_p) % params.M, wrap_doppler_index(k - params.k_p, params.N)


def as_index_array(values: Sequence[int] | None, n: int) -> np.ndarray:
    return np.arange(n) if values is None else np.asarray(values, dtype=int)
