"""Sampled-waveform OTFS transceiver used as an independent reference.

The chain is ISFFT -> Heisenberg transform with a rectangular pulse -> delay
and Doppler channel (+ AWGN) -> Wigner transform (Riemann sum over each
symbol) -> SFFT. Time is sampled at ``Q * M * delta_f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ChannelState, FrameParams, to_matrix, to_vector


@dataclass(frozen=True)
class SampledWaveform:
    """Time-domain OTFS frame with a cyclic prefix of ``cp_len`` samples."""

    samples: np.ndarray
    rate: float
    cp_len: int

    def __post_init__(self):
        if self.cp_len < 0 or self.cp_len > len(self.samples):
            raise ValueError("invalid cyclic prefix length")

    @property
    def body(self) -> np.ndarray:
        """Samples after the cyclic prefix, spanning ``[0, N T)``."""
        return self.samples[self.cp_len:]

    def energy(self) -> float:
        """Energy of the frame body (CP excluded), ``sum |x|^2 / rate``."""
        return float(np.vdot(self.body, self.body).real / self.rate)


@dataclass(frozen=True)
class TfGrid:
    """``M x N`` time-frequency samples (rows are subcarriers)."""

    X: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite TF samples")


def cp_samples(params: FrameParams, Q: int) -> int:
    return math.ceil(params.tau_max * Q * params.M * params.delta_f - 1e-9)


def isfft(x_dd: np.ndarray) -> TfGrid:
    """``X[m, n] = 1/(MN) sum_{k,l} x[l, k] exp(-2j pi (m l / M - n k / N))``."""
    x_dd = np.asarray(x_dd, dtype=complex)
    M = x_dd.shape[0]
    return TfGrid(np.fft.ifft(np.fft.fft(x_dd, axis=0), axis=1) / M)


def sfft(Y: TfGrid | np.ndarray) -> np.ndarray:
    """``x[l', k'] = sum_{m,n} Y[m, n] exp(2j pi (m l' / M - n k' / N))``."""
    Y = Y.X if isinstance(Y, TfGrid) else np.asarray(Y, dtype=complex)
    M = Y.shape[0]
    return np.fft.fft(np.fft.ifft(Y, axis=0), axis=1) * M


def heisenberg_rect(X: TfGrid, Q: int, params: FrameParams, cp_len: int | None = None) -> SampledWaveform:
    """Sample the rectangular-pulse multicarrier signal at ``Q M delta_f``.

    The cyclic prefix is a circular copy of the frame tail; by default it
    covers ``tau_max``.
    """
    if Q < 1:
        raise ValueError("oversampling factor Q must be >= 1")
    M, N = params.M, params.N
    L = Q * M
    Xm = np.asarray(X.X if isinstance(X, TfGrid) else X, dtype=complex)
    padded = np.zeros((L, N), dtype=complex)
    padded[:M] = Xm
    # sum_m X[m, n] exp(2j pi m s / (Q M)) for s = 0 .. QM-1
    body = (np.fft.ifft(padded, axis=0) * L).T.ravel() / math.sqrt(params.T)
    cp = cp_samples(params, Q) if cp_len is None else int(cp_len)
    samples = np.concatenate([body[len(body) - cp:], body]) if cp else body
    return SampledWaveform(samples, Q * M * params.delta_f, cp)


def _fractional_delay(x: np.ndarray, delay: float, rate: float) -> np.ndarray:
    """Circularly delay a periodic sampled signal by ``delay`` seconds."""
    n = len(x)
    shift = delay * rate
    if abs(shift - round(shift)) < 1e-12:
        return np.roll(x, int(round(shift)))
    f = np.fft.fftfreq(n, d=1.0 / rate)
    return np.fft.ifft(np.fft.fft(x) * np.exp(-2j * np.pi * f * delay))


def apply_channel(
    w: SampledWaveform,
    channel: ChannelState,
    N0: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> SampledWaveform:
    """Pass a waveform through the multipath delay-Doppler channel.

    Each path contributes ``h x(t - tau) exp(2j pi nu (t - tau))``. The frame
    is periodic thanks to the cyclic prefix, so delays are applied as a DFT
    phase ramp on the frame body. ``N0 > 0`` adds complex white noise of
    variance ``N0 * rate`` per sample (``rng`` must then be given).
    """
    max_delay = float(np.max(channel.tau))
    if max_delay * w.rate > w.cp_len + 1e-9:
        raise ValueError(f"path delay {max_delay:g}s exceeds the cyclic prefix ({w.cp_len} samples)")
    if np.min(channel.tau) < 0:
        raise ValueError("negative path delay")
    body = w.body
    n = len(body)
    # include the CP in the time axis so the prefix is regenerated consistently
    t = np.arange(-w.cp_len, n) / w.rate
    out = np.zeros(n + w.cp_len, dtype=complex)
    for path in channel:
        delayed = _fractional_delay(body, path.tau, w.rate)
        delayed = np.concatenate([delayed[n - w.cp_len:], delayed]) if w.cp_len else delayed
        out += path.h * delayed * np.exp(2j * np.pi * path.nu * (t - path.tau))
    if N0 > 0:
        if rng is None:
            raise ValueError("a seed or Generator is required when adding noise")
        rng = np.random.default_rng(rng)
        sigma = math.sqrt(N0 * w.rate / 2)
        out = out + sigma * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return SampledWaveform(out, w.rate, w.cp_len)


def wigner_rect(y: SampledWaveform, params: FrameParams, Q: int) -> TfGrid:
    """Matched filtering against each subcarrier over ``[nT, (n+1)T)``, CP discarded."""
    M, N = params.M, params.N
    L = Q * M
    if not math.isclose(y.rate, L * params.delta_f, rel_tol=1e-12):
        raise ValueError("waveform rate does not match Q * M * delta_f")
    body = y.body
    if len(body) != L * N:
        raise ValueError(f"expected {L * N} body samples, got {len(body)}")
    symbols = body.reshape(N, L).T  # (s, n)
    Y = np.fft.fft(symbols, axis=0)[:M] / (math.sqrt(params.T) * y.rate)
    return TfGrid(Y)


def oracle_end_to_end(
    x_dd: np.ndarray,
    channel: ChannelState,
    params: FrameParams,
    Q: int = 32,
    N0: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Received DD frame (flat, column-wise) for a transmitted DD frame."""
    x = np.asarray(x_dd, dtype=complex)
    X = to_matrix(x, params.M, params.N) if x.ndim == 1 else x
    w = heisenberg_rect(isfft(X), Q, params, cp_len=max(cp_samples(params, Q), math.ceil(np.max(channel.tau) * Q * params.M * params.delta_f - 1e-9)))
    y = apply_channel(w, channel, N0=N0, rng=rng)
    return to_vector(sfft(wigner_rect(y, params, Q)))


def write_waveform(path, w: SampledWaveform) -> None:
    """Dump samples as interleaved little-endian float64 I/Q pairs."""
    iq = np.empty(2 * len(w.samples), dtype="<f8")
    iq[0::2] = w.samples.real
    iq[1::2] = w.samples.imag
    iq.tofile(path)


def read_waveform(path, rate: float, cp_len: int = 0) -> SampledWaveform:
    iq = np.fromfile(path, dtype="<f8")
    return SampledWaveform(iq[0::2] + 1j * iq[1::2], rate, cp_len)
