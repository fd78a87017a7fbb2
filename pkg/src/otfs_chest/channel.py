"""Closed-form effective delay-Doppler channel for rectangular pulses.

A single path with delay ``tau`` and Doppler ``nu`` maps the DD input sample
at ``(l, k)`` onto output ``(l', k')`` with gain::

    exp(-2j pi nu tau) * D_N((k'-k)/N - nu T) * [U(l', l) + exp(-2j pi k/N) V(l', l)]

where ``D_N`` is the normalised Dirichlet kernel and ``U``/``V`` collect the
delay-domain sums over the two partial-symbol overlaps created by the delay
(the current symbol and the tail of the previous one). Everything here is
built from that factorisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .grid import ChannelPath, ChannelState, FrameParams, as_index_array, support_region, unflatten

logger = logging.getLogger(__name__)

DENSE_CAP = 4096
SIZE_CAP = 16384
SPARSE_THRESHOLD = 1e-6

_SERIES_EPS = 1e-9


def doppler_kernel(x, N: int):
    """Normalised Dirichlet kernel ``(1/N) sum_n exp(-2j pi n x)``.

    Evaluated in closed form; near integer ``x`` a second-order series
    replaces the 0/0 ratio.
    """
    x = np.asarray(x, dtype=float)
    # distance to the nearest integer carries all the information
    d = x - np.round(x)
    s = np.sin(np.pi * d)
    near = np.abs(s) < _SERIES_EPS
    safe = np.where(near, 1.0, s)
    ratio = np.where(near, 1.0 - (np.pi * d) ** 2 * (N * N - 1) / 6.0, np.sin(np.pi * N * d) / (N * safe))
    out = np.exp(-1j * np.pi * (N - 1) * d) * ratio
    return out if out.ndim else complex(out)


def f_kernel(tau: float, nu: float, k: int, l_prime: int, m: int, params: FrameParams) -> complex:
    """Literal evaluation of the delay-domain inner sum ``f(m)`` for one ``(k, l')``."""
    M, N = params.M, params.N
    a = tau / params.T
    beta = nu / params.delta_f
    wk = np.exp(-2j * np.pi * k / N)
    total = 0j
    for p in range(-m, M - m):
        x = beta - p
        first = (1 - a) * np.exp(1j * np.pi * (1 + a) * x) * np.sinc((1 - a) * x)
        second = wk * a * np.exp(1j * np.pi * a * x) * np.sinc(a * x)
        total += np.exp(2j * np.pi * p * l_prime / M) * (first + second)
    return complex(total)


def _sinc_tables(a: np.ndarray, beta: np.ndarray, M: int):
    """The two p-indexed coefficient sequences for p in [-(M-1), M-1].

    Shapes ``(H, 2M-1)``; ``a = tau/T`` and ``beta = nu/delta_f`` have shape ``(H,)``.
    """
    p = np.arange(-(M - 1), M)
    x = beta[:, None] - p[None, :]
    a = a[:, None]
    c1 = (1 - a) * np.exp(1j * np.pi * (1 + a) * x) * np.sinc((1 - a) * x)
    c2 = a * np.exp(1j * np.pi * a * x) * np.sinc(a * x)
    return c1, c2


def _window_sums(c: np.ndarray, rows: np.ndarray, M: int) -> np.ndarray:
    """``F[h, r, m] = sum_{p=-m}^{M-1-m} exp(2j pi p rows[r] / M) c[h, p]``."""
    p = np.arange(-(M - 1), M)
    E = np.exp(2j * np.pi * np.outer(rows, p) / M)[None, :, :] * c[:, None, :]
    C = np.zeros(E.shape[:-1] + (E.shape[-1] + 1,), dtype=complex)
    np.cumsum(E, axis=-1, out=C[..., 1:])
    m = np.arange(M)
    # p = -m is column M-1-m of E; p = M-1-m is column 2M-2-m
    return C[..., 2 * M - 1 - m] - C[..., M - 1 - m]


def f_kernel_table(tau, nu, k: int, params: FrameParams, rows=None) -> np.ndarray:
    """``f(m)`` for every ``m`` and every delay row in ``rows``; shape ``(R, M)``."""
    M = params.M
    rows = as_index_array(rows, M)
    c1, c2 = _sinc_tables(np.atleast_1d(tau / params.T), np.atleast_1d(nu / params.delta_f), M)
    c = c1 + np.exp(-2j * np.pi * k / params.N) * c2
    return _window_sums(c, rows, M)[0]


def _weighted_window(c: np.ndarray, a: np.ndarray, rows: np.ndarray, M: int) -> np.ndarray:
    """``(1/M) exp(2j pi m (l' - M a)/M) F[h, r, m]``, ready to be summed against a column index."""
    F = _window_sums(c, rows, M)
    m = np.arange(M)
    phase = np.exp(2j * np.pi * (np.outer(rows, m)[None, :, :] / M - a[:, None, None] * m[None, None, :]))
    return F * phase / M


def delay_terms(tau: float, nu: float, params: FrameParams, rows=None):
    """Delay-domain matrices ``U[l', l]`` and ``V[l', l]`` of one path.

    The delay term for an input at Doppler index ``k`` is
    ``U + exp(-2j pi k / N) V``.
    """
    M = params.M
    rows = as_index_array(rows, M)
    a = np.atleast_1d(float(tau) / params.T)
    c1, c2 = _sinc_tables(a, np.atleast_1d(float(nu) / params.delta_f), M)
    m = np.arange(M)
    to_l = np.exp(-2j * np.pi * np.outer(m, np.arange(M)) / M)
    U = _weighted_window(c1, a, rows, M)[0] @ to_l
    V = _weighted_window(c2, a, rows, M)[0] @ to_l
    return U, V


def pilot_delay_profile(taus, nus, params: FrameParams, rows=None) -> np.ndarray:
    """Delay term ``g[l']`` seen by the pilot for each hypothesis; shape ``(H, R)``."""
    M = params.M
    rows = as_index_array(rows, M)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    nus = np.atleast_1d(np.asarray(nus, dtype=float))
    a = taus / params.T
    c1, c2 = _sinc_tables(a, nus / params.delta_f, M)
    c = c1 + np.exp(-2j * np.pi * params.k_p / params.N) * c2
    W = _weighted_window(c, a, rows, M)
    back = np.exp(-2j * np.pi * np.arange(M) * params.l_p / M)
    return W @ back


def pilot_doppler_profile(nus, params: FrameParams, cols=None) -> np.ndarray:
    """Doppler term ``D_N((k'-k_p)/N - nu T)`` for each hypothesis; shape ``(H, C)``."""
    cols = as_index_array(cols, params.N)
    nus = np.atleast_1d(np.asarray(nus, dtype=float))
    x = (cols[None, :] - params.k_p) / params.N - nus[:, None] * params.T
    return np.atleast_2d(doppler_kernel(x, params.N))


def pilot_columns(taus, nus, params: FrameParams, rows=None, cols=None) -> np.ndarray:
    """Received pilot responses ``a(tau, nu)`` restricted to a ``rows x cols`` block.

    Returns shape ``(H, C * R)``; each row is the block flattened column-wise
    (Doppler-major), the same order as full frames. With ``rows`` and ``cols``
    left as ``None`` this is the full length-MN column.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    nus = np.atleast_1d(np.asarray(nus, dtype=float))
    g = pilot_delay_profile(taus, nus, params, rows)
    D = pilot_doppler_profile(nus, params, cols)
    scale = np.sqrt(params.MN * params.E_p) * np.exp(-2j * np.pi * nus * taus)
    block = scale[:, None, None] * D[:, :, None] * g[:, None, :]
    return block.reshape(len(taus), -1)


@dataclass(frozen=True)
class PilotColumn:
    """Noise-free received pilot frame for a unit-gain path."""

    a: np.ndarray
    tau: float
    nu: float


def a_column(tau: float, nu: float, params: FrameParams, truncated: bool = False) -> PilotColumn:
    """The column ``a(tau, nu)`` of length MN.

    ``truncated`` keeps only the pilot support region and zeroes the rest.
    """
    if not truncated:
        return PilotColumn(pilot_columns(tau, nu, params)[0], float(tau), float(nu))
    region = support_region(params)
    block = pilot_columns(tau, nu, params, region.rows, region.cols)[0]
    a = np.zeros(params.MN, dtype=complex)
    a[(region.cols[:, None] * params.M + region.rows[None, :]).ravel()] = block
    return PilotColumn(a, float(tau), float(nu))


def effective_gain(l_prime: int, k_prime: int, l: int, k: int, channel: ChannelState, params: FrameParams) -> complex:
    """Gain from DD input ``(l, k)`` to DD output ``(l', k')``."""
    M, N = params.M, params.N
    for name, idx, n in (("l'", l_prime, M), ("k'", k_prime, N), ("l", l, M), ("k", k, N)):
        if not 0 <= idx < n:
            raise IndexError(f"{name}={idx} outside [0, {n})")
    total = 0j
    for path in channel:
        U, V = delay_terms(path.tau, path.nu, params, rows=[l_prime])
        dterm = U[0, l] + np.exp(-2j * np.pi * k / N) * V[0, l]
        D = doppler_kernel((k_prime - k) / N - path.nu * params.T, N)
        total += path.h * np.exp(-2j * np.pi * path.nu * path.tau) * D * dterm
    return complex(total)


def b_element(q: int, path: ChannelPath, l_prime: int, k_prime: int, params: FrameParams) -> complex:
    """Entry of ``B_q`` for a 1-based column ``q`` and a unit-gain path."""
    if not 1 <= q <= params.MN:
        raise IndexError(f"column q={q} outside [1, {params.MN}]")
    l, k = unflatten(q - 1, params.M)
    return effective_gain(l_prime, k_prime, l, k, ChannelState((ChannelPath(1.0, path.tau, path.nu),)), params)


class ChannelTooLarge(MemoryError):
    """Raised instead of allocating an effective channel matrix above the size cap."""


@dataclass(frozen=True)
class EffectiveChannelMatrix:
    """The MN x MN matrix mapping transmitted to received DD frames."""

    G: np.ndarray | sparse.csr_matrix
    params: FrameParams
    source: object = None

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.G)

    def toarray(self) -> np.ndarray:
        return self.G.toarray() if self.is_sparse else np.asarray(self.G)

    def __matmul__(self, x):
        return self.G @ np.asarray(x)

    @property
    def shape(self):
        return self.G.shape


def _path_arrays(source):
    if isinstance(source, ChannelState):
        return source.h, source.tau, source.nu
    # PathEstimates and similar
    return (np.asarray(source.h_hat, complex), np.asarray(source.tau_hat, float), np.asarray(source.nu_hat, float))


def _g_columns(h, tau, nu, params: FrameParams, k: int) -> np.ndarray:
    """Columns ``k*M .. k*M+M-1`` of G, i.e. all inputs with Doppler index ``k``."""
    M, N = params.M, params.N
    out = np.zeros((N, M, M), dtype=complex)  # (k', l', l)
    kp = np.arange(N)
    wk = np.exp(-2j * np.pi * k / N)
    for hi, ti, ni in zip(h, tau, nu):
        U, V = delay_terms(ti, ni, params)
        D = doppler_kernel((kp - k) / N - ni * params.T, N)
        out += (hi * np.exp(-2j * np.pi * ni * ti)) * D[:, None, None] * (U + wk * V)[None, :, :]
    return out.reshape(N * M, M)


def assemble_G(
    source,
    params: FrameParams,
    threshold: float = 0.0,
    sparse_storage: bool | None = None,
    dense_cap: int = DENSE_CAP,
    size_cap: int = SIZE_CAP,
) -> EffectiveChannelMatrix:
    """Build the effective channel matrix from a channel or a set of estimates.

    Dense storage up to ``dense_cap`` rows; larger frames use CSR storage with
    entries below ``threshold * max|G|`` dropped (``SPARSE_THRESHOLD`` when no
    threshold is given).
    """
    MN = params.MN
    if MN > size_cap:
        raise ChannelTooLarge(f"MN={MN} exceeds the configured cap of {size_cap}")
    if sparse_storage is None:
        sparse_storage = MN > dense_cap
    h, tau, nu = _path_arrays(source)
    if len(h) == 0:
        G = sparse.csr_matrix((MN, MN), dtype=complex) if sparse_storage else np.zeros((MN, MN), dtype=complex)
        return EffectiveChannelMatrix(G, params, source)

    if not sparse_storage:
        G = np.empty((MN, MN), dtype=complex)
        for k in range(params.N):
            G[:, k * params.M:(k + 1) * params.M] = _g_columns(h, tau, nu, params, k)
        if threshold > 0:
            G[np.abs(G) < threshold * np.abs(G).max()] = 0
        return EffectiveChannelMatrix(G, params, source)

    threshold = threshold or SPARSE_THRESHOLD
    blocks = [_g_columns(h, tau, nu, params, k) for k in range(params.N)]
    gmax = max(np.abs(b).max() for b in blocks)
    cols = []
    for b in blocks:
        b[np.abs(b) < threshold * gmax] = 0
        cols.append(sparse.csc_matrix(b))
    G = sparse.hstack(cols, format="csr")
    logger.debug("sparse G: %d nonzeros of %d", G.nnz, MN * MN)
    return EffectiveChannelMatrix(G, params, source)


def column_coherence(tau1: float, nu1: float, tau2: float, nu2: float, params: FrameParams) -> float:
    """Normalised inner product magnitude of two pilot columns, computed directly."""
    a1 = pilot_columns(tau1, nu1, params)[0]
    a2 = pilot_columns(tau2, nu2, params)[0]
    return float(abs(np.vdot(a1, a2)) / (np.linalg.norm(a1) * np.linalg.norm(a2)))


def closed_form_coherence(tau1: float, nu1: float, tau2: float, nu2: float, params: FrameParams) -> float:
    """Coherence through the delay/Doppler factorisation of the column inner product."""
    g = pilot_delay_profile([tau1, tau2], [nu1, nu2], params)
    delay_part = abs(np.vdot(g[0], g[1])) / (np.linalg.norm(g[0]) * np.linalg.norm(g[1]))
    x = (nu1 - nu2) * params.T
    return float(delay_part * abs(doppler_kernel(x, params.N)))


def path_gram(tau, nu, params: FrameParams) -> np.ndarray:
    """Frobenius inner products between the unit-gain G matrices of several paths.

    Entry ``[i, j]`` equals ``<G_i, G_j>_F = trace(G_i^H G_j)`` where ``G_i`` is
    the effective channel of path ``i`` alone with ``h_i = 1``. Exploits the
    periodicity of the Doppler kernel so no MN x MN matrix is formed.
    """
    tau = np.atleast_1d(np.asarray(tau, float))
    nu = np.atleast_1d(np.asarray(nu, float))
    P = len(tau)
    N = params.N
    UV = [delay_terms(t, v, params) for t, v in zip(tau, nu)]
    U = np.stack([u.ravel() for u, _ in UV])
    V = np.stack([v.ravel() for _, v in UV])
    UU = U.conj() @ U.T
    VV = V.conj() @ V.T
    UVx = U.conj() @ V.T
    VUx = V.conj() @ U.T
    W = np.sum(np.exp(-2j * np.pi * np.arange(N) / N))
    phase = np.exp(-2j * np.pi * nu * tau)
    x = nu * params.T
    S = np.asarray(doppler_kernel(x[:, None] - x[None, :], N)).reshape(P, P)
    return phase.conj()[:, None] * phase[None, :] * S * (N * (UU + VV) + W * UVx + np.conj(W) * VUx)
