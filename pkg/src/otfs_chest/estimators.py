"""Pilot-based estimators of the parametric delay-Doppler channel.

All estimators take the received DD pilot frame (flat, column-wise, or an
``M x N`` matrix) and return :class:`PathEstimates`. The sklearn-style
wrappers at the bottom of the module expose the same algorithms through
``fit`` / ``predict``.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .channel import EffectiveChannelMatrix, assemble_G, pilot_columns
from .grid import (
    DdVector,
    FrameParams,
    RefinedGrid,
    hypothesis_cell,
    refined_grid_2d,
    refined_grid_nu,
    refined_grid_tau,
    region_flat_indices,
    support_region,
    to_matrix,
    unflatten,
    wrap_doppler_index,
)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = "max-iterations"
TOLERANCE = "tolerance"


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning knobs shared by the iterative estimators.

    ``avg_rx_pilot_power`` normalises the residual energy trace; ``None`` means
    ``M N E_p``. ``peak_search`` selects where the strongest DDRE is looked
    for: the whole frame (``"full"``) or the pilot support region only.
    """

    m_tau: int = 6
    n_nu: int = 6
    epsilon: float = 1e-4
    T_max: int = 15
    avg_rx_pilot_power: float | None = None
    truncated: bool = True
    peak_search: str = "full"
    gain_normalization: str = "column"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.T_max < 1:
            raise ValueError("T_max must be >= 1")
        if self.m_tau < 1 or self.n_nu < 1:
            raise ValueError("grid refinements must be >= 1")
        if self.peak_search not in ("full", "support"):
            raise ValueError(f"unknown peak_search {self.peak_search!r}")
        if self.gain_normalization not in ("column", "pilot-energy"):
            raise ValueError(f"unknown gain_normalization {self.gain_normalization!r}")

    @property
    def grid(self) -> RefinedGrid:
        return RefinedGrid(self.m_tau, self.n_nu)

    def normalizer(self, params: FrameParams) -> float:
        return self.avg_rx_pilot_power or params.MN * params.E_p


@dataclass
class PathEstimates:
    """Estimated path gains, delays and Doppler shifts plus the run trace.

    A path re-detected at exactly the same ``(tau, nu)`` is merged into the
    existing entry, so ``len(h_hat) + merges == iterations_run``.
    """

    h_hat: list = field(default_factory=list)
    tau_hat: list = field(default_factory=list)
    nu_hat: list = field(default_factory=list)
    residual_energies: list = field(default_factory=list)
    iterations_run: int = 0
    terminated_by: str = MAX_ITERATIONS
    merges: int = 0
    counters: Counter = field(default_factory=Counter)
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.h_hat)

    def add(self, h: complex, tau: float, nu: float) -> None:
        for i, (t, v) in enumerate(zip(self.tau_hat, self.nu_hat)):
            if t == tau and v == nu:
                self.h_hat[i] += h
                self.merges += 1
                return
        self.h_hat.append(complex(h))
        self.tau_hat.append(float(tau))
        self.nu_hat.append(float(nu))


def check_frame(x, params: FrameParams) -> np.ndarray:
    """Return a received DD frame as a fresh flat complex array of length MN."""
    if isinstance(x, DdVector):
        x = x.data
    x = np.asarray(x)
    if x.shape == (params.M, params.N):
        x = x.T.ravel()
    if x.shape != (params.MN,):
        raise ValueError(f"frame must have {params.MN} samples or shape ({params.M}, {params.N}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frame contains non-finite samples")
    return np.array(x, dtype=complex)


def make_pilot_frame(params: FrameParams) -> DdVector:
    """Single DD pilot of amplitude ``sqrt(M N E_p)`` at ``(l_p, k_p)``."""
    x = np.zeros(params.MN, dtype=complex)
    x[params.pilot_index] = np.sqrt(params.MN * params.E_p)
    return DdVector(x, params)


def objective_phi(tau: float, nu: float, residual, params: FrameParams, truncated: bool = True) -> float:
    """``|a(tau, nu)^H r|^2`` over the pilot support region (or the full frame)."""
    r = check_frame(residual, params)
    if truncated:
        region = support_region(params)
        a = pilot_columns(tau, nu, params, region.rows, region.cols)[0]
        r = r[region_flat_indices(region, params)]
    else:
        a = pilot_columns(tau, nu, params)[0]
    return float(abs(np.vdot(a, r)) ** 2)


def gain_estimate(tau_hat: float, nu_hat: float, residual, params: FrameParams, normalization: str = "column") -> complex:
    """Least-squares gain of the single column ``a(tau_hat, nu_hat)``.

    ``normalization="pilot-energy"`` divides by ``M N E_p`` instead of the
    column's own energy; the two agree only to the extent the column energy
    equals the pilot energy.
    """
    r = check_frame(residual, params)
    a = pilot_columns(tau_hat, nu_hat, params)[0]
    return _gain(a, r, params, normalization)


def _gain(a: np.ndarray, r: np.ndarray, params: FrameParams, normalization: str) -> complex:
    if normalization == "column":
        denom = np.vdot(a, a).real
    else:
        denom = params.MN * params.E_p
    return complex(np.vdot(a, r) / denom) if denom > 0 else 0j


class _Search:
    """Per-frame cached quantities for the iterative estimators."""

    def __init__(self, params: FrameParams, config: EstimatorConfig):
        self.params = params
        self.config = config
        self.region = support_region(params)
        self.region_idx = region_flat_indices(self.region, params)
        self.norm = config.normalizer(params)
        self.in_region = np.zeros(params.MN, dtype=bool)
        self.in_region[self.region_idx] = True

    def peak(self, x: np.ndarray, est: PathEstimates) -> tuple[int, int]:
        energy = (x.real ** 2 + x.imag ** 2)
        if self.config.peak_search == "support":
            q = int(self.region_idx[np.argmax(energy[self.region_idx])])
            est.counters["peak_elements"] += len(self.region_idx)
        else:
            q = int(np.argmax(energy))
            est.counters["peak_elements"] += len(x)
            if not self.in_region[q]:
                est.diagnostics.append(f"iteration {est.iterations_run + 1}: peak DDRE {unflatten(q, self.params.M)} outside support region")
        return unflatten(q, self.params.M)

    def cancel(self, x: np.ndarray, tau: float, nu: float, est: PathEstimates) -> np.ndarray:
        a = pilot_columns(tau, nu, self.params)[0]
        h = _gain(a, x, self.params, self.config.gain_normalization)
        est.counters["gain_elements"] += len(x)
        est.add(h, tau, nu)
        return x - h * a

    def energy(self, x: np.ndarray) -> float:
        return float(np.vdot(x, x).real / self.norm)


def _run(x_p_hat, config: EstimatorConfig, params: FrameParams, locate) -> PathEstimates:
    """Shared iterate-detect-cancel loop; ``locate`` returns the next (tau, nu)."""
    x = check_frame(x_p_hat, params)
    search = _Search(params, config)
    est = PathEstimates()
    est.residual_energies.append(search.energy(x))
    if not np.any(x):
        est.terminated_by = TOLERANCE
        return est
    while est.iterations_run < config.T_max:
        l, k = search.peak(x, est)
        tau, nu = locate(x, l, k, search, est)
        x = search.cancel(x, tau, nu, est)
        est.iterations_run += 1
        est.residual_energies.append(search.energy(x))
        if abs(est.residual_energies[-1] - est.residual_energies[-2]) <= config.epsilon:
            est.terminated_by = TOLERANCE
            break
    else:
        est.terminated_by = MAX_ITERATIONS
    return est


def _mmle_locate(x, l, k, search: _Search, est: PathEstimates):
    params, config = search.params, search.config
    dl, dk = hypothesis_cell(l, k, params)
    taus, nus = refined_grid_2d(dl, dk, config.grid, params)
    if config.truncated:
        A = pilot_columns(taus, nus, params, search.region.rows, search.region.cols)
        r = x[search.region_idx]
    else:
        A = pilot_columns(taus, nus, params)
        r = x
    phi = np.abs(A.conj() @ r) ** 2
    est.counters["hypotheses"] += len(taus)
    est.counters["inner_product_elements"] += A.size
    j = int(np.argmax(phi))
    return float(taus[j]), float(nus[j])


def mmle_estimate(x_p_hat, config: EstimatorConfig, params: FrameParams) -> PathEstimates:
    """Iterative joint delay-Doppler refinement with successive cancellation.

    Each iteration takes the strongest remaining DDRE, maximises
    ``|a(tau, nu)^H r|^2`` over the refined grid of the matching cell, then
    removes the fitted path from the residual ``r``. Stops after ``T_max``
    iterations or when the normalised residual energy changes by at most
    ``epsilon``.
    """
    return _run(x_p_hat, config, params, _mmle_locate)


def tse_delay_step(X_res: np.ndarray, k_dd: int, l_peak: int, config: EstimatorConfig, params: FrameParams, est: PathEstimates | None = None) -> float:
    """Delay of the strongest path from the peak's Doppler column.

    The Doppler shift is pinned to the peak cell centre while the delay is
    searched over the refined 1-D grid.
    """
    dl, dk = hypothesis_cell(l_peak, k_dd, params)
    taus = refined_grid_tau(dl, config.m_tau, params)
    nu0 = dk * params.delta_f / params.N
    rows = support_region(params).rows if config.truncated else np.arange(params.M)
    A = pilot_columns(taus, np.full(len(taus), nu0), params, rows, [k_dd])
    d = np.asarray(X_res)[rows, k_dd]
    phi = np.abs(A.conj() @ d) ** 2
    if est is not None:
        est.counters["hypotheses"] += len(taus)
        est.counters["inner_product_elements"] += A.size
        est.counters["delay_step_elements"] += A.size
    return float(taus[int(np.argmax(phi))])


def tse_doppler_step(X_res: np.ndarray, l_peak: int, k_dd: int, tau_hat: float, config: EstimatorConfig, params: FrameParams, est: PathEstimates | None = None) -> float:
    """Doppler of the strongest path from the peak's delay row, delay fixed at ``tau_hat``."""
    _, dk = hypothesis_cell(l_peak, k_dd, params)
    nus = refined_grid_nu(dk, config.n_nu, params)
    cols = support_region(params).cols if config.truncated else np.arange(params.N)
    A = pilot_columns(np.full(len(nus), tau_hat), nus, params, [l_peak], cols)
    c = np.asarray(X_res)[l_peak, cols]
    phi = np.abs(A.conj() @ c) ** 2
    if est is not None:
        est.counters["hypotheses"] += len(nus)
        est.counters["inner_product_elements"] += A.size
        est.counters["doppler_step_elements"] += A.size
    return float(nus[int(np.argmax(phi))])


def _tse_locate(x, l, k, search: _Search, est: PathEstimates):
    params, config = search.params, search.config
    X = to_matrix(x, params.M, params.N)
    tau = tse_delay_step(X, k, l, config, params, est)
    nu = tse_doppler_step(X, l, k, tau, config, params, est)
    return tau, nu


def tse_estimate(x_p_hat, config: EstimatorConfig, params: FrameParams) -> PathEstimates:
    """Two-step variant: a 1-D delay search followed by a 1-D Doppler search per path."""
    return _run(x_p_hat, config, params, _tse_locate)


def impulse_baseline(x_p_hat, params: FrameParams, threshold_sigma: float = 3.0, N0: float = 1.0) -> PathEstimates:
    """Read the effective channel taps directly off the received pilot.

    Every DDRE of the support region whose magnitude exceeds
    ``threshold_sigma`` noise standard deviations becomes an on-grid path.
    Its gain is the received sample divided by the on-grid path response at
    that DDRE.
    """
    x = check_frame(x_p_hat, params)
    region = support_region(params)
    idx = region_flat_indices(region, params)
    sigma = np.sqrt(params.MN * N0)
    norm = params.MN * params.E_p
    est = PathEstimates()
    est.counters["peak_elements"] += len(idx)
    keep = idx[np.abs(x[idx]) > threshold_sigma * sigma]
    # strongest taps first, lowest flat index on ties
    keep = keep[np.argsort(-np.abs(x[keep]) ** 2, kind="stable")]
    residual = x.copy()
    est.residual_energies.append(float(np.vdot(residual, residual).real / norm))
    for q in keep:
        l, k = unflatten(int(q), params.M)
        tau = ((l - params.l_p) % params.M) / (params.M * params.delta_f)
        nu = wrap_doppler_index(k - params.k_p, params.N) / (params.N * params.T)
        a = pilot_columns(tau, nu, params)[0]
        h = complex(x[q] / a[q])
        est.add(h, tau, nu)
        residual -= h * a
        est.iterations_run += 1
        est.residual_energies.append(float(np.vdot(residual, residual).real / norm))
    est.terminated_by = TOLERANCE
    return est


def ml_hypothesis_grid(params: FrameParams, m_tau: int = 2, n_nu: int = 2):
    """Union of all refined cells over the support region, de-duplicated.

    This is the shared lattice on which the joint ML search and the
    per-cell searches of the iterative estimators coincide.
    """
    grid = RefinedGrid(m_tau, n_nu)
    half = params.N_nu // 2
    pts = set()
    for dl in range(params.M_tau):
        for dk in range(-half, half + 1):
            taus, nus = refined_grid_2d(dl, dk, grid, params)
            pts.update(zip(taus.tolist(), nus.tolist()))
    pts = sorted(pts)
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def ml_reference(x_p_hat, params: FrameParams, L: int = 1, taus=None, nus=None, m_tau: int = 2, n_nu: int = 2) -> PathEstimates:
    """Exhaustive joint maximum-likelihood search for one or two paths.

    Maximises ``x^H A (A^H A)^{-1} A^H x`` over all ``L``-subsets of the
    hypothesis grid (``ml_hypothesis_grid`` unless ``taus``/``nus`` are
    given); gains come from the normal equations. Singular hypothesis pairs
    are skipped.
    """
    if L not in (1, 2):
        raise ValueError("ml_reference supports L = 1 or 2")
    if params.MN > 512:
        raise ValueError(f"ml_reference is limited to MN <= 512, got {params.MN}")
    x = check_frame(x_p_hat, params)
    if taus is None or nus is None:
        taus, nus = ml_hypothesis_grid(params, m_tau, n_nu)
    taus = np.asarray(taus, float)
    nus = np.asarray(nus, float)
    A = pilot_columns(taus, nus, params)  # (S, MN)
    z = A.conj() @ x
    energy = np.einsum("ij,ij->i", A.conj(), A).real
    est = PathEstimates()
    est.counters["hypotheses"] += len(taus) if L == 1 else len(taus) * (len(taus) - 1) // 2
    norm = params.MN * params.E_p
    est.residual_energies.append(float(np.vdot(x, x).real / norm))

    if L == 1:
        obj = np.where(energy > 0, np.abs(z) ** 2 / np.where(energy > 0, energy, 1), -np.inf)
        j = int(np.argmax(obj))
        chosen = [j]
    else:
        K = A.conj() @ A.T
        i, j = np.triu_indices(len(taus), k=1)
        det = energy[i] * energy[j] - np.abs(K[i, j]) ** 2
        ok = det > 1e-9 * energy[i] * energy[j]
        skipped = int(np.count_nonzero(~ok))
        if skipped:
            est.diagnostics.append(f"skipped {skipped} singular hypothesis pairs")
        num = energy[j] * np.abs(z[i]) ** 2 + energy[i] * np.abs(z[j]) ** 2 - 2 * np.real(np.conj(z[i]) * K[i, j] * z[j])
        obj = np.where(ok, num / np.where(ok, det, 1), -np.inf)
        if not np.any(np.isfinite(obj)):
            est.terminated_by = TOLERANCE
            return est
        best = int(np.argmax(obj))
        chosen = [int(i[best]), int(j[best])]

    Asel = A[chosen].T
    h, *_ = np.linalg.lstsq(Asel, x, rcond=None)
    # strongest first, matching the iterative estimators' emission order
    order = np.argsort(-np.abs(h) ** 2 * energy[chosen], kind="stable")
    residual = x - Asel @ h
    for o in order:
        est.add(complex(h[o]), float(taus[chosen[o]]), float(nus[chosen[o]]))
        est.iterations_run += 1
    est.residual_energies.append(float(np.vdot(residual, residual).real / norm))
    est.terminated_by = TOLERANCE
    return est


def reconstruct_G(estimates: PathEstimates, params: FrameParams, **kwargs) -> EffectiveChannelMatrix:
    """Effective channel matrix rebuilt from estimated path parameters."""
    return assemble_G(estimates, params, **kwargs)


# sklearn-style front end -----------------------------------------------------


class _PilotEstimator(BaseEstimator):
    """Common fit/predict plumbing; subclasses implement ``_estimate``."""

    def fit(self, X, y=None):
        """Estimate the channel from a received pilot frame ``X``."""
        params = self._params()
        X = check_frame(X, params)
        self.estimates_ = self._estimate(X, params)
        self.h_ = np.array(self.estimates_.h_hat, dtype=complex)
        self.tau_ = np.array(self.estimates_.tau_hat, dtype=float)
        self.nu_ = np.array(self.estimates_.nu_hat, dtype=float)
        self.n_paths_ = len(self.h_)
        return self

    def _params(self) -> FrameParams:
        if not isinstance(self.frame, FrameParams):
            raise TypeError("frame must be a FrameParams instance")
        return self.frame

    def _check_fitted(self):
        if not hasattr(self, "estimates_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def channel_matrix(self) -> EffectiveChannelMatrix:
        self._check_fitted()
        return reconstruct_G(self.estimates_, self._params())

    def predict(self, X):
        """Received DD frames predicted for transmitted frames ``X`` (one per row, or a single frame)."""
        self._check_fitted()
        G = self.channel_matrix()
        X = np.asarray(X)
        if X.ndim == 1:
            return G @ check_frame(X, self._params())
        return np.stack([G @ check_frame(row, self._params()) for row in X])


class MMLEEstimator(_PilotEstimator):
    """Successive-cancellation estimator with a joint 2-D refined grid search."""

    def __init__(self, frame=None, m_tau=6, n_nu=6, epsilon=1e-4, T_max=15, truncated=True, peak_search="full", gain_normalization="column"):
        self.frame = frame
        self.m_tau = m_tau
        self.n_nu = n_nu
        self.epsilon = epsilon
        self.T_max = T_max
        self.truncated = truncated
        self.peak_search = peak_search
        self.gain_normalization = gain_normalization

    def _config(self) -> EstimatorConfig:
        return EstimatorConfig(
            m_tau=self.m_tau, n_nu=self.n_nu, epsilon=self.epsilon, T_max=self.T_max,
            truncated=self.truncated, peak_search=self.peak_search, gain_normalization=self.gain_normalization,
        )

    def _estimate(self, X, params):
        return mmle_estimate(X, self._config(), params)


class TSEEstimator(MMLEEstimator):
    """Successive-cancellation estimator with separate 1-D delay and Doppler searches."""

    def _estimate(self, X, params):
        return tse_estimate(X, self._config(), params)


class ImpulseEstimator(_PilotEstimator):
    """Thresholded on-grid taps read off the received pilot."""

    def __init__(self, frame=None, threshold_sigma=3.0, N0=1.0):
        self.frame = frame
        self.threshold_sigma = threshold_sigma
        self.N0 = N0

    def _estimate(self, X, params):
        return impulse_baseline(X, params, self.threshold_sigma, self.N0)


class MLReferenceEstimator(_PilotEstimator):
    """Joint ML search over a coarse grid, for tiny frames only."""

    def __init__(self, frame=None, L=1, m_tau=2, n_nu=2):
        self.frame = frame
        self.L = L
        self.m_tau = m_tau
        self.n_nu = n_nu

    def _estimate(self, X, params):
        return ml_reference(X, params, self.L, m_tau=self.m_tau, n_nu=self.n_nu)


ESTIMATORS = {
    "mmle": MMLEEstimator,
    "tse": TSEEstimator,
    "impulse": ImpulseEstimator,
    "ml_reference": MLReferenceEstimator,
}


def make_estimator(name: str, frame: FrameParams, **kwargs) -> _PilotEstimator:
    try:
        cls = ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None
    valid = cls._get_param_names()
    return cls(frame=frame, **{k: v for k, v in kwargs.items() if k in valid})
