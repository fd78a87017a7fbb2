"""Metrics, Monte Carlo NMSE sweeps, oracle validation and operation counting."""

from __future__ import annotations

import csv
import io as _io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .channel import EffectiveChannelMatrix, assemble_G, path_gram, pilot_columns
from .estimators import (
    EstimatorConfig,
    PathEstimates,
    impulse_baseline,
    make_pilot_frame,
    ml_reference,
    mmle_estimate,
    tse_estimate,
)
from .grid import ChannelState, FrameParams
from .io import CONFIG_MARKER, SWEEP_BANNER, frame_from_config, parse_list, read_config
from .oracle import oracle_end_to_end
from .scenarios import AircraftScenarioConfig, aircraft_channel

logger = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("mmle", "tse", "impulse", "ml_reference")
SWEEP_AXES = ("psnr", "N", "m_tau", "n_nu", "epsilon")
CSV_COLUMNS = ("axis", "estimator", "nmse_db", "mean_iters", "mean_hypotheses", "wall_time_s", "trials", "seed", "error")
RNG_NAME = "numpy PCG64 seeded by SeedSequence([base_seed, trial_index])"


# metrics ---------------------------------------------------------------------


def psnr_to_pilot_energy(psnr_db: float, params: FrameParams, N0: float = 1.0) -> float:
    """Pilot energy giving the requested pilot SNR ``E_p / (M N N0)``."""
    if not N0 > 0:
        raise ValueError("N0 must be positive")
    return 10.0 ** (psnr_db / 10.0) * params.M * params.N * N0


def nmse(G, G_hat) -> float:
    """``||G - G_hat||_F^2 / ||G||_F^2`` for one trial."""
    A = G.toarray() if isinstance(G, EffectiveChannelMatrix) else np.asarray(G)
    B = G_hat.toarray() if isinstance(G_hat, EffectiveChannelMatrix) else np.asarray(G_hat)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    ref = np.vdot(A, A).real
    if ref == 0:
        raise ValueError("reference channel matrix is zero")
    D = A - B
    return float(np.vdot(D, D).real / ref)


def nmse_paths(channel: ChannelState, estimates: PathEstimates, params: FrameParams) -> float:
    """Same quantity as :func:`nmse`, computed from path parameters without forming G."""
    h = channel.h
    h_hat = np.asarray(estimates.h_hat, complex)
    tau = np.concatenate([channel.tau, np.asarray(estimates.tau_hat, float)])
    nu = np.concatenate([channel.nu, np.asarray(estimates.nu_hat, float)])
    K = path_gram(tau, nu, params)
    c = np.concatenate([h, -h_hat])
    P = len(h)
    ref = float(np.real(h.conj() @ K[:P, :P] @ h))
    if ref <= 0:
        raise ValueError("reference channel matrix is zero")
    err = float(np.real(c.conj() @ K @ c))
    return max(err, 0.0) / ref


def received_pilot(
    channel: ChannelState,
    params: FrameParams,
    N0: float,
    rng: np.random.Generator,
    noise_path: str = "fast",
    Q: int = 32,
) -> np.ndarray:
    """Received DD pilot frame.

    ``"fast"`` adds i.i.d. ``CN(0, M N N0)`` noise to the closed-form
    response; ``"oracle"`` runs the sampled-waveform chain.
    """
    if noise_path == "oracle":
        return oracle_end_to_end(make_pilot_frame(params).data, channel, params, Q=Q, N0=N0, rng=rng)
    if noise_path != "fast":
        raise ValueError(f"unknown noise path {noise_path!r}")
    x = channel.h @ pilot_columns(channel.tau, channel.nu, params)
    if N0 > 0:
        sigma = math.sqrt(params.MN * N0 / 2)
        x = x + sigma * (rng.standard_normal(params.MN) + 1j * rng.standard_normal(params.MN))
    return x


def trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, trial_index])))


def run_estimator(name: str, x: np.ndarray, params: FrameParams, config: EstimatorConfig, N0: float = 1.0, threshold_sigma: float = 3.0, L: int = 1) -> PathEstimates:
    if name == "mmle":
        return mmle_estimate(x, config, params)
    if name == "tse":
        return tse_estimate(x, config, params)
    if name == "impulse":
        return impulse_baseline(x, params, threshold_sigma, N0)
    if name == "ml_reference":
        return ml_reference(x, params, L=L, m_tau=config.m_tau, n_nu=config.n_nu)
    raise ValueError(f"unknown estimator {name!r}")


# sweeps ----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """One Monte Carlo experiment: a sweep axis crossed with a set of estimators.

    Axes other than ``psnr`` run at the first entry of ``psnr_grid_db``.
    """

    frame: FrameParams = field(default_factory=lambda: FrameParams(M=64, N=32, delta_f=30e3, tau_max=7e-6, nu_max=1700.0))
    scenario: AircraftScenarioConfig = field(default_factory=AircraftScenarioConfig)
    estimators: tuple = ("mmle", "tse", "impulse")
    psnr_grid_db: tuple = (20.0,)
    sweep_axis: str = "psnr"
    axis_values: tuple = ()
    trials: int = 200
    base_seed: int = 0
    oversampling_Q: int = 32
    output_path: str = "sweep.csv"
    noise_path: str = "fast"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    impulse_threshold_sigma: float = 3.0
    record_wall_time: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown or not self.estimators:
            raise ValueError(f"unrecognised estimators {unknown}; choose from {ESTIMATOR_NAMES}")
        if not self.axis_values:
            if self.sweep_axis != "psnr":
                raise ValueError("axis_values must be non-empty")
            object.__setattr__(self, "axis_values", tuple(self.psnr_grid_db))
        if not self.psnr_grid_db:
            raise ValueError("psnr_grid_db must be non-empty")
        if self.noise_path not in ("fast", "oracle"):
            raise ValueError("noise_path must be 'fast' or 'oracle'")

    @classmethod
    def from_dict(cls, cfg: dict[str, str]) -> "SweepConfig":
        """Build from parsed ``key = value`` pairs; unknown keys are rejected."""
        known = {
            "M", "N", "delta_f", "E_p", "l_p", "k_p", "tau_max_us", "nu_max_hz",
            "paths", "rice_k_db", "tau_slope_us", "normalization", "seed", "base_seed",
            "estimators", "psnr_grid_db", "sweep_axis", "axis_values", "trials",
            "oversampling_Q", "output_path", "noise_path", "m_tau", "n_nu", "epsilon",
            "T_max", "peak_search", "truncated", "gain_normalization",
            "impulse_threshold_sigma", "record_wall_time",
        }
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        frame = frame_from_config(cfg)
        scenario = AircraftScenarioConfig(
            P=int(cfg.get("paths", 5)),
            K_dB=float(cfg.get("rice_k_db", 15.0)),
            tau_max=frame.tau_max,
            tau_slope=float(cfg.get("tau_slope_us", 1.0)) * 1e-6,
            nu_max=frame.nu_max,
            normalization=cfg.get("normalization", "per-draw"),
        )
        est = EstimatorConfig(
            m_tau=int(cfg.get("m_tau", 6)),
            n_nu=int(cfg.get("n_nu", 6)),
            epsilon=float(cfg.get("epsilon", 1e-4)),
            T_max=int(cfg.get("T_max", 15)),
            truncated=_bool(cfg.get("truncated", "true")),
            peak_search=cfg.get("peak_search", "full"),
            gain_normalization=cfg.get("gain_normalization", "column"),
        )
        return cls(
            frame=frame,
            scenario=scenario,
            estimators=tuple(s.strip() for s in cfg.get("estimators", "mmle,tse,impulse").split(",") if s.strip()),
            psnr_grid_db=tuple(parse_list(cfg.get("psnr_grid_db", "20"))),
            sweep_axis=cfg.get("sweep_axis", "psnr"),
            axis_values=tuple(parse_list(cfg.get("axis_values", ""))),
            trials=int(cfg.get("trials", 200)),
            base_seed=int(cfg.get("base_seed", cfg.get("seed", 0))),
            oversampling_Q=int(cfg.get("oversampling_Q", 32)),
            output_path=cfg.get("output_path", "sweep.csv"),
            noise_path=cfg.get("noise_path", "fast"),
            estimator=est,
            impulse_threshold_sigma=float(cfg.get("impulse_threshold_sigma", 3.0)),
            record_wall_time=_bool(cfg.get("record_wall_time", "false")),
        )

    @classmethod
    def from_file(cls, path) -> "SweepConfig":
        return cls.from_dict(read_config(path))

    def to_dict(self) -> dict[str, str]:
        """Canonical ``key = value`` form; ``from_dict(to_dict())`` rebuilds the config."""
        f, s, e = self.frame, self.scenario, self.estimator
        return {
            "M": str(f.M), "N": str(f.N), "delta_f": repr(f.delta_f), "E_p": repr(f.E_p),
            "l_p": str(f.l_p), "k_p": str(f.k_p),
            "tau_max_us": repr(f.tau_max * 1e6), "nu_max_hz": repr(f.nu_max),
            "paths": str(s.P), "rice_k_db": repr(s.K_dB), "tau_slope_us": repr(s.tau_slope * 1e6),
            "normalization": s.normalization,
            "estimators": ",".join(self.estimators),
            "psnr_grid_db": ",".join(repr(float(v)) for v in self.psnr_grid_db),
            "sweep_axis": self.sweep_axis,
            "axis_values": ",".join(repr(float(v)) for v in self.axis_values),
            "trials": str(self.trials), "base_seed": str(self.base_seed),
            "oversampling_Q": str(self.oversampling_Q), "output_path": self.output_path,
            "noise_path": self.noise_path,
            "m_tau": str(e.m_tau), "n_nu": str(e.n_nu), "epsilon": repr(e.epsilon), "T_max": str(e.T_max),
            "truncated": str(e.truncated).lower(), "peak_search": e.peak_search,
            "gain_normalization": e.gain_normalization,
            "impulse_threshold_sigma": repr(self.impulse_threshold_sigma),
            "record_wall_time": str(self.record_wall_time).lower(),
        }

    def point(self, axis_value: float) -> tuple[FrameParams, EstimatorConfig, float]:
        """Frame, estimator settings and PSNR at one axis value."""
        frame, est, psnr = self.frame, self.estimator, float(self.psnr_grid_db[0])
        if self.sweep_axis == "psnr":
            psnr = float(axis_value)
        elif self.sweep_axis == "N":
            frame = frame.replace(N=int(axis_value))
        elif self.sweep_axis == "m_tau":
            est = replace(est, m_tau=int(axis_value))
        elif self.sweep_axis == "n_nu":
            est = replace(est, n_nu=int(axis_value))
        elif self.sweep_axis == "epsilon":
            est = replace(est, epsilon=float(axis_value))
        frame = frame.replace(E_p=psnr_to_pilot_energy(psnr, frame))
        return frame, est, psnr


def _bool(value: str) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class SweepRecord:
    axis_value: float
    estimator: str
    nmse_db: float
    mean_iterations: float
    mean_hypothesis_evaluations: float
    wall_time_s: float | None
    trials: int
    seed: int
    error: str = ""

    def row(self) -> list[str]:
        wall = "" if self.wall_time_s is None else f"{self.wall_time_s:.3f}"
        return [
            _fmt_axis(self.axis_value), self.estimator, f"{self.nmse_db:.6f}",
            f"{self.mean_iterations:.4f}", f"{self.mean_hypothesis_evaluations:.2f}",
            wall, str(self.trials), str(self.seed), self.error,
        ]


def _fmt_axis(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class _TrialResult:
    nmse: float
    iterations: int
    hypotheses: int
    seconds: float
    error: str = ""


def _run_trial(cfg: SweepConfig, axis_value: float, trial_index: int) -> list[_TrialResult]:
    """All estimators on one channel and noise draw (common random numbers)."""
    params, est_cfg, _ = cfg.point(axis_value)
    rng = trial_rng(cfg.base_seed, trial_index)
    channel = aircraft_channel(cfg.scenario, rng)
    x = received_pilot(channel, params, 1.0, rng, cfg.noise_path, cfg.oversampling_Q)
    out = []
    for name in cfg.estimators:
        t0 = time.perf_counter()
        try:
            est = run_estimator(name, x, params, est_cfg, 1.0, cfg.impulse_threshold_sigma, L=min(len(channel), 2))
            value = nmse_paths(channel, est, params)
            out.append(_TrialResult(value, est.iterations_run, est.counters["hypotheses"], time.perf_counter() - t0))
        except Exception as exc:  # recorded per trial, never dropped silently
            logger.warning("trial %d estimator %s failed: %s", trial_index, name, exc)
            out.append(_TrialResult(math.nan, 0, 0, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
    return out


def _trial_star(args):
    return _run_trial(*args)


def resolve_workers(requested: int | None = None) -> int:
    """Worker count: the request (default: CPU count) capped by ``OTFS_THREADS``."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("OTFS_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _aggregate(cfg: SweepConfig, axis_value: float, name: str, results: list[_TrialResult]) -> SweepRecord:
    ok = [r for r in results if not r.error]
    failed = [r for r in results if r.error]
    error = f"{len(failed)} failed: {failed[0].error}" if failed else ""
    if ok:
        mean = math.fsum(r.nmse for r in ok) / len(ok)
        nmse_db = 10 * math.log10(mean) if mean > 0 else -math.inf
        iters = math.fsum(r.iterations for r in ok) / len(ok)
        hyps = math.fsum(r.hypotheses for r in ok) / len(ok)
    else:
        nmse_db = iters = hyps = math.nan
    wall = math.fsum(r.seconds for r in results) if cfg.record_wall_time else None
    return SweepRecord(axis_value, name, nmse_db, iters, hyps, wall, cfg.trials, cfg.base_seed, error)


def run_sweep(cfg: SweepConfig, workers: int | None = None, output_path: str | None = None, write: bool = True) -> list[SweepRecord]:
    """Run every axis value x estimator over ``cfg.trials`` seeded trials.

    Trial ``i`` always draws from ``(base_seed, i)``, so serial and parallel
    runs aggregate identical numbers in the same order.
    """
    workers = resolve_workers(workers)
    jobs = [(cfg, v, i) for v in cfg.axis_values for i in range(cfg.trials)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_trial_star(j) for j in jobs]
    records = []
    for a, v in enumerate(cfg.axis_values):
        block = results[a * cfg.trials:(a + 1) * cfg.trials]
        for e, name in enumerate(cfg.estimators):
            records.append(_aggregate(cfg, v, name, [trial[e] for trial in block]))
    if write:
        path = output_path or cfg.output_path
        with open(path, "w", newline="") as fh:
            fh.write(sweep_csv(cfg, records))
    return records


def sweep_header(cfg: SweepConfig) -> str:
    lines = [SWEEP_BANNER, f"# version = {__version__}", f"# rng = {RNG_NAME}", CONFIG_MARKER]
    lines += [f"# {k} = {v}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def sweep_csv(cfg: SweepConfig, records: list[SweepRecord]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return sweep_header(cfg) + buf.getvalue()


def csv_body(text: str) -> str:
    """The CSV without its ``#`` header block."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


# oracle validation -----------------------------------------------------------


@dataclass(frozen=True)
class OracleReport:
    Q: tuple
    mismatch: tuple

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.mismatch, self.mismatch[1:]))

    @property
    def ok(self) -> bool:
        # an exact chain (mismatch at round-off everywhere) counts as converged
        return self.monotone or max(self.mismatch) <= 1e-9

    def table(self) -> str:
        rows = ["Q,relative_mismatch"] + [f"{q},{m:.6e}" for q, m in zip(self.Q, self.mismatch)]
        rows.append(f"# monotone = {str(self.monotone).lower()}")
        return "\n".join(rows) + "\n"


def run_oracle_validation(
    params: FrameParams,
    Qs=(8, 16, 32),
    channel: ChannelState | AircraftScenarioConfig | None = None,
    seed: int = 0,
    frame: str = "pilot",
) -> OracleReport:
    """Relative Frobenius mismatch between oracle reception and ``G x`` for each ``Q``.

    ``frame="random"`` transmits a seeded complex Gaussian DD frame instead of
    the pilot.
    """
    rng = np.random.default_rng(seed)
    if channel is None or isinstance(channel, AircraftScenarioConfig):
        # same slope-to-spread ratio as the aircraft defaults
        scen = channel or AircraftScenarioConfig(tau_max=params.tau_max, tau_slope=max(params.tau_max, params.T / params.M) / 7, nu_max=params.nu_max)
        channel = aircraft_channel(scen, rng)
    if frame == "pilot":
        x = make_pilot_frame(params).data
        predicted = channel.h @ pilot_columns(channel.tau, channel.nu, params)
    else:
        x = (rng.standard_normal(params.MN) + 1j * rng.standard_normal(params.MN)) / math.sqrt(2)
        predicted = assemble_G(channel, params) @ x
    ref = np.linalg.norm(predicted)
    mism = []
    for Q in Qs:
        y = oracle_end_to_end(x, channel, params, Q=Q)
        mism.append(float(np.linalg.norm(y - predicted) / ref))
    report = OracleReport(tuple(Qs), tuple(mism))
    if not report.ok:
        logger.error("oracle mismatch does not decrease with Q: %s", mism)
    return report


# operation counts ------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityRow:
    estimator: str
    variable: str
    base: int
    doubled: int
    measured_ratio: float
    table_ratio: float
    hypothesis_ratio: float
    doppler_step_ratio: float | None

    @property
    def within_tolerance(self) -> bool:
        return abs(self.measured_ratio / self.table_ratio - 1) <= 0.3


def table_one_order(estimator: str, params: FrameParams, config: EstimatorConfig) -> float:
    """Per-path operation order of the two refined-grid estimators."""
    Mt, Nn = params.M_tau, params.N_nu
    if estimator == "mmle":
        return config.m_tau * config.n_nu * Mt * Nn
    if estimator == "tse":
        return config.m_tau * Mt + config.n_nu * Nn + Mt * Nn
    raise ValueError(f"no operation order for {estimator!r}")


def operation_counts(estimator: str, params: FrameParams, config: EstimatorConfig, x: np.ndarray) -> dict[str, float]:
    """Per-iteration counters of one run.

    ``total`` is the number of multiply-accumulates spent on hypothesis
    scoring plus DDREs visited by the peak search.
    """
    est = run_estimator(estimator, x, params, config)
    it = max(est.iterations_run, 1)
    c = est.counters
    return {
        "iterations": est.iterations_run,
        "hypotheses": c["hypotheses"] / it,
        "inner_product_elements": c["inner_product_elements"] / it,
        "doppler_step_elements": c["doppler_step_elements"] / it,
        "peak_elements": c["peak_elements"] / it,
        "total": (c["inner_product_elements"] + c["peak_elements"]) / it,
    }


def measure_complexity(
    estimator: str,
    params: FrameParams | None = None,
    config: EstimatorConfig | None = None,
    variables=("m_tau", "n_nu", "M_tau"),
    psnr_db: float = 20.0,
    seed: int = 0,
) -> list[ComplexityRow]:
    """Double each variable in turn and compare count growth with the expected order.

    Peak search is restricted to the support region so that every counted
    step scales with the region size.
    """
    params = params or FrameParams(M=64, N=32, delta_f=30e3, tau_max=7e-6, nu_max=1700.0)
    config = replace(config or EstimatorConfig(), peak_search="support")
    params = params.replace(E_p=psnr_to_pilot_energy(psnr_db, params))
    rng = np.random.default_rng(seed)
    channel = aircraft_channel(AircraftScenarioConfig(tau_max=params.tau_max, nu_max=params.nu_max), rng)
    x = received_pilot(channel, params, 1.0, rng)
    base = operation_counts(estimator, params, config, x)
    rows = []
    for var in variables:
        p2, c2 = params, config
        if var == "m_tau":
            c2 = replace(config, m_tau=2 * config.m_tau)
            b, d = config.m_tau, c2.m_tau
        elif var == "n_nu":
            c2 = replace(config, n_nu=2 * config.n_nu)
            b, d = config.n_nu, c2.n_nu
        elif var == "M_tau":
            # largest delay spread giving twice as many support rows
            p2 = params.replace(tau_max=(2 * params.M_tau - 1) / (params.M * params.delta_f))
            b, d = params.M_tau, p2.M_tau
        else:
            raise ValueError(f"unknown variable {var!r}")
        doubled = operation_counts(estimator, p2, c2, x)
        dopp = None
        if base["doppler_step_elements"]:
            dopp = doubled["doppler_step_elements"] / base["doppler_step_elements"]
        rows.append(ComplexityRow(
            estimator, var, b, d,
            doubled["total"] / base["total"],
            table_one_order(estimator, p2, c2) / table_one_order(estimator, params, config),
            doubled["hypotheses"] / base["hypotheses"],
            dopp,
        ))
    return rows


def complexity_table(rows: list[ComplexityRow]) -> str:
    out = ["estimator,variable,base,doubled,measured_ratio,expected_ratio,hypothesis_ratio,doppler_step_ratio,within_30pct"]
    for r in rows:
        dopp = "" if r.doppler_step_ratio is None else f"{r.doppler_step_ratio:.4f}"
        out.append(f"{r.estimator},{r.variable},{r.base},{r.doubled},{r.measured_ratio:.4f},{r.table_ratio:.4f},{r.hypothesis_ratio:.4f},{dopp},{str(r.within_tolerance).lower()}")
    return "\n".join(out) + "\n"
