import math

import numpy as np
import pytest

from otfs_chest.channel import assemble_G
from otfs_chest.estimators import PathEstimates, make_pilot_frame
from otfs_chest.grid import ChannelState, FrameParams
from otfs_chest.harness import (
    CSV_COLUMNS,
    SweepConfig,
    csv_body,
    measure_complexity,
    nmse,
    nmse_paths,
    psnr_to_pilot_energy,
    received_pilot,
    resolve_workers,
    run_oracle_validation,
    run_sweep,
    trial_rng,
)
from otfs_chest.io import read_config
from otfs_chest.oracle import oracle_end_to_end


def test_psnr_examples():
    assert psnr_to_pilot_energy(0, FrameParams(M=1, N=1)) == pytest.approx(1.0)
    assert psnr_to_pilot_energy(20, FrameParams(M=64, N=32)) == pytest.approx(204800.0)
    with pytest.raises(ValueError):
        psnr_to_pilot_energy(0, FrameParams(M=1, N=1), N0=0)


def test_psnr_round_trip_through_waveform_chain(small_frame):
    # identity channel: measured received pilot power over noise power per DDRE
    p = small_frame.replace(E_p=psnr_to_pilot_energy(12.0, small_frame))
    ch = ChannelState.from_arrays([1.0], [0.0], [0.0], normalized=True)
    x = make_pilot_frame(p).data
    rng = np.random.default_rng(0)
    noise = np.concatenate([oracle_end_to_end(x, ch, p, Q=2, N0=1.0, rng=rng) - x for _ in range(1000)])
    signal_power = np.sum(np.abs(x) ** 2) / p.MN
    measured = 10 * math.log10(signal_power / np.mean(np.abs(noise) ** 2))
    assert measured == pytest.approx(12.0, abs=0.2)


def test_nmse_examples(small_frame, three_paths):
    G = assemble_G(three_paths, small_frame)
    assert nmse(G, G) == 0
    assert nmse(G, np.zeros(G.shape)) == 1
    assert nmse(G, 2 * G.toarray()) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nmse(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        nmse(np.eye(3), np.eye(4))


def test_parametric_nmse_matches_dense(small_frame, three_paths):
    est = PathEstimates(h_hat=[0.7, 0.3j], tau_hat=[0.01, 0.07], nu_hat=[0.16, -0.1])
    G = assemble_G(three_paths, small_frame)
    G_hat = assemble_G(est, small_frame)
    assert nmse_paths(three_paths, est, small_frame) == pytest.approx(nmse(G, G_hat), rel=1e-9)


def test_zero_estimator_nmse_is_exactly_one(aircraft_frame):
    from otfs_chest.scenarios import AircraftScenarioConfig, aircraft_channel

    for seed in range(5):
        ch = aircraft_channel(AircraftScenarioConfig(), seed)
        assert nmse_paths(ch, PathEstimates(), aircraft_frame) == 1.0


def test_fast_noise_statistics(small_frame):
    ch = ChannelState.from_arrays([0.0], [0.0], [0.0])
    rng = np.random.default_rng(1)
    n = np.concatenate([received_pilot(ch, small_frame, 2.0, rng) for _ in range(100)])
    assert np.mean(np.abs(n) ** 2) == pytest.approx(small_frame.MN * 2.0, rel=0.05)
    assert abs(np.mean(n**2)) < 0.05 * small_frame.MN * 2.0  # circular


def test_trial_rng_streams_are_independent_of_order():
    a = trial_rng(3, 7).standard_normal(4)
    trial_rng(3, 0).standard_normal(100)
    np.testing.assert_array_equal(a, trial_rng(3, 7).standard_normal(4))
    assert not np.array_equal(a, trial_rng(3, 8).standard_normal(4))


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(trials=0)
    with pytest.raises(ValueError):
        SweepConfig(estimators=("omp",))
    with pytest.raises(ValueError):
        SweepConfig(sweep_axis="N")
    with pytest.raises(ValueError):
        SweepConfig.from_dict({"colour": "blue"})
    assert SweepConfig(psnr_grid_db=(0, 10)).axis_values == (0, 10)


def test_config_round_trip(tmp_path):
    cfg = SweepConfig(sweep_axis="n_nu", axis_values=(1, 2), trials=3, base_seed=11, psnr_grid_db=(20,))
    assert SweepConfig.from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "c.txt"
    path.write_text("# comment\n" + "\n".join(f"{k} = {v}" for k, v in cfg.to_dict().items()) + "\n")
    assert SweepConfig.from_file(path) == cfg


def small_sweep(tmp_path, **kw):
    base = dict(
        frame=FrameParams(M=32, N=16, delta_f=30e3, tau_max=7e-6, nu_max=1700.0),
        psnr_grid_db=(10.0, 20.0), trials=3, base_seed=5, output_path=str(tmp_path / "out.csv"),
    )
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_writes_self_describing_csv(tmp_path):
    cfg = small_sweep(tmp_path)
    records = run_sweep(cfg, workers=1)
    text = (tmp_path / "out.csv").read_text()
    assert text.startswith("# otfs-chest sweep")
    assert "# rng = numpy PCG64" in text and "# version = " in text
    body = csv_body(text).splitlines()
    assert body[0] == ",".join(CSV_COLUMNS)
    assert len(body) == 1 + 2 * 3 == 1 + len(records)
    assert all(math.isfinite(r.nmse_db) and r.trials == 3 and r.error == "" for r in records)
    # wall time is opt-in so that bodies stay byte-reproducible
    assert all(r.wall_time_s is None for r in records)
    assert SweepConfig.from_dict(read_config(tmp_path / "out.csv")) == cfg


def test_sweep_serial_parallel_and_rerun_identical(tmp_path):
    cfg = small_sweep(tmp_path, trials=4)
    run_sweep(cfg, workers=1, output_path=str(tmp_path / "a.csv"))
    run_sweep(cfg, workers=2, output_path=str(tmp_path / "b.csv"))
    rerun = SweepConfig.from_file(tmp_path / "a.csv")
    run_sweep(rerun, workers=1, output_path=str(tmp_path / "c.csv"))
    a, b, c = ((tmp_path / f"{n}.csv").read_bytes() for n in "abc")
    assert a == b == c


def test_failed_trials_are_recorded(tmp_path):
    # the joint ML search refuses MN > 512, so every trial fails
    cfg = small_sweep(
        tmp_path, frame=FrameParams(M=64, N=16, delta_f=30e3, tau_max=7e-6, nu_max=1700.0),
        estimators=("ml_reference", "tse"), psnr_grid_db=(20.0,), trials=2,
    )
    rec = run_sweep(cfg, workers=1, write=False)
    ml, tse = rec
    assert ml.error.startswith("2 failed: ValueError") and math.isnan(ml.nmse_db)
    assert tse.error == "" and math.isfinite(tse.nmse_db)


def test_wall_time_opt_in(tmp_path):
    rec = run_sweep(small_sweep(tmp_path, record_wall_time=True, trials=1), workers=1, write=False)
    assert all(r.wall_time_s > 0 for r in rec)


def test_sweep_axes(tmp_path):
    cfg = small_sweep(tmp_path, sweep_axis="N", axis_values=(8, 16), estimators=("tse",), trials=2)
    rec = run_sweep(cfg, workers=1, write=False)
    assert [r.axis_value for r in rec] == [8, 16]
    frame, est, psnr = small_sweep(tmp_path, sweep_axis="epsilon", axis_values=(1e-3,)).point(1e-3)
    assert est.epsilon == 1e-3 and psnr == 10.0
    assert frame.E_p == pytest.approx(psnr_to_pilot_energy(10.0, frame))


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv("OTFS_THREADS", "1")
    assert resolve_workers(8) == 1
    monkeypatch.delenv("OTFS_THREADS")
    assert resolve_workers(3) == 3


def test_oracle_validation_exact_for_static_channel(small_frame):
    ch = ChannelState.from_arrays([1.0], [0.0], [0.0], normalized=True)
    report = run_oracle_validation(small_frame, (1, 4, 8), ch)
    assert max(report.mismatch) <= 1e-9 and report.ok


def test_oracle_validation_converges(small_frame):
    report = run_oracle_validation(small_frame, (8, 16, 32), seed=2, frame="random")
    assert report.monotone and report.mismatch[-1] <= 1e-2
    assert report.table().splitlines()[0] == "Q,relative_mismatch"


def test_complexity_growth():
    rows = {(r.estimator, r.variable): r for e in ("mmle", "tse") for r in measure_complexity(e)}
    assert 1.7 <= rows["mmle", "m_tau"].hypothesis_ratio <= 2.3
    assert abs(rows["tse", "m_tau"].doppler_step_ratio - 1) < 0.1
    assert all(r.within_tolerance for r in rows.values())
