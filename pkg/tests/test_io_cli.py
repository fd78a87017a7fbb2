import struct

import numpy as np
import pytest

from otfs_chest.channel import assemble_G, pilot_columns
from otfs_chest.cli import main
from otfs_chest.grid import ChannelState, FrameParams
from otfs_chest.io import frame_from_config, read_config, read_frame_csv, read_G, write_frame_csv, write_G


def test_G_dump_layout(tmp_path):
    G = (np.arange(36) + 1j * np.arange(36)[::-1]).reshape(6, 6)
    path = tmp_path / "g.bin"
    write_G(path, G, 3, 2)
    raw = path.read_bytes()
    assert raw[:6] == b"OTFSG1"
    assert struct.unpack("<ii", raw[6:14]) == (3, 2)
    assert np.frombuffer(raw[14:30], "<f4").tolist() == [0.0, 35.0, 1.0, 34.0]
    back, M, N = read_G(path)
    assert (M, N) == (3, 2)
    np.testing.assert_array_equal(back, G.astype(np.complex64))


def test_G_dump_rejects_bad_files(tmp_path):
    with pytest.raises(ValueError):
        write_G(tmp_path / "w", np.zeros((4, 4)), 3, 2)
    (tmp_path / "x").write_bytes(b"NOTG")
    with pytest.raises(ValueError):
        read_G(tmp_path / "x")
    (tmp_path / "y").write_bytes(b"OTFSG1" + struct.pack("<ii", 2, 2) + b"\0" * 8)
    with pytest.raises(ValueError):
        read_G(tmp_path / "y")


def test_config_parsing(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# frame\nM = 16\nN=8  # inline\ntau_max_us = 200000\ndelta_f = 1\nnu_max_hz = 0.25\n")
    cfg = read_config(path)
    assert cfg["M"] == "16" and cfg["N"] == "8"
    p = frame_from_config(cfg)
    assert (p.M, p.N, p.tau_max, p.M_tau) == (16, 8, pytest.approx(0.2), 5)


def test_frame_csv_round_trip(tmp_path, small_frame):
    x = np.random.default_rng(0).standard_normal(small_frame.MN) + 1j
    write_frame_csv(tmp_path / "f.csv", x, small_frame)
    np.testing.assert_array_equal(read_frame_csv(tmp_path / "f.csv", small_frame), x)
    (tmp_path / "bad.csv").write_text("99,0,1,0\n")
    with pytest.raises(ValueError):
        read_frame_csv(tmp_path / "bad.csv", small_frame)


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(
        "M = 16\nN = 8\ndelta_f = 1\ntau_max_us = 200000\nnu_max_hz = 0.25\n"
        "paths = 3\ntau_slope_us = 50000\nseed = 4\n"
    )
    return path


def test_cli_validate_oracle(small_cfg, capsys):
    assert main(["validate-oracle", "--config", str(small_cfg), "--q", "8,16,32"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "Q,relative_mismatch" and out[-1] == "# monotone = true"
    assert len(out) == 5


@pytest.mark.parametrize("scenario", ["two-path-coarse", "two-path-fine", "single-path"])
def test_cli_demo(tmp_path, scenario):
    out = tmp_path / "map.csv"
    assert main(["demo", "--scenario", scenario, "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "l,k,magnitude"
    M = {"two-path-coarse": 16, "two-path-fine": 64, "single-path": 64}[scenario]
    N = {"two-path-coarse": 16, "two-path-fine": 64, "single-path": 32}[scenario]
    assert len(rows) == 1 + M * N


def test_cli_demo_dumps(tmp_path):
    g, w = tmp_path / "g.bin", tmp_path / "w.iq"
    assert main(["demo", "--scenario", "two-path-coarse", "--out", str(tmp_path / "m.csv"), "--g-out", str(g), "--waveform-out", str(w), "--q", "2"]) == 0
    G, M, N = read_G(g)
    assert (M, N) == (16, 16) and G.shape == (256, 256)
    assert np.fromfile(w, "<f8").size % 2 == 0


def test_cli_estimate(tmp_path, aircraft_frame, capsys):
    p = aircraft_frame.replace(E_p=100.0 * aircraft_frame.MN)
    t, v = 2 * p.delay_resolution, p.doppler_resolution
    x = 0.9 * pilot_columns(t, v, p)[0]
    write_frame_csv(tmp_path / "rx.csv", x, p)
    out = tmp_path / "est.csv"
    args = ["estimate", "--frame", str(tmp_path / "rx.csv"), "--estimator", "mmle", "--psnr-db", "20", "--out", str(out), "--g-out", str(tmp_path / "g.bin")]
    assert main(args) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "h_re,h_im,tau_s,nu_hz"
    h_re, h_im, tau, nu = map(float, rows[1].split(","))
    assert (tau, nu) == (pytest.approx(t), pytest.approx(v))
    assert complex(h_re, h_im) == pytest.approx(0.9)
    G, M, N = read_G(tmp_path / "g.bin")
    assert (M, N) == (p.M, p.N) and G.shape == (p.MN, p.MN)
    assert main(["estimate", "--frame", str(tmp_path / "rx.csv"), "--estimator", "impulse", "--psnr-db", "20"]) == 0
    assert capsys.readouterr().out.startswith("h_re,h_im,tau_s,nu_hz")


def test_cli_sweep_and_rerun(tmp_path, monkeypatch):
    monkeypatch.setenv("OTFS_THREADS", "1")
    cfg = tmp_path / "sweep.cfg"
    out = tmp_path / "s.csv"
    cfg.write_text(f"M = 32\nN = 16\npsnr_grid_db = 10, 20\ntrials = 2\nestimators = tse,impulse\noutput_path = {out}\n")
    assert main(["sweep", "--config", str(cfg)]) == 0
    again = tmp_path / "again.csv"
    assert main(["sweep", "--config", str(out), "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_cli_complexity(small_cfg, capsys):
    cfg = small_cfg.parent / "cx.cfg"
    cfg.write_text("M = 64\nN = 32\ndelta_f = 30000\ntau_max_us = 7\nnu_max_hz = 1700\n")
    assert main(["complexity", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("estimator,variable")
    assert len(lines) == 7


def test_cli_reports_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("M = 4\nN = 4\nsweep_axis = sideways\n")
    assert main(["sweep", "--config", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err
