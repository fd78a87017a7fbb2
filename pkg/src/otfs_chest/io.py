"""File formats: key = value configs, DD frame CSVs and the G binary dump."""

from __future__ import annotations

import configparser
import csv
import struct
from pathlib import Path

import numpy as np

from .grid import FrameParams

G_MAGIC = b"OTFSG1"
SWEEP_BANNER = "# otfs-chest sweep"
CONFIG_MARKER = "# config:"


def read_config(path) -> dict[str, str]:
    """Parse a plain ``key = value`` file (``#`` comments allowed).

    A sweep CSV is accepted too: its header block carries the config that
    produced it, so a run can be repeated from its own output.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if lines and lines[0].startswith(SWEEP_BANNER):
        body = []
        in_config = False
        for line in lines:
            if not line.startswith("#"):
                break
            if line.strip() == CONFIG_MARKER:
                in_config = True
            elif in_config:
                body.append(line[1:].strip())
        text = "\n".join(body)
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    return dict(parser["config"])


def parse_list(value: str, kind=float) -> list:
    return [kind(v) for v in value.replace(";", ",").split(",") if v.strip()]


def frame_from_config(cfg: dict[str, str]) -> FrameParams:
    """Frame numerology from config keys (delays in microseconds, Doppler in Hz)."""
    return FrameParams(
        M=int(cfg.get("M", 64)),
        N=int(cfg.get("N", 32)),
        delta_f=float(cfg.get("delta_f", 30e3)),
        E_p=float(cfg.get("E_p", 1.0)),
        l_p=int(cfg["l_p"]) if "l_p" in cfg else None,
        k_p=int(cfg["k_p"]) if "k_p" in cfg else None,
        tau_max=float(cfg.get("tau_max_us", 7.0)) * 1e-6,
        nu_max=float(cfg.get("nu_max_hz", 1700.0)),
    )


def write_G(path, G: np.ndarray, M: int, N: int) -> None:
    """Dump an ``MN x MN`` channel matrix.

    Layout: ``OTFSG1``, int32 ``M`` and ``N``, then the matrix row-major as
    complex64, all little-endian.
    """
    G = np.asarray(G)
    if G.shape != (M * N, M * N):
        raise ValueError(f"G has shape {G.shape}, expected {(M * N, M * N)} for M={M}, N={N}")
    with open(path, "wb") as fh:
        fh.write(G_MAGIC)
        fh.write(struct.pack("<ii", M, N))
        fh.write(np.ascontiguousarray(G, dtype="<c8").tobytes())


def read_G(path) -> tuple[np.ndarray, int, int]:
    """Inverse of ``write_G``: returns ``(G, M, N)``."""
    with open(path, "rb") as fh:
        if fh.read(len(G_MAGIC)) != G_MAGIC:
            raise ValueError(f"{path}: not an OTFSG1 file")
        M, N = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<c8")
    MN = M * N
    if M < 1 or N < 1 or data.size != MN * MN:
        raise ValueError(f"{path}: expected {MN * MN} entries for M={M}, N={N}, found {data.size}")
    return data.reshape(MN, MN), M, N


def read_frame_csv(path, params: FrameParams) -> np.ndarray:
    """Read ``l,k,re,im`` rows into a flat column-wise DD frame; missing cells are zero."""
    x = np.zeros(params.MN, dtype=complex)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                l, k = int(row[0]), int(row[1])
            except ValueError:
                continue  # header line
            if not (0 <= l < params.M and 0 <= k < params.N):
                raise ValueError(f"DDRE ({l}, {k}) outside the {params.M} x {params.N} frame")
            x[k * params.M + l] = complex(float(row[2]), float(row[3]))
    return x


def write_frame_csv(path, x: np.ndarray, params: FrameParams) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "k", "re", "im"])
        for k in range(params.N):
            for l in range(params.M):
                v = x[k * params.M + l]
                w.writerow([l, k, repr(float(v.real)), repr(float(v.imag))])
