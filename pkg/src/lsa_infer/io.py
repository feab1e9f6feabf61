"""Serialization: trajectory binary records, CSV tables and JSON.

CSV output is locale independent: Python's ``repr`` of floats always uses
``'.'`` and rows end in ``'\\n'``.

Trajectory record layout, all little-endian::

    magic    4 bytes  b"LSAT"
    version  uint32
    d        uint32
    n        uint64
    seed     int64    (-1 when unknown)
    c0       float64
    gamma    float64
    k0       uint64
    theta0   d   x float64
    iterates n*d x float64 (row k holds theta_k)
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from lsa_infer.errors import LsaError

__all__ = [
    "write_trajectory_binary",
    "read_trajectory_binary",
    "trajectory_rows",
    "write_csv",
    "write_json",
]

_MAGIC = b"LSAT"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQqddQ")


def write_trajectory_binary(traj, path) -> None:
    s = traj.schedule
    seed = -1 if traj.seed is None else int(traj.seed)
    head = _HEADER.pack(_MAGIC, _VERSION, traj.dim, traj.n, seed, float(s.c0), float(s.gamma), int(s.k0))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.asarray(traj.theta0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.iterates, dtype="<f8").tobytes())


def read_trajectory_binary(path) -> dict:
    """Inverse of :func:`write_trajectory_binary`; returns a plain dict."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise LsaError(f"{path}: truncated trajectory header")
    magic, version, d, n, seed, c0, gamma, k0 = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise LsaError(f"{path}: not a trajectory record (version {_VERSION})")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != d + n * d:
        raise LsaError(f"{path}: expected {d + n * d} values, found {body.size}")
    return {
        "d": d, "n": n, "seed": None if seed < 0 else seed,
        "schedule": {"c0": c0, "gamma": gamma, "k0": k0},
        "theta0": body[:d].copy(),
        "iterates": body[d:].reshape(n, d).copy(),
    }


def trajectory_rows(traj) -> tuple[list[str], list[list]]:
    header = ["k"] + [f"theta_{i}" for i in range(traj.dim)]
    return header, [[k, *row] for k, row in enumerate(traj.iterates.tolist())]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, default=_default)
        fh.write("\n")
