"""On-disk formats.

Field snapshot (``.nsf``), all integers little-endian::

    0   4 bytes   magic b"NSAF"
    4   uint16    format version (1)
    6   uint32    header length H
    10  H bytes   UTF-8 JSON header: {"box", "modes", "code_version", ...}
    10+H          M x 3 complex128 (little-endian): the coefficient triple of
                  each wavevector in header["modes"], in order

``modes`` lists the canonical retained wavevectors ``[k1, k2, k3]``; the
coefficients at ``-k`` are the complex conjugates and are not stored.

Trajectory (``.nst``) uses the same preamble with magic b"NSAT". Its
header adds ``params`` (nu, alpha), ``config`` and ``n_snapshots``. The
body is the forcing block (M x 3 complex128) followed by ``n_snapshots``
records of one float64 time and M x 3 complex128 coefficients.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import SolverConfig, Trajectory
from .spectral import BoxSpec, PhysParams, SpectralField, _fill_conjugate_plane

FORMAT_VERSION = 1
FIELD_MAGIC = b"NSAF"
TRAJ_MAGIC = b"NSAT"
_PREAMBLE = struct.Struct("<4sHI")
_DTYPE = np.dtype("<c16")


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str):
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def config_hash(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def mode_list(box: BoxSpec) -> np.ndarray:
    basis = box.eigenbasis
    return basis.kint[::4]


def _pack_coeffs(box, c) -> bytes:
    k = mode_list(box)
    n = box.n
    vals = c[..., :, k[:, 0] % n, k[:, 1] % n, k[:, 2]]  # (..., 3, M)
    return np.ascontiguousarray(np.swapaxes(vals, -1, -2), dtype=_DTYPE).tobytes()


def _unpack_coeffs(box, raw, count=None) -> np.ndarray:
    k = mode_list(box)
    m = len(k)
    vals = np.frombuffer(raw, dtype=_DTYPE)
    lead = () if count is None else (count,)
    vals = vals.reshape(lead + (m, 3))
    c = np.zeros(lead + box.shape, dtype=complex)
    n = box.n
    c[..., :, k[:, 0] % n, k[:, 1] % n, k[:, 2]] = np.swapaxes(vals, -1, -2)
    return _fill_conjugate_plane(c)


def _preamble(magic, header: dict) -> bytes:
    h = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREAMBLE.pack(magic, FORMAT_VERSION, len(h)) + h


def _read_preamble(buf: bytes, magic):
    if len(buf) < _PREAMBLE.size:
        raise FormatError("file too short")
    got, version, hlen = _PREAMBLE.unpack_from(buf)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    start = _PREAMBLE.size
    header = json.loads(buf[start : start + hlen].decode("utf-8"))
    return header, start + hlen


def field_to_bytes(u: SpectralField) -> bytes:
    header = {
        "box": u.box.to_dict(),
        "modes": mode_list(u.box).tolist(),
        "code_version": __version__,
    }
    return _preamble(FIELD_MAGIC, header) + _pack_coeffs(u.box, u.coeffs)


def field_from_bytes(buf: bytes) -> SpectralField:
    header, off = _read_preamble(buf, FIELD_MAGIC)
    box = BoxSpec.from_dict(header["box"])
    if header["modes"] != mode_list(box).tolist():
        raise FormatError("mode list does not match the box's canonical ordering")
    if len(buf) - off != len(header["modes"]) * 3 * _DTYPE.itemsize:
        raise FormatError("coefficient block length disagrees with the mode list")
    return SpectralField(box, _unpack_coeffs(box, buf[off:]))


def write_field(path, u: SpectralField):
    atomic_write(path, field_to_bytes(u))


def read_field(path) -> SpectralField:
    return field_from_bytes(Path(path).read_bytes())


def trajectory_to_bytes(traj: Trajectory, extra: dict | None = None) -> bytes:
    box = traj.box
    header = {
        "box": box.to_dict(),
        "modes": mode_list(box).tolist(),
        "params": {"nu": traj.params.nu, "alpha": traj.params.alpha},
        "config": traj.config.to_dict(),
        "n_snapshots": len(traj),
        "code_version": __version__,
    }
    if extra:
        header.update(extra)
    out = io.BytesIO()
    out.write(_preamble(TRAJ_MAGIC, header))
    out.write(_pack_coeffs(box, traj.params.forcing.coeffs))
    for t, c in zip(traj.times, traj.coeffs):
        out.write(struct.pack("<d", float(t)))
        out.write(_pack_coeffs(box, c))
    return out.getvalue()


def trajectory_from_bytes(buf: bytes) -> Trajectory:
    header, off = _read_preamble(buf, TRAJ_MAGIC)
    box = BoxSpec.from_dict(header["box"])
    if header["modes"] != mode_list(box).tolist():
        raise FormatError("mode list does not match the box's canonical ordering")
    m = len(header["modes"])
    block = m * 3 * _DTYPE.itemsize
    forcing = SpectralField(box, _unpack_coeffs(box, buf[off : off + block]))
    off += block
    nt = int(header["n_snapshots"])
    rec = np.dtype([("t", "<f8"), ("c", _DTYPE, (m * 3,))])
    if len(buf) != off + nt * rec.itemsize:
        raise FormatError(f"expected {nt} snapshots, file length disagrees")
    body = np.frombuffer(buf, dtype=rec, count=nt, offset=off)
    coeffs = _unpack_coeffs(box, body["c"].tobytes(), count=nt)
    params = PhysParams(header["params"]["nu"], header["params"]["alpha"], forcing)
    return Trajectory(body["t"].copy(), coeffs, params, SolverConfig.from_dict(header["config"]))


def write_trajectory(path, traj: Trajectory, extra=None):
    atomic_write(path, trajectory_to_bytes(traj, extra))


def read_trajectory(path) -> Trajectory:
    return trajectory_from_bytes(Path(path).read_bytes())


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory) -> str:
    """Columns t, |w|, ||w||, cumulative energy-balance residual."""
    from .dynamics import energy_equality_residual

    cum = np.concatenate([[0.0], np.cumsum(energy_equality_residual(traj))])
    rows = zip(traj.times, np.sqrt(traj.energy), np.sqrt(traj.enstrophy), cum)
    return csv_text(["t", "norm_H", "norm_V", "energy_residual_cumulative"], rows)


def moment_csv(rows) -> str:
    """rows of (t, functional id, value)."""
    return csv_text(["t", "functional", "value"], rows)


def write_manifest(path, members, weights, sampler: dict, seed: int, extra: dict | None = None):
    doc = {
        "format": "nsalpha-ensemble-manifest",
        "version": FORMAT_VERSION,
        "code_version": __version__,
        "seed": int(seed),
        "sampler": sampler,
        "members": [{"file": str(f), "weight": float(w)} for f, w in zip(members, weights)],
    }
    if extra:
        doc.update(extra)
    atomic_write(path, dumps_json(doc))
    return doc


def read_manifest(path):
    """Load a manifest and its member trajectories (paths relative to it)."""
    from .measures import EnsembleMeasure

    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != "nsalpha-ensemble-manifest":
        raise FormatError("not an ensemble manifest")
    members = tuple(read_trajectory(path.parent / m["file"]) for m in doc["members"])
    return EnsembleMeasure(members, np.array([m["weight"] for m in doc["members"]])), doc
