"""JSON input files and CSV output.

Scale file::

    {"intervals": [[0, 1]], "period": 2}          # or
    {"builtin": "pulse", "a": 1, "b": 1}          # reals | integers | pulse

System file (matrices row-major, one per pattern piece)::

    {"n": 1, "A": {"pieces": [[[-0.5]]]}, "rhs": {"pieces": [[1.0]]}}

Perturbation file::

    {"family": "sine", "r0": 1.0, "amp": [0.1], "W": [[1]], "bias": [0.05]}
"""
from __future__ import annotations

import io as _io
import json
import sys

import numpy as np

from .errors import InputError, ScaleValidationError
from .lift import PiecewiseMatrix
from .nonlinear import Perturbation
from .timescale import TimeScale


def _read(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found", file=str(path)) from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})", file=str(path)) from None


def scale_from_dict(d, path="<scale>"):
    if not isinstance(d, dict):
        raise InputError(f"{path}: top level must be an object", file=str(path))
    b = d.get("builtin")
    try:
        if b is not None:
            if b == "reals":
                return TimeScale.reals()
            if b == "integers":
                return TimeScale.integers(float(d.get("h", 1.0)))
            if b == "pulse":
                return TimeScale.pulse(float(d.get("a", 1.0)), float(d.get("b", 1.0)))
            raise InputError(f"{path}: field 'builtin': unknown scale {b!r}", file=str(path), field="builtin")
        if "intervals" not in d:
            raise InputError(f"{path}: field 'intervals' is required", file=str(path), field="intervals")
        return TimeScale.from_dict(d)
    except ScaleValidationError as e:
        raise InputError(f"{path}: field 'intervals': {e}", file=str(path), field="intervals") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"{path}: field 'intervals': {e}", file=str(path), field="intervals") from None


def load_scale(path):
    return scale_from_dict(_read(path), path)


def _pieces(d, key, path, npieces):
    block = d.get(key)
    if not isinstance(block, dict) or "pieces" not in block:
        raise InputError(f"{path}: field '{key}.pieces' is required", file=str(path), field=f"{key}.pieces")
    p = block["pieces"]
    if len(p) == 1 and npieces > 1:
        p = p * npieces
    if len(p) != npieces:
        raise InputError(
            f"{path}: field '{key}.pieces': {len(p)} entries for {npieces} pattern pieces",
            file=str(path), field=f"{key}.pieces",
        )
    return p


def system_from_dict(d, scale, path="<system>"):
    n = d.get("n")
    if not isinstance(n, int) or n < 1:
        raise InputError(f"{path}: field 'n' must be a positive integer", file=str(path), field="n")
    mats = []
    for i, m in enumerate(_pieces(d, "A", path, scale.npieces)):
        a = np.asarray(m, dtype=float)
        if a.ndim == 0 and n == 1:
            a = a.reshape(1, 1)
        if a.shape != (n, n):
            raise InputError(f"{path}: field 'A.pieces[{i}]': expected shape ({n}, {n}), got {a.shape}",
                             file=str(path), field=f"A.pieces[{i}]")
        mats.append(a)
    return PiecewiseMatrix(scale, tuple(mats))


def rhs_from_dict(d, scale, n, path="<rhs>"):
    vecs = []
    for i, v in enumerate(_pieces(d, "rhs", path, scale.npieces)):
        a = np.atleast_1d(np.asarray(v, dtype=float))
        if a.shape != (n,):
            raise InputError(f"{path}: field 'rhs.pieces[{i}]': expected length {n}, got {a.shape}",
                             file=str(path), field=f"rhs.pieces[{i}]")
        vecs.append(a)
    table = np.array(vecs)

    def f(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        _, pc, _, _ = scale._locate(t)
        return table[pc]

    return f


def load_system(path, scale):
    d = _read(path)
    A = system_from_dict(d, scale, path)
    rhs = rhs_from_dict(d, scale, A.n, path) if "rhs" in d else None
    return A, rhs


def load_rhs(path, scale, n):
    return rhs_from_dict(_read(path), scale, n, path)


def load_perturbation(path, n):
    d = _read(path)
    try:
        return Perturbation.from_dict(d, n)
    except InputError as e:
        raise InputError(f"{path}: field '{e.details.get('field', 'family')}': {e}", file=str(path),
                         field=e.details.get("field")) from None
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: {e}", file=str(path)) from None


def fmt(x):
    return "%.17g" % x


def write_csv(path, header, rows):
    """CSV with a header row and 17 significant digits."""
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(float(v)) for v in row) + "\n")
    text = buf.getvalue()
    if path is None:
        return text
    if path == "-":
        sys.stdout.write(text)
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text
