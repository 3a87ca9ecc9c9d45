"""Dataset CSV, JSON sidecars and provenance helpers.

CSV layout: an optional provenance comment line starting with ``#``, then the
header ``t,y,x1,...,xn[,mode,v]``; time and mode labels are 1-based.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Dataset, FeatureMapSpec, GroundTruth

__all__ = [
    "DatasetParseError",
    "config_hash",
    "write_dataset",
    "read_dataset",
    "dumps",
    "write_text",
    "provenance_line",
]


class DatasetParseError(ValueError):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def provenance_line(chash: str, seed: int) -> str:
    return f"# lsmid config_hash={chash} seed={seed}\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_csv(data: Dataset, chash: Optional[str] = None, seed: Optional[int] = None) -> str:
    buf = io.StringIO()
    if chash is not None:
        buf.write(provenance_line(chash, seed))
    w = csv.writer(buf, lineterminator="\n")
    header = ["t", "y"] + [f"x{i + 1}" for i in range(data.n)]
    truth = data.truth
    if truth is not None:
        header += ["mode", "v"]
    w.writerow(header)
    for t in range(data.N):
        row = [str(t + 1), _fmt(data.y[t])] + [_fmt(v) for v in data.X[:, t]]
        if truth is not None:
            row += [str(int(truth.sigma[t]) + 1), _fmt(truth.v[t])]
        w.writerow(row)
    return buf.getvalue()


def sidecar_dict(data: Dataset, chash: Optional[str] = None, seed: Optional[int] = None, extra=None) -> dict:
    d: dict = {"n": data.n, "N": data.N}
    if data.truth is not None:
        d["truth"] = {
            "A_true": data.truth.A,
            "sigma": data.truth.sigma + 1,
            "v": data.truth.v,
            "outliers": data.truth.outliers + 1,
        }
    if data.fmap is not None:
        d["feature_map"] = data.fmap.to_dict()
    if data.inputs is not None:
        d["inputs"] = data.inputs
        d["y_warmup"] = data.y_warmup
    d["provenance"] = {"config_hash": chash, "seed": seed}
    if extra:
        d.update(extra)
    return d


def write_dataset(data: Dataset, csv_path, chash: Optional[str] = None, seed: Optional[int] = None,
                  extra=None) -> Path:
    """Write ``<name>.csv`` and the JSON sidecar ``<name>.json``; returns the sidecar path."""
    csv_path = Path(csv_path)
    write_text(csv_path, dataset_csv(data, chash, seed))
    side = csv_path.with_suffix(".json")
    write_text(side, dumps(sidecar_dict(data, chash, seed, extra)))
    return side


def read_dataset(csv_path) -> Dataset:
    """Parse a dataset CSV; truth is attached when a sidecar with ``A_true`` exists."""
    csv_path = Path(csv_path)
    try:
        text = csv_path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetParseError(f"cannot read {csv_path}: {e}") from e
    lines = text.splitlines()
    rows = []
    header = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header = [f.strip() for f in fields]
            if header[:2] != ["t", "y"]:
                raise DatasetParseError(f"line {lineno}: header must start with 't,y'")
            xs = [h for h in header[2:] if h.startswith("x")]
            if not xs or xs != [f"x{i + 1}" for i in range(len(xs))]:
                raise DatasetParseError(f"line {lineno}: regressor columns must be x1..xn")
            tail = header[2 + len(xs):]
            if tail not in ([], ["mode", "v"]):
                raise DatasetParseError(f"line {lineno}: unexpected columns {tail}")
            continue
        if len(fields) != len(header):
            raise DatasetParseError(f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise DatasetParseError(f"line {lineno}: non-numeric field") from None
        if not np.all(np.isfinite(vals)):
            raise DatasetParseError(f"line {lineno}: non-finite value")
        rows.append((lineno, vals))
    if header is None or not rows:
        raise DatasetParseError(f"{csv_path}: no data rows")
    M = np.array([r[1] for r in rows])
    n = len([h for h in header[2:] if h.startswith("x")])
    for k, (lineno, vals) in enumerate(rows):
        if vals[0] != k + 1:
            raise DatasetParseError(f"line {lineno}: time index {vals[0]:g}, expected {k + 1}")
    y = M[:, 1]
    X = M[:, 2 : 2 + n].T
    truth = None
    fmap = None
    inputs = y_warm = None
    side = csv_path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        if "feature_map" in meta:
            fmap = FeatureMapSpec.from_dict(meta["feature_map"])
        if "inputs" in meta:
            inputs = np.array(meta["inputs"], dtype=float)
            y_warm = np.array(meta["y_warmup"], dtype=float)
        tr = meta.get("truth")
        if tr is not None and header[-2:] == ["mode", "v"]:
            sigma = M[:, -2].astype(int) - 1
            v = M[:, -1]
            truth = GroundTruth(np.array(tr["A_true"], dtype=float), sigma, v,
                                np.array(tr.get("outliers", []), dtype=int) - 1)
    return Dataset(X, y, truth, fmap, inputs, y_warm)
