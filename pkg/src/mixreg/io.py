"""
Text formats: dataset CSV plus JSON manifest, model and collection JSON.

Labels and couple indices are 1-based in files and 0-based in memory.
Floats are written with their shortest round-trip representation, so
reading a file back gives bit-identical arrays.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Dataset, InvalidInputError, MixtureParams, ModelSpec, SparsityPattern
from .selection import ModelCollection

SCHEMA_VERSION = 1


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def dump_json(obj, path) -> None:
    _write_text(path, json.dumps(obj, indent=1, allow_nan=False) + "\n")


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc


def rows_to_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_table(path, rows: list[dict]) -> None:
    """Write a list of homogeneous dicts as CSV (column order from the first row)."""
    header = list(rows[0]) if rows else []
    _write_text(path, rows_to_csv(header, [[r[h] for h in header] for r in rows]))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def dataset_to_csv(data: Dataset) -> str:
    header = [f"x{j + 1}" for j in range(data.p)] + [f"y{m + 1}" for m in range(data.q)]
    has_labels = data.labels is not None
    if has_labels:
        header.append("label")
    rows = []
    for i in range(data.n):
        row = [_fmt(v) for v in data.x[i]] + [_fmt(v) for v in data.y[i]]
        if has_labels:
            row.append(str(int(data.labels[i]) + 1))
        rows.append(row)
    return rows_to_csv(header, rows)


def write_dataset(data: Dataset, path, manifest: Optional[dict] = None) -> Path:
    """Write ``path`` (CSV) and, if given, the manifest next to it as ``<stem>.json``."""
    path = Path(path)
    _write_text(path, dataset_to_csv(data))
    if manifest is not None:
        body = {"schema_version": SCHEMA_VERSION, "kind": "dataset",
                "n": data.n, "p": data.p, "q": data.q,
                "has_labels": data.labels is not None}
        body.update(manifest)
        dump_json(body, manifest_path(path))
    return path


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def read_dataset(path) -> Dataset:
    """Parse a dataset CSV with header ``x1..xp,y1..yq[,label]``."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    lcol = header.index("label") if "label" in header else None
    if not xcols or not ycols or len(xcols) + len(ycols) + (lcol is not None) != len(header):
        raise InvalidInputError(f"{path}: header must be x1..xp,y1..yq[,label]")
    body = rows[1:]
    if not body:
        raise InvalidInputError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from exc
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise InvalidInputError(f"{path}: rows do not all have {len(header)} fields")
    labels = None
    if lcol is not None:
        lab = arr[:, lcol]
        if np.any(lab != np.round(lab)) or np.any(lab < 1):
            raise InvalidInputError(f"{path}: labels must be positive integers")
        labels = lab.astype(int) - 1
    return Dataset(arr[:, xcols], arr[:, ycols], labels)


def read_matrix(path) -> np.ndarray:
    """Numeric CSV, one record per row; a non-numeric first row is taken as a header."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise InvalidInputError(f"{path}: ragged rows with lengths {sorted(lengths)}")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from exc


def write_matrix(M: np.ndarray, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(M):
        w.writerow([_fmt(v) for v in row])
    _write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def params_to_dict(params: MixtureParams) -> dict:
    return {"K": params.K, "q": params.q, "p": params.p,
            "pi": params.pi.tolist(), "Phi": params.Phi.tolist(), "P": params.P.tolist()}


def params_from_dict(d: dict) -> MixtureParams:
    try:
        params = MixtureParams(np.asarray(d["pi"], dtype=float),
                               np.asarray(d["Phi"], dtype=float),
                               np.asarray(d["P"], dtype=float))
    except KeyError as exc:
        raise InvalidInputError(f"model record lacks field {exc}") from exc
    if "K" in d and (params.K, params.q, params.p) != (d["K"], d["q"], d["p"]):
        raise InvalidInputError("model record shape metadata disagrees with its arrays")
    return params


def model_to_dict(spec: ModelSpec) -> dict:
    d = {"procedure": spec.procedure, "K": spec.K,
         "lambda": None if spec.lam is None else float(spec.lam),
         "R": None if spec.R is None else list(spec.R),
         "J": [[m + 1, j + 1] for m, j in spec.J.pairs]}
    d.update(params_to_dict(spec.params))
    d.update({"loglik": float(spec.loglik), "dim": int(spec.dim),
              "converged": bool(spec.converged)})
    return d


def model_from_dict(d: dict) -> ModelSpec:
    params = params_from_dict(d)
    J = SparsityPattern(((m - 1, j - 1) for m, j in d.get("J", [])), params.q, params.p)
    return ModelSpec(K=int(d["K"]), J=J, params=params, loglik=float(d["loglik"]),
                     dim=int(d["dim"]), R=None if d.get("R") is None else tuple(d["R"]),
                     procedure=d.get("procedure", "lasso-mle"), lam=d.get("lambda"),
                     converged=bool(d.get("converged", True)))


def collection_to_dict(collection: ModelCollection, n: int, config: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": "collection", "n": int(n),
            "config": config, "models": [model_to_dict(s) for s in collection]}


def collection_from_dict(d: dict) -> tuple[ModelCollection, int]:
    if d.get("kind") != "collection":
        raise InvalidInputError("file is not a model collection")
    _check_schema(d)
    return ModelCollection(model_from_dict(m) for m in d["models"]), int(d["n"])


def _check_schema(d: dict) -> None:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported schema version {version!r}")


def read_model(path) -> tuple[ModelSpec, dict]:
    """Load a model from a selection or single-model file; returns ``(model, document)``."""
    d = load_json(path)
    _check_schema(d)
    kind = d.get("kind")
    if kind == "selection":
        return model_from_dict(d["chosen"]), d
    if kind == "model":
        return model_from_dict(d["model"]), d
    raise InvalidInputError(f"{path}: expected a selection or model file, got kind={kind!r}")
