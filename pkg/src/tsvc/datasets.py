"""Swiss labour market and Australian health survey data.

Both come from the R package AER.  They are read through the optional
``rdatasets`` Python package (``pip install rdatasets``); nothing is
downloaded at runtime.  Variable coding:

* SwissLabor: participation and foreign as 0/1, income = log non-labour
  income, age in decades, remaining counts unchanged.
* DoctorVisits: gender (1 = female), private, freepoor, lchronic as 0/1,
  income in tens of thousands of dollars, age in decades.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import Column, Dataset

SWISS_PREDICTORS = [
    ("income", "continuous"),
    ("age", "continuous"),
    ("education", "ordinal"),
    ("youngkids", "ordinal"),
    ("oldkids", "ordinal"),
    ("foreign", "binary"),
]

AHS_PREDICTORS = [
    ("gender", "binary"),
    ("income", "continuous"),
    ("age", "continuous"),
    ("illness", "ordinal"),
    ("reduced", "ordinal"),
    ("health", "ordinal"),
    ("private", "binary"),
    ("freepoor", "binary"),
    ("lchronic", "binary"),
]


def _load(name: str):
    try:
        import rdatasets
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImportError("the 'rdatasets' package is required for the AER datasets") from exc
    return rdatasets.data("AER", name)


def _yes(series) -> np.ndarray:
    return series.isin(["yes", "female"]).to_numpy(dtype=float)


def swiss_labor() -> Dataset:
    df = _load("SwissLabor")
    values = {
        "income": df["income"].to_numpy(dtype=float),
        "age": df["age"].to_numpy(dtype=float),
        "education": df["education"].to_numpy(dtype=float),
        "youngkids": df["youngkids"].to_numpy(dtype=float),
        "oldkids": df["oldkids"].to_numpy(dtype=float),
        "foreign": _yes(df["foreign"]),
    }
    cols = tuple(Column(name, values[name], scale) for name, scale in SWISS_PREDICTORS)
    return Dataset(cols, _yes(df["participation"]), "participation")


def doctor_visits() -> Dataset:
    df = _load("DoctorVisits")
    values = {
        "gender": _yes(df["gender"]),
        "income": df["income"].to_numpy(dtype=float),
        "age": 10.0 * df["age"].to_numpy(dtype=float),
        "illness": df["illness"].to_numpy(dtype=float),
        "reduced": df["reduced"].to_numpy(dtype=float),
        "health": df["health"].to_numpy(dtype=float),
        "private": _yes(df["private"]),
        "freepoor": _yes(df["freepoor"]),
        "lchronic": _yes(df["lchronic"]),
    }
    cols = tuple(Column(name, values[name], scale) for name, scale in AHS_PREDICTORS)
    return Dataset(cols, df["visits"].to_numpy(dtype=float), "visits")


def write_dataset(data: Dataset, csv_path, schema_path=None) -> None:
    """Write ``data`` as CSV plus a JSON schema sidecar usable by ``tsvc fit``."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([data.response_name] + data.names)
        for i in range(data.n):
            writer.writerow([repr(float(data.response[i]))] + [repr(float(v)) for v in data.X[i]])
    if schema_path is not None:
        binary_y = bool(np.all((data.response == 0) | (data.response == 1)))
        schema = {"columns": [{"name": data.response_name, "role": "response",
                               "scale": "binary" if binary_y else "continuous"}]}
        schema["columns"] += [{"name": c.name, "role": "predictor", "scale": c.scale}
                              for c in data.columns]
        Path(schema_path).write_text(json.dumps(schema, indent=2) + "\n")
