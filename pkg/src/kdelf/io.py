"""File formats: sample/grid CSVs and JSON documents.

Floats are written with ``repr`` so that files round-trip exactly and two
runs with the same inputs produce identical bytes. JSON documents carry
``schema_version``; CSV files are plain header-plus-rows tables whose schema
version is recorded in the accompanying manifest.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .simulate import Sample

SCHEMA_VERSION = "1.0"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            wr.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [r for r in rd if r]
    return header, rows


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_plain(obj))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_sample(path, sample):
    cols = ["z", "L"]
    data = [sample.z, sample.L]
    if sample.alpha is not None:
        cols.append("alpha")
        data.append(sample.alpha)
    if sample.weights is not None:
        cols.append("weight")
        data.append(sample.weights)
    write_csv(path, cols, zip(*data))


def read_sample(path, window):
    header, rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array([[float(v) for v in r] for r in rows])
    col = {h.strip(): arr[:, k] for k, h in enumerate(header)}
    if "z" not in col or "L" not in col:
        raise ValueError(f"{path}: needs columns z and L")
    return Sample(z=col["z"], L=col["L"], window=window, alpha=col.get("alpha"),
                  weights=col.get("weight"), meta={"path": os.path.basename(path)})
