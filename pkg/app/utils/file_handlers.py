import hashlib
import json
import os
from typing import Any

import numpy as np
import pandas as pd

from app.utils.data_utils import frame_to_records

FLOAT_FORMAT = "%.17g"


def make_json_serializable(obj: Any) -> Any:
    """
    Convert pandas/numpy types to JSON-serializable Python types.
    """
    if obj is None:
        return None

    if isinstance(obj, dict):
        return {str(k): make_json_serializable(v) for k, v in obj.items()}

    if isinstance(obj, (list, tuple)):
        return [make_json_serializable(item) for item in obj]

    if isinstance(obj, pd.DataFrame):
        return make_json_serializable(frame_to_records(obj))

    if isinstance(obj, (np.integer,)):
        return int(obj)

    if isinstance(obj, (np.floating,)):
        obj = float(obj)

    if isinstance(obj, np.bool_):
        return bool(obj)

    if isinstance(obj, np.ndarray):
        return make_json_serializable(obj.tolist())

    if isinstance(obj, pd.Series):
        return make_json_serializable(obj.tolist())

    if obj is pd.NA:
        return None

    # NaN/Inf have no JSON spelling
    if isinstance(obj, float) and (np.isnan(obj) or np.isinf(obj)):
        return None

    return obj


def emit(report: Any, fmt: str) -> bytes:
    """
    Serialize a table or summary to bytes.

    CSV keeps the frame's column order and prints floats with 17 significant
    digits; JSON sorts keys and relies on the shortest round-trip float repr.
    """
    if fmt == "csv":
        if not isinstance(report, pd.DataFrame):
            report = pd.DataFrame(report)
        return report.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n").encode("utf-8")
    if fmt == "json":
        text = json.dumps(make_json_serializable(report), sort_keys=True, indent=2, allow_nan=False)
        return (text + "\n").encode("utf-8")
    raise ValueError(f"unknown output format {fmt!r}")


def write_bytes(data: bytes, destination: str) -> str:
    os.makedirs(os.path.dirname(destination) or ".", exist_ok=True)
    with open(destination, "wb") as out_file:
        out_file.write(data)
    return destination


def save_dataframe(df: pd.DataFrame, destination: str, fmt: str = "csv") -> bytes:
    """
    Write a table as CSV or JSON and return the bytes written.
    """
    data = emit(df, fmt)
    write_bytes(data, destination)
    return data


def sha256_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
