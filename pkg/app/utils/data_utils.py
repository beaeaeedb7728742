import pandas as pd
from typing import Any, Dict, Iterable, List, Sequence

from app.core.meanlab import REPORT_COLUMNS, DefectReport

# Nullable integer dtypes keep blank cells without turning counts into floats.
INTEGER_DTYPES = {"N": "Int64", "M": "Int64", "n": "Int64", "seed": "UInt64", "K": "Int64"}


def records_to_frame(records: Iterable[Dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    """
    Build a tidy table with a fixed column order from row dicts.
    """
    df = pd.DataFrame(list(records), columns=list(columns))
    for column, dtype in INTEGER_DTYPES.items():
        if column in df.columns:
            df[column] = df[column].astype(dtype)
    return df


def reports_to_frame(reports: Iterable[DefectReport], timings: bool = False) -> pd.DataFrame:
    return records_to_frame((r.to_row(timings) for r in reports), REPORT_COLUMNS)


def frame_to_records(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """
    Rows as dicts with blanks mapped to None.
    """
    return df.astype(object).where(pd.notnull(df), None).to_dict(orient="records")
