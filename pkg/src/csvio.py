"""CSV ingestion and emission.

Inputs: rows are samples, columns are covariates; a response file is a single column.
Outputs: '.' decimal separator, no thousands separator, 17 significant digits, '\\n' line ends.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataError, DimensionMismatch, NonFinite, ParseError, RaggedRows

logger = logging.getLogger("CsvIO")

FLOAT_FORMAT = "%.17g"
NA_REP = "NaN"

ESTIMATE_COLUMNS = ["scenario", "method", "k", "replicate", "alpha_hat", "flag"]
SUMMARY_COLUMNS = ["scenario", "method", "k", "mean", "sd", "theo_bias", "theo_var", "n_fail"]
SCAN_COLUMNS = ["j", "alpha_cpc", "alpha_psc", "abs_err", "rel_err", "flags"]
HISTOGRAM_COLUMNS = ["metric", "bin_lo", "bin_hi", "count"]


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _parse_cell(text: str, row: int, col: int) -> float:
    s = text.strip()
    try:
        value = float(s)
    except ValueError:
        raise ParseError(row, col, s) from None
    if not math.isfinite(value):
        raise NonFinite(row, col)
    return value


def load_matrix_csv(path: str, has_header: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV. Error positions are 1-based file rows and columns."""
    rows: List[List[float]] = []
    width: Optional[int] = None
    skip_header = has_header

    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        for row_no, fields in enumerate(csv.reader(f), start=1):
            if not fields or all(not x.strip() for x in fields):
                continue
            if skip_header:
                skip_header = False
                continue
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise RaggedRows(row_no, width, len(fields))
            rows.append([_parse_cell(text, row_no, col) for col, text in enumerate(fields, start=1)])

    if not rows:
        raise DataError(f"{path} contains no data rows")
    matrix = np.array(rows, dtype=np.float64)
    logger.debug(f"Read {matrix.shape[0]}x{matrix.shape[1]} matrix from {path}")
    return matrix


def load_response_csv(path: str, has_header: bool = False) -> np.ndarray:
    values = load_matrix_csv(path, has_header)
    if values.shape[1] != 1:
        raise DimensionMismatch(f"{path}: response file must have one column, found {values.shape[1]}")
    return values[:, 0].copy()


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def write_frame(frame: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep=NA_REP, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} row(s) to {path}")
    return path


def estimates_frame(records: Iterable) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.scenario, r.method, r.k, r.replicate, r.alpha_hat, r.flag] for r in records],
        columns=ESTIMATE_COLUMNS,
    )


def summary_frame(cells: Iterable) -> pd.DataFrame:
    return pd.DataFrame(
        [[c.scenario, c.method, c.k, c.mean, c.sd, c.theo_bias, c.theo_var, c.n_fail] for c in cells],
        columns=SUMMARY_COLUMNS,
    )


def scan_frame(records: Iterable) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.j, r.alpha_cpc, r.alpha_psc, r.abs_err, r.rel_err, "|".join(r.flags)] for r in records],
        columns=SCAN_COLUMNS,
    )


def histogram_frame(bins: Iterable) -> pd.DataFrame:
    return pd.DataFrame([[b.metric, b.bin_lo, b.bin_hi, b.count] for b in bins], columns=HISTOGRAM_COLUMNS)


def single_row_frame(values: dict, columns: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame([[values[c] for c in columns]], columns=list(columns))
