"""Digests, fingerprints, down-sampling and CSV output."""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from src.types import ProtocolConfig

MAX_ROWS = 2000
FLOAT_FORMAT = "%.12e"

# Fields that change the physics of a run; method, seed and output
# settings do not invalidate a schedule.
FINGERPRINT_FIELDS = (
    "target",
    "n_qubits",
    "excitation",
    "observable",
    "k",
    "dt",
    "t_final",
    "representation",
    "angle_grid",
)


def config_fingerprint(config: ProtocolConfig) -> str:
    """MD5 of the canonical JSON of the physics-relevant config fields."""
    fields = asdict(config)
    payload = {name: fields[name] for name in FINGERPRINT_FIELDS}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.md5(text.encode("utf-8")).hexdigest()


def compute_dataframe_hash(df: pd.DataFrame) -> str:
    """Deterministic hash of a DataFrame's values and index.

    Args:
        df: DataFrame to hash

    Returns:
        Hexadecimal MD5 digest
    """
    hashed = pd.util.hash_pandas_object(df, index=True)
    return hashlib.md5(hashed.values.tobytes()).hexdigest()


def file_digest(path: Union[str, Path]) -> str:
    """MD5 of a file's bytes."""
    return hashlib.md5(Path(path).read_bytes()).hexdigest()


def downsample(df: pd.DataFrame, max_rows: int = MAX_ROWS) -> pd.DataFrame:
    """Evenly spaced subset of at most `max_rows` rows; first and last rows always kept."""
    n = len(df)
    if n <= max_rows:
        return df.reset_index(drop=True)
    idx = np.unique(np.round(np.linspace(0, n - 1, max_rows)).astype(int))
    return df.iloc[idx].reset_index(drop=True)


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> str:
    """Write `df` as UTF-8 CSV with LF endings and %.12e floats.

    Returns:
        MD5 digest of the written file
    """
    numeric = df.select_dtypes(include=[np.number]).to_numpy(dtype=float)
    assert np.all(np.isfinite(numeric)), f"non-finite values in {path}"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    return file_digest(path)
