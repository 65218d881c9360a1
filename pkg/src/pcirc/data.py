"""Dataset container and its two on-disk forms.

Text form: comma-separated integers, one sample per line, ``?`` for a
missing value.  Binary form: a fixed header (magic, sample count,
variable count) followed by row-major little-endian u16 values with
0xFFFF as the missing sentinel.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "Dataset",
    "load_dataset",
    "loads_csv",
    "parse_binary",
    "save_dataset",
    "to_binary",
    "to_csv",
]

MISSING = -1

_MAGIC = b"PCD1"
_MISSING_U16 = 0xFFFF


@dataclass
class Dataset:
    """N samples of integer categories, -1 marking a missing value."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.int64)
        if arr.ndim != 2:
            raise FormatError(f"dataset must be 2-d, got shape {arr.shape}")
        if arr.size and arr.min() < MISSING:
            raise FormatError("dataset values must be >= 0, or -1 for missing")
        if arr.size and arr.max() >= _MISSING_U16:
            raise FormatError(f"dataset values must be < {_MISSING_U16}")
        self.data = arr

    @property
    def num_samples(self) -> int:
        return self.data.shape[0]

    @property
    def num_vars(self) -> int:
        return self.data.shape[1]

    def num_categories(self) -> np.ndarray:
        """Per-variable count implied by the largest observed value."""
        obs = np.where(self.data >= 0, self.data, -1)
        return obs.max(axis=0, initial=-1) + 1


def loads_csv(text: str) -> Dataset:
    rows: list[list[int]] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        row = []
        for f in fields:
            if f == "?":
                row.append(MISSING)
                continue
            try:
                v = int(f)
            except ValueError:
                raise FormatError(f"data line {lineno}: not an integer: {f!r}") from None
            if v < 0:
                raise FormatError(f"data line {lineno}: negative value {v}")
            row.append(v)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(
                f"data line {lineno}: expected {width} fields, got {len(row)}"
            )
        rows.append(row)
    if not rows:
        raise FormatError("dataset is empty")
    return Dataset(np.array(rows, dtype=np.int64))


def to_csv(ds: Dataset) -> str:
    out = io.StringIO()
    for row in ds.data:
        out.write(",".join("?" if v == MISSING else str(v) for v in row))
        out.write("\n")
    return out.getvalue()


def parse_binary(blob: bytes) -> Dataset:
    if len(blob) < 20 or blob[:4] != _MAGIC:
        raise FormatError("not a binary dataset (bad magic)")
    n, nv = struct.unpack("<qq", blob[4:20])
    if n < 0 or nv <= 0:
        raise FormatError(f"bad dataset header: {n} samples, {nv} variables")
    body = blob[20:]
    if len(body) != 2 * n * nv:
        raise FormatError(
            f"dataset payload is {len(body)} bytes, expected {2 * n * nv}"
        )
    vals = np.frombuffer(body, dtype="<u2").astype(np.int64).reshape(n, nv)
    vals[vals == _MISSING_U16] = MISSING
    return Dataset(vals)


def to_binary(ds: Dataset) -> bytes:
    vals = ds.data.copy()
    vals[vals == MISSING] = _MISSING_U16
    head = _MAGIC + struct.pack("<qq", ds.num_samples, ds.num_vars)
    return head + vals.astype("<u2").tobytes()


def load_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"dataset file not found: {p}")
    blob = p.read_bytes()
    if blob[:4] == _MAGIC:
        return parse_binary(blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{p}: neither binary dataset nor text") from None
    try:
        return loads_csv(text)
    except FormatError as e:
        raise FormatError(f"{p}: {e}") from None


def save_dataset(ds: Dataset, path: str | Path, *, binary: bool | None = None) -> None:
    p = Path(path)
    if binary is None:
        binary = p.suffix.lower() in {".bin", ".pcd"}
    if binary:
        p.write_bytes(to_binary(ds))
    else:
        p.write_text(to_csv(ds))
