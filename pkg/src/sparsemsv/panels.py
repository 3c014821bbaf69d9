"""Return panels and the log-squared transform."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import numpy as np

from .errors import DataError, InsufficientSample, NonFiniteInput, ZeroReturn
from .io import atomic_write_text


class ZeroPolicy(str, Enum):
    ERROR = "error"
    HALF_MIN_NONZERO = "half-min-nonzero"


@dataclass(frozen=True)
class ReturnPanel:
    """T x p panel of returns, time on the slow axis."""

    data: np.ndarray
    asset_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise DataError(f"return panel must be 2-d, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise InsufficientSample(f"need T >= 2 and p >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteInput("return panel contains NaN or infinite entries")
        data.setflags(write=False)
        labels = list(self.asset_labels) or [f"a{i}" for i in range(data.shape[1])]
        if len(labels) != data.shape[1]:
            raise DataError(f"{len(labels)} labels for {data.shape[1]} columns")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "asset_labels", labels)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LogSqPanel:
    ylog: np.ndarray
    xcentered: np.ndarray
    colmeans: np.ndarray

    @property
    def T(self) -> int:
        return self.ylog.shape[0]

    @property
    def p(self) -> int:
        return self.ylog.shape[1]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def log_square_transform(
    panel: ReturnPanel, zero_policy: ZeroPolicy | str = ZeroPolicy.HALF_MIN_NONZERO
) -> LogSqPanel:
    """Map returns to ``log(y**2)`` and subtract the full-sample column means.

    Under ``HALF_MIN_NONZERO`` a zero return is replaced by half the smallest
    nonzero absolute return of its column before squaring.
    """
    zero_policy = ZeroPolicy(zero_policy)
    y = np.abs(np.array(panel.data, dtype=float))
    zeros = y == 0.0
    if zeros.any():
        if zero_policy is ZeroPolicy.ERROR:
            t, i = np.argwhere(zeros)[0]
            raise ZeroReturn(f"zero return at row {t}, column {i} ({panel.asset_labels[i]})")
        for i in np.flatnonzero(zeros.any(axis=0)):
            nonzero = y[~zeros[:, i], i]
            if nonzero.size == 0:
                raise ZeroReturn(f"column {panel.asset_labels[i]} has no nonzero return")
            y[zeros[:, i], i] = 0.5 * nonzero.min()
    ylog = 2.0 * np.log(y)
    colmeans = ylog.mean(axis=0)
    x = ylog - colmeans
    # second pass removes the rounding residue of the first
    x -= x.mean(axis=0)
    return LogSqPanel(_freeze(ylog), _freeze(x), _freeze(colmeans))


def lag_stack(x: LogSqPanel | np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix of stacked lags and the aligned responses.

    Row ``k`` of the regressor matrix is ``(x[m+k-1], x[m+k-2], ..., x[k])``
    flattened, i.e. lag 1 occupies the first ``p`` columns. The response for
    that row is ``x[m+k]``.
    """
    arr = x.xcentered if isinstance(x, LogSqPanel) else np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    T = arr.shape[0]
    if m < 1:
        raise DataError(f"lag order must be >= 1, got {m}")
    if T <= m:
        raise InsufficientSample(f"T={T} must exceed the lag order m={m}")
    Z = np.hstack([arr[m - k : T - k] for k in range(1, m + 1)])
    return Z, arr[m:].copy()


def read_returns_csv(path: str | Path) -> ReturnPanel:
    """Read a returns CSV: header row of labels, then one row per period."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    labels = [c.strip() for c in rows[0]]
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(labels):
            raise DataError(f"{path}:{lineno}: expected {len(labels)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise NonFiniteInput(f"{path}:{lineno}: NaN or infinite value")
        values.append(vals)
    return ReturnPanel(np.array(values), labels)


def write_returns_csv(panel: ReturnPanel, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(panel.asset_labels)
    for row in panel.data:
        writer.writerow([repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())

