"""Smoothed and forecast log-volatility paths and the implied covariances.

The smoother is the best linear predictor of the latent path given the whole
sample, ``alpha_tilde = V_alpha V_x^{-1} (ylog - c)``, where ``V_alpha`` is the
block-Toeplitz autocovariance of a stable VAR(1) state with stationary
covariance ``Sigma_alpha`` and ``V_x = V_alpha + I_T (x) Sigma_zeta``.
"""
from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import DataError, SolverFailure, UnstableModel
from .io import atomic_write_bytes, atomic_write_text

if TYPE_CHECKING:
    from .estimator import MsvModel

DENSE_MAX_DIM = 4000
CG_TOL = 1e-10
BINARY_MAGIC = b"MSVC"
BINARY_VERSION = 1

logger = logging.getLogger(__name__)


class Backend(str, Enum):
    AUTO = "auto"
    DENSE = "dense"
    CG = "cg"


@dataclass(frozen=True)
class CovSequence:
    """Ordered p x p covariance matrices with integer time labels."""

    matrices: np.ndarray  # n x p x p
    labels: tuple[int, ...]
    kind: str = "smoothed"  # or "forecast", "true", "fitted"

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise DataError(f"covariance sequence must be n x p x p, got {mats.shape}")
        if len(self.labels) != mats.shape[0]:
            raise DataError("one label per matrix required")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "labels", tuple(int(t) for t in self.labels))

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.matrices[k]

    @property
    def p(self) -> int:
        return self.matrices.shape[1]

    def is_valid(self, sym_tol: float = 1e-10) -> bool:
        m = self.matrices
        if np.max(np.abs(m - m.transpose(0, 2, 1)), initial=0.0) > sym_tol:
            return False
        return bool(np.all(np.linalg.eigvalsh(m) > 0))

    @classmethod
    def from_arrays(cls, mats, kind: str, start: int = 0) -> "CovSequence":
        mats = np.asarray(mats, dtype=float)
        return cls(mats, tuple(range(start, start + mats.shape[0])), kind)


def matrix_powers(phi: np.ndarray, n: int) -> np.ndarray:
    """``[I, phi, phi^2, ..., phi^(n-1)]`` by repeated multiplication.

    Powers whose entries have all decayed below the smallest normal double
    are set to exact zero so later products never run on subnormals.
    """
    p = phi.shape[0]
    out = np.zeros((n, p, p))
    if n == 0:
        return out
    out[0] = np.eye(p)
    tiny = np.finfo(float).tiny
    for k in range(1, n):
        nxt = phi @ out[k - 1]
        if np.max(np.abs(nxt)) < tiny:
            break
        out[k] = nxt
    return out


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a)))) if a.size else 0.0


@dataclass(frozen=True)
class StackedCov:
    """Covariance of the stacked centered observations over ``T`` periods."""

    phi: np.ndarray
    sigma_alpha: np.ndarray
    sigma_zeta: np.ndarray
    T: int
    backend: Backend = Backend.AUTO
    dense_max_dim: int = DENSE_MAX_DIM

    @property
    def p(self) -> int:
        return self.phi.shape[0]

    @property
    def resolved_backend(self) -> Backend:
        b = Backend(self.backend)
        if b is Backend.AUTO:
            return Backend.DENSE if self.p * self.T <= self.dense_max_dim else Backend.CG
        return b

    def v_alpha(self) -> np.ndarray:
        p, T = self.p, self.T
        lower = matrix_powers(self.phi, T) @ self.sigma_alpha  # phi^k Sigma_alpha
        s, t = np.indices((T, T))
        blocks = np.where((s >= t)[:, :, None, None], lower[np.abs(s - t)],
                          lower.transpose(0, 2, 1)[np.abs(s - t)])
        return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(p * T, p * T)

    def dense(self) -> np.ndarray:
        V = self.v_alpha()
        V += np.kron(np.eye(self.T), self.sigma_zeta)
        return V

    def alpha_matvec(self, v: np.ndarray) -> np.ndarray:
        """``V_alpha @ v`` in O(T p^2) via one forward and one backward pass."""
        V = np.asarray(v, dtype=float).reshape(self.T, self.p)
        phi, sa = self.phi, self.sigma_alpha
        W = V @ sa.T
        fwd = np.empty_like(W)
        fwd[0] = W[0]
        for s in range(1, self.T):
            fwd[s] = phi @ fwd[s - 1] + W[s]
        bwd = np.zeros_like(V)
        phit = phi.T
        for s in range(self.T - 2, -1, -1):
            bwd[s] = phit @ (V[s + 1] + bwd[s + 1])
        return (fwd + bwd @ sa.T).ravel()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        V = np.asarray(v, dtype=float).reshape(self.T, self.p)
        return self.alpha_matvec(v) + (V @ self.sigma_zeta.T).ravel()


class _Breakdown(SolverFailure):
    pass


def _pcg(stack: StackedCov, rhs: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    diag = np.tile(np.diag(stack.sigma_alpha) + np.diag(stack.sigma_zeta), stack.T)
    if np.any(diag <= 0):
        raise SolverFailure("nonpositive diagonal in V_x")
    inv_diag = 1.0 / diag
    x = np.zeros_like(rhs)
    r = rhs.copy()
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        q = stack.matvec(d)
        dq = d @ q
        if dq <= 0:
            raise _Breakdown("V_x is not positive definite (CG breakdown)")
        step = rz / dq
        x += step * d
        r -= step * q
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverFailure(f"CG did not reach relative residual {tol} in {max_iter} iterations")


def vx_solve(
    stack: StackedCov, rhs: np.ndarray, tol: float = CG_TOL, max_iter: int | None = None
) -> np.ndarray:
    """Solve ``V_x s = rhs`` with the configured backend."""
    rhs = np.asarray(rhs, dtype=float).ravel()
    if rhs.size != stack.p * stack.T:
        raise DataError(f"rhs has {rhs.size} entries, expected {stack.p * stack.T}")
    if stack.resolved_backend is Backend.DENSE:
        dense = stack.dense()
        try:
            factor = sla.cho_factor(dense, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return _indefinite_dense(dense, rhs)
        return sla.cho_solve(factor, rhs, check_finite=False)
    try:
        return _pcg(stack, rhs, tol, max_iter or 20 * rhs.size)
    except _Breakdown:
        return _indefinite_iterative(stack, rhs, tol, max_iter or 20 * rhs.size)


def _indefinite_dense(dense: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # the ad hoc step-3 split does not guarantee a valid stacked covariance
    logger.warning("V_x is not positive definite; using a symmetric indefinite solve")
    try:
        return sla.solve(dense, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise SolverFailure(f"V_x is singular: {exc}") from None


def _indefinite_iterative(stack: StackedCov, rhs: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    logger.warning("V_x is not positive definite; switching CG to MINRES")
    n = rhs.size
    op = spla.LinearOperator((n, n), matvec=stack.matvec, dtype=float)
    x, info = spla.minres(op, rhs, rtol=tol, maxiter=max_iter)
    if info != 0:
        raise SolverFailure(f"MINRES did not converge (info={info})")
    return x


@dataclass(frozen=True)
class SmoothedPath:
    raw: np.ndarray  # T x p, the alpha-scale path used downstream
    weights: np.ndarray  # T x p, V_x^{-1}(ylog - c) reshaped
    c: np.ndarray

    @property
    def shifted(self) -> np.ndarray:
        """The raw path plus the measurement intercept."""
        return self.raw + self.c


def _stack_for(model: "MsvModel", T: int, backend: Backend | str, dense_max_dim: int) -> StackedCov:
    rho = spectral_radius(model.phi)
    if not rho < 1:
        raise UnstableModel(f"spectral radius of phi is {rho:.4f} >= 1")
    return StackedCov(model.phi, model.sigma_alpha, model.sigma_zeta, T, Backend(backend), dense_max_dim)


def mmsle_smooth(
    model: "MsvModel",
    ylog: np.ndarray,
    backend: Backend | str = Backend.AUTO,
    dense_max_dim: int = DENSE_MAX_DIM,
) -> SmoothedPath:
    """Full-sample linear smoother of the latent log-volatility path."""
    ylog = np.asarray(getattr(ylog, "ylog", ylog), dtype=float)
    T, p = ylog.shape
    if p != model.p:
        raise DataError(f"panel has {p} columns, model has {model.p}")
    stack = _stack_for(model, T, backend, dense_max_dim)
    s = vx_solve(stack, (ylog - model.c).ravel())
    raw = stack.alpha_matvec(s).reshape(T, p)
    return SmoothedPath(raw, s.reshape(T, p), np.asarray(model.c))


def scale_factors(y: np.ndarray, xsmooth: np.ndarray) -> np.ndarray:
    """Per-asset scale making the standardized returns unit mean-square."""
    return np.sqrt(np.mean(y * y * np.exp(-xsmooth), axis=0))


def build_smoothed_covariances(
    model: "MsvModel", y: np.ndarray, xsmooth: np.ndarray, dbar: np.ndarray | None = None
) -> tuple[np.ndarray, CovSequence]:
    """``H_t = D_t Gamma D_t`` with ``d_it = dbar_i exp(x_it / 2)``."""
    y = np.asarray(getattr(y, "data", y), dtype=float)
    xsmooth = np.asarray(getattr(xsmooth, "raw", xsmooth), dtype=float)
    if y.shape != xsmooth.shape:
        raise DataError(f"returns {y.shape} and smoothed path {xsmooth.shape} not aligned")
    if dbar is None:
        dbar = scale_factors(y, xsmooth)
    d = dbar * np.exp(xsmooth / 2.0)
    H = d[:, :, None] * model.gamma[None] * d[:, None, :]
    return dbar, CovSequence.from_arrays(H, "smoothed", start=1)


@dataclass(frozen=True)
class Forecast:
    alpha: np.ndarray  # L x p, includes the intercept c
    x: np.ndarray  # L x p, alpha - c, the scale fed to the volatilities
    covariances: CovSequence


def forecast(
    model: "MsvModel",
    ylog: np.ndarray,
    horizon: int,
    backend: Backend | str = Backend.AUTO,
    dense_max_dim: int = DENSE_MAX_DIM,
    path: SmoothedPath | None = None,
) -> Forecast:
    """l-step-ahead forecasts for ``l = 1..horizon`` from one solve of ``V_x``.

    ``R_l V_x^{-1}(ylog - c) = phi^l g`` with ``g`` the last row of the
    smoothed path, so every horizon reuses the same weights.
    """
    if horizon < 1:
        raise DataError(f"horizon must be >= 1, got {horizon}")
    if model.dbar is None:
        raise DataError("model has no scale factors; fit it with fit_msv first")
    ylog = np.asarray(getattr(ylog, "ylog", ylog), dtype=float)
    if path is None:
        path = mmsle_smooth(model, ylog, backend, dense_max_dim)
    else:
        _stack_for(model, ylog.shape[0], backend, dense_max_dim)
    g = path.raw[-1]
    xs = np.empty((horizon, model.p))
    cur = g
    for l in range(horizon):
        cur = model.phi @ cur
        xs[l] = cur
    d = model.dbar * np.exp(xs / 2.0)
    H = d[:, :, None] * model.gamma[None] * d[:, None, :]
    T = ylog.shape[0]
    return Forecast(xs + model.c, xs, CovSequence.from_arrays(H, "forecast", start=T + 1))


def write_covariances_csv(seq: CovSequence, path: str | Path) -> None:
    """Long format: one ``t,i,j,value`` row per matrix entry."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "i", "j", "value"])
    p = seq.p
    for t, mat in zip(seq.labels, seq.matrices):
        for i in range(p):
            for j in range(p):
                w.writerow([t, i, j, repr(float(mat[i, j]))])
    atomic_write_text(path, buf.getvalue())


def write_covariances_binary(seq: CovSequence, path: str | Path) -> None:
    """Header ``<4sIII`` (magic, version, p, n) then n*p*p little-endian doubles."""
    head = struct.pack("<4sIII", BINARY_MAGIC, BINARY_VERSION, seq.p, len(seq))
    atomic_write_bytes(path, head + np.ascontiguousarray(seq.matrices, dtype="<f8").tobytes())


def read_covariances_binary(path: str | Path, kind: str = "true", start: int = 1) -> CovSequence:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<4sIII")
    magic, version, p, n = struct.unpack("<4sIII", raw[:head])
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise DataError(f"{path}: not a covariance dump (magic={magic!r}, version={version})")
    mats = np.frombuffer(raw[head:], dtype="<f8")
    if mats.size != n * p * p:
        raise DataError(f"{path}: truncated payload")
    return CovSequence.from_arrays(mats.reshape(n, p, p).copy(), kind, start)


def read_covariances_csv(path: str | Path, kind: str = "forecast") -> CovSequence:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty covariance file")
    ts = sorted({int(r["t"]) for r in rows})
    p = max(int(r["i"]) for r in rows) + 1
    pos = {t: k for k, t in enumerate(ts)}
    mats = np.full((len(ts), p, p), np.nan)
    for r in rows:
        mats[pos[int(r["t"])], int(r["i"]), int(r["j"])] = float(r["value"])
    if np.isnan(mats).any():
        raise DataError(f"{path}: incomplete covariance entries")
    return CovSequence(mats, tuple(ts), kind)

