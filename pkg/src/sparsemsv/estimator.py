"""Second to fourth estimation steps and the end-to-end MSV fit.

Step 2 regresses ``ylog_t`` on a constant, ``ylog_{t-1}`` and the lagged
first-step residual.  Step 3 splits the sample covariance of the centered
panel between measurement noise and latent state with a trace calibration.
Step 4 takes the sample correlation of the raw returns.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    DataError,
    InsufficientSample,
    PhiSingular,
    SingularDesign,
    SplitInfeasible,
    UnstablePhi,
    ZeroVarianceColumn,
)
from .io import atomic_write_text
from .panels import LogSqPanel, ReturnPanel, ZeroPolicy, log_square_transform
from .penalized_var import CvPlan, SolverOpts, VarFit, fit_penalized_var
from .penalties import PenaltySpec
from .smoother import (
    DENSE_MAX_DIM,
    Backend,
    CovSequence,
    SmoothedPath,
    build_smoothed_covariances,
    mmsle_smooth,
    spectral_radius,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HALF_PI_SQ = np.pi**2 / 2.0  # variance of log(eps^2) for standard normal eps
PHI_RESCALE_TARGET = 0.995
R_CLAMP = 0.99
GAMMA_EIG_FLOOR = 1e-8


class StabilityPolicy(str, Enum):
    RESCALE = "rescale"
    ERROR = "error"


@dataclass(frozen=True)
class MsvModel:
    c_star: np.ndarray
    c: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    sigma_zeta: np.ndarray
    sigma_alpha: np.ndarray
    gamma: np.ndarray
    dbar: np.ndarray | None
    r_split: float
    m: int
    T: int
    spectral_radius_phi: float
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.phi.shape[0]


def fit_step2(ylog: LogSqPanel | np.ndarray, varfit: VarFit):
    """OLS of ``ylog_t`` on ``[1, ylog_{t-1}, uhat_{t-1}]`` for ``t = m+2..T``.

    Returns ``(c_star, phi, xi, residuals)``.
    """
    Y = np.asarray(getattr(ylog, "ylog", ylog), dtype=float)
    T, p = Y.shape
    m = varfit.m
    U = varfit.residuals
    if U.shape != (T - m, p):
        raise DataError(f"residuals {U.shape} not aligned with a {T}x{p} panel at m={m}")
    n = T - m - 1
    if n < 2 * (1 + 2 * p):
        raise InsufficientSample(f"{n} step-2 observations for {1 + 2 * p} regressors per equation")
    X = np.hstack([np.ones((n, 1)), Y[m:-1], U[:-1]])
    resp = Y[m + 1 :]
    coef, _, rank, sv = np.linalg.lstsq(X, resp, rcond=None)
    if rank < X.shape[1] or sv[-1] <= 1e-10 * sv[0]:
        raise SingularDesign(
            f"step-2 design has rank {rank} of {X.shape[1]} (condition {sv[0] / max(sv[-1], 1e-300):.3g})"
        )
    c_star = coef[0]
    phi = coef[1 : 1 + p].T
    xi = coef[1 + p :].T
    return c_star, phi, xi, resp - X @ coef


def sample_cov(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    return xc.T @ xc / x.shape[0]


def split_variance(x: LogSqPanel | np.ndarray, clamp: bool = False):
    """Split ``S_x`` as ``r S_x + (1 - r) S_x`` with ``tr(r S_x) = p pi^2/2``.

    Returns ``(sigma_zeta, sigma_alpha, r)``. Use :func:`split_from_cov` when
    the covariance matrix is already at hand.
    """
    xc = x.xcentered if isinstance(x, LogSqPanel) else np.asarray(x, dtype=float)
    return split_from_cov(sample_cov(xc), clamp=clamp)


def split_from_cov(S: np.ndarray, clamp: bool = False):
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    tr = float(np.trace(S))
    threshold = p * HALF_PI_SQ
    if not tr > threshold:
        if not clamp:
            raise SplitInfeasible(
                f"tr(S_x) = {tr:.6g} does not exceed p*pi^2/2 = {threshold:.6g}; "
                "the Gaussian noise calibration leaves no variance for the latent state"
            )
        warnings.warn(f"tr(S_x)={tr:.4g} <= {threshold:.4g}; clamping r to {R_CLAMP}", RuntimeWarning)
        r = R_CLAMP
    else:
        r = HALF_PI_SQ / (tr / p)
    return r * S, (1.0 - r) * S, float(r)


def estimate_gamma(panel: ReturnPanel | np.ndarray) -> tuple[np.ndarray, bool]:
    """Sample correlation of the returns; returns ``(gamma, floored)``.

    If the smallest eigenvalue is below ``1e-8`` a minimal ridge is added to
    the diagonal and the matrix rescaled back to unit diagonal.
    """
    y = np.asarray(getattr(panel, "data", panel), dtype=float)
    if y.shape[1] == 1:
        return np.ones((1, 1)), False
    sd = y.std(axis=0)
    if np.any(sd <= 0):
        raise ZeroVarianceColumn(f"columns {np.flatnonzero(sd <= 0).tolist()} have zero variance")
    R = np.corrcoef(y, rowvar=False)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    lmin = float(np.linalg.eigvalsh(R)[0])
    if lmin >= GAMMA_EIG_FLOOR:
        return R, False
    ridge = (GAMMA_EIG_FLOOR - lmin) / (1.0 - GAMMA_EIG_FLOOR)
    # small slack so rounding cannot land the eigenvalue just under the floor
    ridge *= 1.0 + 1e-6
    R = (R + ridge * np.eye(R.shape[0])) / (1.0 + ridge)
    np.fill_diagonal(R, 1.0)
    return R, True


@dataclass(frozen=True)
class MomentMatchReport:
    s_zeta: np.ndarray
    sigma_eta: np.ndarray
    s_u: np.ndarray
    is_szeta_pd: bool
    is_sx_minus_szeta_pd: bool | None


def _is_pd(a: np.ndarray) -> bool:
    return bool(np.linalg.eigvalsh(0.5 * (a + a.T))[0] > 0)


def moment_match_report(
    phi: np.ndarray, xi: np.ndarray, residuals: np.ndarray, s_x: np.ndarray | None = None
) -> MomentMatchReport:
    """Moment-matching estimate of the noise covariance (diagnostic only).

    ``S_zeta = -(A + A')/2`` with ``A = phi^{-1} xi S_u``; the implied state
    innovation covariance follows from the lag-0 moment identity.
    """
    phi = np.asarray(phi, dtype=float)
    if np.linalg.cond(phi) >= 1e10:
        raise PhiSingular(f"phi is numerically singular (condition {np.linalg.cond(phi):.3g})")
    s_u = sample_cov(residuals)
    A = np.linalg.solve(phi, xi @ s_u)
    s_zeta = -0.5 * (A + A.T)
    sigma_eta = s_u + xi @ s_u @ xi.T - s_zeta - phi @ s_zeta @ phi.T
    sigma_eta = 0.5 * (sigma_eta + sigma_eta.T)
    gap_pd = None if s_x is None else _is_pd(np.asarray(s_x) - s_zeta)
    return MomentMatchReport(s_zeta, sigma_eta, s_u, _is_pd(s_zeta), gap_pd)


@dataclass(frozen=True)
class MsvFitResult:
    model: MsvModel
    varfit: VarFit
    logsq: LogSqPanel
    path: SmoothedPath
    smoothed: CovSequence


def admissible_phi_scale(phi: np.ndarray, sigma_alpha: np.ndarray) -> float:
    """Largest ``k <= 1`` with ``sigma_alpha - k^2 phi sigma_alpha phi'`` PSD.

    Equals ``1 / ||L^{-1} phi L||_2`` for ``sigma_alpha = L L'``; anything
    above it makes the stacked state covariance indefinite.
    """
    try:
        L = np.linalg.cholesky(sigma_alpha)
    except np.linalg.LinAlgError:
        raise DataError("sigma_alpha is not positive definite") from None
    M = np.linalg.solve(L, phi @ L)
    norm = np.linalg.norm(M, 2)
    return 1.0 if norm <= 1.0 else 1.0 / norm


def fit_msv_full(
    panel: ReturnPanel,
    m: int,
    spec: PenaltySpec,
    plan: CvPlan | None = None,
    opts: SolverOpts = SolverOpts(),
    zero_policy: ZeroPolicy | str = ZeroPolicy.HALF_MIN_NONZERO,
    stability: StabilityPolicy | str = StabilityPolicy.RESCALE,
    clamp_r: bool = False,
    backend: Backend | str = Backend.AUTO,
    dense_max_dim: int = DENSE_MAX_DIM,
    meta: dict[str, Any] | None = None,
) -> MsvFitResult:
    """Run all four steps, then smooth once to obtain the scale factors."""
    logsq = log_square_transform(panel, zero_policy)
    varfit = fit_penalized_var(logsq, m, spec, opts, plan)
    c_star, phi, xi, _ = fit_step2(logsq, varfit)

    s_x = sample_cov(logsq.xcentered)
    sigma_zeta, sigma_alpha, r = split_from_cov(s_x, clamp=clamp_r)
    gamma, floored = estimate_gamma(panel)

    rho = spectral_radius(phi)
    policy = StabilityPolicy(stability)
    rescaled = False
    if rho >= 1:
        if policy is StabilityPolicy.ERROR:
            raise UnstablePhi(f"estimated phi has spectral radius {rho:.4f} >= 1")
        phi = phi * (PHI_RESCALE_TARGET / rho)
        rescaled = True
        logger.warning("phi spectral radius %.4f >= 1; rescaled to %.3f", rho, PHI_RESCALE_TARGET)
    kappa = admissible_phi_scale(phi, sigma_alpha)
    state_rescaled = False
    if kappa < 1:
        if policy is StabilityPolicy.ERROR:
            raise UnstablePhi("sigma_alpha - phi sigma_alpha phi' is indefinite; no valid state covariance")
        phi = phi * (PHI_RESCALE_TARGET * kappa)
        state_rescaled = True
        logger.warning("phi shrunk by %.4f so that sigma_alpha is a valid stationary covariance",
                       PHI_RESCALE_TARGET * kappa)
    c = np.linalg.solve(np.eye(panel.p) - phi, c_star)

    info = {
        "penalty": spec.family.name,
        "lambda": varfit.lambda_used,
        "a": spec.a,
        "b": spec.b,
        "cv": plan is not None,
        "cv_grid": None if varfit.cv_grid is None else varfit.cv_grid.tolist(),
        "cv_curve": None if varfit.cv_curve is None else varfit.cv_curve.tolist(),
        "support_size": len(varfit.support),
        "step1_converged": varfit.converged,
        "phi_rescaled": rescaled,
        "phi_spectral_radius_raw": rho,
        "phi_state_rescaled": state_rescaled,
        "gamma_floored": floored,
        "asset_labels": list(panel.asset_labels),
    }
    info.update(meta or {})
    model = MsvModel(
        c_star=c_star, c=c, phi=phi, xi=xi, sigma_zeta=sigma_zeta, sigma_alpha=sigma_alpha,
        gamma=gamma, dbar=None, r_split=r, m=m, T=panel.T,
        spectral_radius_phi=spectral_radius(phi), meta=info,
    )
    path = mmsle_smooth(model, logsq.ylog, backend, dense_max_dim)
    dbar, smoothed = build_smoothed_covariances(model, panel.data, path.raw)
    model = replace(model, dbar=dbar)
    return MsvFitResult(model, varfit, logsq, path, smoothed)


def fit_msv(panel: ReturnPanel, m: int, spec: PenaltySpec, plan: CvPlan | None = None, **kwargs) -> MsvModel:
    return fit_msv_full(panel, m, spec, plan, **kwargs).model


_MATRIX_FIELDS = ("c_star", "c", "phi", "xi", "sigma_zeta", "sigma_alpha", "gamma", "dbar")


def model_to_dict(model: MsvModel) -> dict[str, Any]:
    out: dict[str, Any] = {"version": SCHEMA_VERSION, "kind": "msv", "p": model.p, "m": model.m, "T": model.T}
    for name in _MATRIX_FIELDS:
        val = getattr(model, name)
        out[name] = None if val is None else np.asarray(val).tolist()
    out["r_split"] = model.r_split
    out["spectral_radius_phi"] = model.spectral_radius_phi
    out["meta"] = model.meta
    return out


def model_from_dict(d: dict[str, Any]) -> MsvModel:
    if d.get("version") != SCHEMA_VERSION or d.get("kind", "msv") != "msv":
        raise DataError(f"unsupported model file (version={d.get('version')}, kind={d.get('kind')})")
    try:
        arrays = {k: None if d[k] is None else np.array(d[k], dtype=float) for k in _MATRIX_FIELDS}
        return MsvModel(
            **arrays, r_split=float(d["r_split"]), m=int(d["m"]), T=int(d["T"]),
            spectral_radius_phi=float(d["spectral_radius_phi"]), meta=dict(d.get("meta") or {}),
        )
    except KeyError as exc:
        raise DataError(f"model file lacks field {exc}") from None


def save_model(model: MsvModel, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1))


def load_model(path: str | Path) -> MsvModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
