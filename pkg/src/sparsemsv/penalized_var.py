"""Sparse VAR(m) fit by penalized least squares (first estimation step).

The loss separates across equations, so each row of the coefficient matrix is
an independent penalized regression on the shared lag-stacked design.  Rows
are solved by cyclic coordinate descent on the Gram matrix with the exact
univariate minimizer of :mod:`sparsemsv.penalties` as the update.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateFolds, InsufficientSample, NoConvergence
from .panels import LogSqPanel, lag_stack
from .penalties import Family, PenaltySpec, _derivative, _minimize, _penalty_sum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOpts:
    tol: float = 1e-8
    max_sweeps: int = 1000
    strict: bool = False  # raise NoConvergence instead of flagging


@dataclass(frozen=True)
class CvPlan:
    n_folds: int = 5
    gap: int | None = None  # None means gap = m
    lambda_grid: tuple[float, ...] | None = None
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-4
    score: str = "mse"
    selection: str = "min"  # or "1se": largest level within one standard error of the minimum

    def __post_init__(self):
        if self.n_folds < 2:
            raise DegenerateFolds(f"need at least 2 folds, got {self.n_folds}")
        if self.gap is not None and self.gap < 0:
            raise DegenerateFolds(f"gap must be >= 0, got {self.gap}")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float)
            if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) >= 0):
                raise DegenerateFolds("lambda grid must be nonempty, >= 0 and strictly descending")
        if self.score != "mse":
            raise DegenerateFolds(f"unsupported CV score {self.score!r}")
        if self.selection not in ("min", "1se"):
            raise DegenerateFolds(f"unknown selection rule {self.selection!r}")


@dataclass(frozen=True)
class VarFit:
    psi: np.ndarray  # p x (p*m), lag 1 block first
    residuals: np.ndarray  # (T - m) x p
    lambda_used: float
    m: int
    objective_trace: list[float]
    converged: bool = True
    sweeps: int = 0
    cv_grid: np.ndarray | None = None
    cv_curve: np.ndarray | None = None
    spec: PenaltySpec | None = field(default=None, repr=False)

    @property
    def support(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in np.argwhere(self.psi != 0.0)}

    @property
    def p(self) -> int:
        return self.psi.shape[0]

    def lag_matrix(self, k: int) -> np.ndarray:
        """The coefficient block on lag ``k`` (1-based)."""
        p = self.p
        return self.psi[:, (k - 1) * p : k * p]


@njit(cache=True)
def _row_objective(half_yy, c, r, beta, family, lam, shape):
    # 0.5*mean(y^2) - c'b + 0.5 b'Gb with Gb = c - r
    s = half_yy
    for j in range(beta.shape[0]):
        s -= 0.5 * beta[j] * (c[j] + r[j])
    return s + _penalty_sum(family, lam, shape, beta)


@njit(cache=True)
def _coordinate_descent(G, C, half_yy, B, family, lam, shape, tol, max_sweeps, trace):
    """Cyclic coordinate descent; ``B`` (rows x d) is updated in place.

    ``trace[k]`` receives the total objective after sweep ``k`` (``trace[0]``
    is the starting objective).  Returns (sweeps, converged).
    """
    nrow, d = B.shape
    R = np.empty((nrow, d))
    for i in range(nrow):
        for j in range(d):
            acc = C[j, i]
            for k in range(d):
                acc -= G[j, k] * B[i, k]
            R[i, j] = acc
    row_obj = np.empty(nrow)
    for i in range(nrow):
        row_obj[i] = _row_objective(half_yy[i], C[:, i], R[i], B[i], family, lam, shape)
    trace[0] = row_obj.sum()
    active = np.ones(nrow, dtype=np.bool_)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        n_active = 0
        for i in range(nrow):
            if not active[i]:
                continue
            beta = B[i]
            r = R[i]
            maxdelta = 0.0
            for j in range(d):
                w = G[j, j]
                if w <= 0.0:
                    continue
                old = beta[j]
                new = _minimize(family, lam, shape, old + r[j] / w, w)
                delta = new - old
                if delta != 0.0:
                    beta[j] = new
                    for k in range(d):
                        r[k] -= G[k, j] * delta
                    if abs(delta) > maxdelta:
                        maxdelta = abs(delta)
            row_obj[i] = _row_objective(half_yy[i], C[:, i], r, beta, family, lam, shape)
            if maxdelta <= tol:
                active[i] = False
            else:
                n_active += 1
        trace[sweeps] = row_obj.sum()
        if n_active == 0:
            return sweeps, True
    return sweeps, False


@dataclass
class _Moments:
    """Sufficient statistics of a least-squares problem ``Y ~ Z B'``."""

    G: np.ndarray
    C: np.ndarray
    half_yy: np.ndarray
    n: int

    @classmethod
    def from_data(cls, Z: np.ndarray, Y: np.ndarray) -> "_Moments":
        n = Z.shape[0]
        G = np.ascontiguousarray(Z.T @ Z / n)
        C = np.ascontiguousarray(Z.T @ Y / n)
        return cls(G, C, 0.5 * np.einsum("ti,ti->i", Y, Y) / n, n)

    def lambda_max(self) -> float:
        """Smallest LASSO level at which the all-zero solution is optimal."""
        return float(np.max(np.abs(self.C))) if self.C.size else 0.0


def _solve(mom: _Moments, spec: PenaltySpec, opts: SolverOpts, B0: np.ndarray | None = None):
    nrow = mom.C.shape[1]
    d = mom.G.shape[0]
    B = np.zeros((nrow, d)) if B0 is None else np.array(B0, dtype=float, order="C")
    trace = np.empty(opts.max_sweeps + 1)
    sweeps, ok = _coordinate_descent(
        mom.G, mom.C, mom.half_yy, B, int(spec.family), float(spec.lam), float(spec.shape),
        float(opts.tol), int(opts.max_sweeps), trace,
    )
    return B, trace[: sweeps + 1].tolist(), sweeps, ok


def _solve_with_init(mom: _Moments, spec: PenaltySpec, opts: SolverOpts, B0=None):
    """Solve, initializing SCAD/MCP at the LASSO solution for the same level."""
    if spec.family is not Family.LASSO and spec.lam > 0:
        lasso = PenaltySpec(Family.LASSO, spec.lam)
        B_l, _, _, _ = _solve(mom, lasso, opts, B0)
        return _solve(mom, spec, opts, B_l)
    return _solve(mom, spec, opts, B0)


def _check_convergence(ok: bool, sweeps: int, opts: SolverOpts, what: str):
    if ok:
        return
    msg = f"{what}: no convergence after {sweeps} sweeps (tol={opts.tol})"
    if opts.strict:
        raise NoConvergence(msg)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


def solve_penalized_ls(
    Z: np.ndarray, Y: np.ndarray, spec: PenaltySpec, opts: SolverOpts = SolverOpts()
) -> tuple[np.ndarray, list[float], int, bool]:
    """Penalized multi-response least squares ``min (1/2n)||Y - Z B'||^2 + pen(B)``.

    Returns ``(B, objective_trace, sweeps, converged)``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    mom = _Moments.from_data(np.asarray(Z, dtype=float), Y)
    return _solve_with_init(mom, spec, opts)


def default_lambda_grid(x: LogSqPanel, m: int, plan: CvPlan = CvPlan()) -> np.ndarray:
    Z, Y = lag_stack(x, m)
    lmax = _Moments.from_data(Z, Y).lambda_max()
    return np.geomspace(lmax, lmax * plan.lambda_min_ratio, plan.n_lambda)


def _folds(n: int, n_folds: int, gap: int, min_train: int):
    bounds = np.linspace(0, n, n_folds + 1).round().astype(int)
    idx = np.arange(n)
    out = []
    for k in range(n_folds):
        lo, hi = bounds[k], bounds[k + 1]
        if hi <= lo:
            raise DegenerateFolds(f"fold {k} is empty (n={n}, folds={n_folds})")
        train = idx[(idx < lo - gap) | (idx >= hi + gap)]
        if train.size <= min_train:
            raise DegenerateFolds(
                f"fold {k}: {train.size} training rows after removing a gap of {gap}; "
                f"need more than {min_train}"
            )
        out.append((train, idx[lo:hi]))
    return out


def hv_cross_validate(
    x: LogSqPanel,
    m: int,
    spec: PenaltySpec,
    plan: CvPlan = CvPlan(),
    opts: SolverOpts = SolverOpts(),
) -> tuple[float, np.ndarray, np.ndarray]:
    """hv-block cross-validation of the regularization level.

    Test blocks are contiguous; ``gap`` rows on both sides of each block are
    dropped from its training set.  Returns ``(lambda_star, grid, curve)``
    where ``curve[k]`` is the fold-averaged one-step-ahead MSE at ``grid[k]``.
    Exact ties resolve to the larger level.  With ``selection="1se"`` the
    largest level whose curve value is within one standard error (across
    folds) of the minimum is returned instead.
    """
    Z, Y = lag_stack(x, m)
    n, d = Z.shape
    gap = m if plan.gap is None else plan.gap
    if plan.lambda_grid is None:
        grid = np.geomspace(1.0, plan.lambda_min_ratio, plan.n_lambda)
        grid *= _Moments.from_data(Z, Y).lambda_max()
    else:
        grid = np.asarray(plan.lambda_grid, dtype=float)
    folds = _folds(n, plan.n_folds, gap, d + 1)
    per_fold = np.zeros((len(folds), grid.size))
    for f, (train, test) in enumerate(folds):
        mom = _Moments.from_data(Z[train], Y[train])
        B_lasso = None
        for k, lam in enumerate(grid):
            lasso = PenaltySpec(Family.LASSO, lam)
            B_lasso, _, _, _ = _solve(mom, lasso, opts, B_lasso)
            if spec.family is Family.LASSO or lam == 0:
                B = B_lasso
            else:
                B, _, _, _ = _solve(mom, spec.with_lambda(lam), opts, B_lasso)
            err = Y[test] - Z[test] @ B.T
            per_fold[f, k] = np.mean(err * err)
    curve = per_fold.mean(axis=0)
    best = int(np.argmin(curve))
    if plan.selection == "1se":
        se = per_fold[:, best].std(ddof=1) / np.sqrt(len(folds))
        best = int(np.flatnonzero(curve <= curve[best] + se)[0])
    return float(grid[best]), grid, curve


def fit_penalized_var(
    x: LogSqPanel,
    m: int,
    spec: PenaltySpec,
    opts: SolverOpts = SolverOpts(),
    plan: CvPlan | None = None,
) -> VarFit:
    """Fit the sparse VAR(m) approximation of the centered log-squared panel.

    With ``plan`` given the level in ``spec`` is ignored and chosen by
    :func:`hv_cross_validate`.
    """
    if x.T <= m + x.p:
        raise InsufficientSample(f"T={x.T} too short for m={m}, p={x.p}")
    grid = curve = None
    if plan is not None:
        lam, grid, curve = hv_cross_validate(x, m, spec, plan, opts)
        spec = spec.with_lambda(lam)
    Z, Y = lag_stack(x, m)
    mom = _Moments.from_data(Z, Y)
    B, trace, sweeps, ok = _solve_with_init(mom, spec, opts)
    _check_convergence(ok, sweeps, opts, f"{spec.family.name} fit at lambda={spec.lam:.3g}")
    resid = Y - Z @ B.T
    return VarFit(
        psi=B, residuals=resid, lambda_used=spec.lam, m=m, objective_trace=trace,
        converged=ok, sweeps=sweeps, cv_grid=grid, cv_curve=curve, spec=spec,
    )


@dataclass(frozen=True)
class KktReport:
    violations: list[tuple[int, int, float, float]]  # (row, col, excess, bound)
    max_excess: float

    @property
    def ok(self) -> bool:
        return not self.violations


def kkt_check(fit: VarFit, x: LogSqPanel, spec: PenaltySpec | None = None, tol: float = 1e-6) -> KktReport:
    """First-order conditions of the penalized objective at ``fit.psi``.

    Active coefficients need ``|grad + pen'(|b|) sign(b)| <= tol``; zero
    coefficients need ``|grad| <= pen'(0+) + tol``.
    """
    spec = spec if spec is not None else fit.spec.with_lambda(fit.lambda_used)
    Z, Y = lag_stack(x, fit.m)
    mom = _Moments.from_data(Z, Y)
    grad = fit.psi @ mom.G - mom.C.T
    fam, lam, shape = int(spec.family), spec.lam, spec.shape
    violations = []
    worst = 0.0
    for (i, j), b in np.ndenumerate(fit.psi):
        if b != 0.0:
            excess = abs(grad[i, j] + _derivative(fam, lam, shape, abs(b)) * np.sign(b))
            bound = 0.0
        else:
            bound = _derivative(fam, lam, shape, 0.0)
            excess = abs(grad[i, j]) - bound
        worst = max(worst, excess)
        if excess > tol:
            violations.append((i, j, float(excess), float(bound)))
    return KktReport(violations, float(worst))
