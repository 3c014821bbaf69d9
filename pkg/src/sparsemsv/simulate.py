"""Synthetic panels: multivariate ARCH(q*), BEKK(1,1) and MSV processes.

All randomness comes from a Philox counter-based generator so a seed gives
the same panel on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import AdmissibilitySampleExhausted, ConfigError, UnstablePhi
from .panels import ReturnPanel
from .smoother import CovSequence, spectral_radius

EULER_GAMMA = 0.5772156649015329
# E[log eps^2] for eps ~ N(0, 1)
MEAN_LOG_CHI2 = -(EULER_GAMMA + np.log(2.0))
DEFAULT_BURN_IN = 500
BEKK_MAX_REJECTIONS = 100_000
PD_FAILURE_BUDGET = 0.01


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class DgpSpec:
    kind: str  # "march", "bekk" or "msv"
    p: int
    T: int
    seed: int = 0
    burn_in: int = DEFAULT_BURN_IN
    q_star: int = 1
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("march", "bekk", "msv"):
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        if self.p < 1 or self.T < 2:
            raise ConfigError(f"need p >= 1 and T >= 2, got p={self.p}, T={self.T}")
        if self.q_star < 1:
            raise ConfigError(f"q_star must be >= 1, got {self.q_star}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be >= 0, got {self.burn_in}")


@dataclass(frozen=True)
class SimResult:
    panel: ReturnPanel
    truth: CovSequence
    params: dict[str, np.ndarray]
    rejections: int = 0
    logvol: np.ndarray | None = None  # MSV only, T x p

    def manifest(self, spec: DgpSpec) -> dict[str, Any]:
        return {
            "kind": spec.kind, "p": spec.p, "T": spec.T, "seed": spec.seed,
            "burn_in": spec.burn_in, "q_star": spec.q_star, "rejections": self.rejections,
            "rng": "numpy Philox", "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
        }


def sym_sqrt(h: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _is_pd(h: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(h)
        return True
    except np.linalg.LinAlgError:
        return False


def sample_omega(p: int, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    for _ in range(max_tries):
        om = np.triu(rng.uniform(-0.01, 0.01, (p, p)), 1)
        om = om + om.T
        om[np.diag_indices(p)] = rng.uniform(0.1, 0.2, p)
        if _is_pd(om):
            return om
    raise AdmissibilitySampleExhausted(f"no positive definite intercept in {max_tries} draws")


def sample_march_coefficients(
    p: int, q_star: int, rng: np.random.Generator, enforce_positivity: bool = True
) -> np.ndarray:
    """``q_star`` symmetric p^2 x p^2 matrices with |A_k| nonincreasing in k.

    Entries are drawn independently, then for every position the q_star draws
    are reordered by decreasing magnitude, which keeps each marginal uniform.
    With ``enforce_positivity`` the off-diagonal entries are shrunk towards
    zero just enough for every ``A_k`` to be positive semidefinite, which
    makes every ``H_t`` positive definite.
    """
    n = p * p
    iu = np.triu_indices(n)
    diag = iu[0] == iu[1]
    draws = np.empty((q_star, iu[0].size))
    draws[:, diag] = rng.uniform(0.01, 0.05, (q_star, int(diag.sum())))
    draws[:, ~diag] = rng.uniform(-0.01, 0.01, (q_star, int((~diag).sum())))
    order = np.argsort(-np.abs(draws), axis=0, kind="stable")
    draws = np.take_along_axis(draws, order, axis=0)
    A = np.zeros((q_star, n, n))
    for k in range(q_star):
        A[k][iu] = draws[k]
        A[k] = A[k] + np.triu(A[k], 1).T
    if enforce_positivity:
        A = shrink_to_psd(A)
    return A


def shrink_to_psd(A: np.ndarray, iters: int = 60) -> np.ndarray:
    """Scale the off-diagonal parts of all ``A_k`` by one common factor.

    The factor is the largest in [0, 1] (to bisection precision) leaving every
    ``A_k`` positive semidefinite; a common factor keeps the ordering across k.
    """
    diag = np.stack([np.diag(np.diag(a)) for a in A])
    off = A - diag

    def psd(s):
        return all(np.linalg.eigvalsh(d + s * o)[0] >= 0 for d, o in zip(diag, off))

    if psd(1.0):
        return A
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if psd(mid):
            lo = mid
        else:
            hi = mid
    return diag + lo * off


def march_covariance(omega: np.ndarray, A: np.ndarray, lagged_eps: np.ndarray) -> np.ndarray:
    """``Omega + sum_k (I (x) e_k') A_k (I (x) e_k)`` for ``lagged_eps[k] = eps_{t-k-1}``."""
    p = omega.shape[0]
    H = omega.copy()
    for Ak, e in zip(A, lagged_eps):
        H += np.einsum("iajb,a,b->ij", Ak.reshape(p, p, p, p), e, e)
    return 0.5 * (H + H.T)


def simulate_march(spec: DgpSpec) -> SimResult:
    rng = make_rng(spec.seed)
    p, q = spec.p, spec.q_star
    omega = np.asarray(spec.params.get("omega", sample_omega(p, rng)), dtype=float)
    A = spec.params.get("A")
    if A is None:
        A = sample_march_coefficients(p, q, rng, spec.params.get("enforce_positivity", True))
    else:
        A = np.asarray(A, dtype=float).reshape(q, p * p, p * p)
    n_total = spec.T + spec.burn_in
    eps = np.zeros((n_total + q, p))
    eps[:q] = rng.standard_normal((q, p))
    H = np.empty((n_total, p, p))
    rejections = 0
    budget = max(1, int(PD_FAILURE_BUDGET * n_total))
    for t in range(n_total):
        s = t + q
        while True:
            Ht = march_covariance(omega, A, eps[s - q : s][::-1])
            if _is_pd(Ht):
                break
            rejections += 1
            if rejections > budget:
                raise AdmissibilitySampleExhausted(
                    f"M-ARCH covariance failed positive definiteness {rejections} times"
                )
            # redraw the most recent innovation from its own conditional law
            scale = sym_sqrt(H[t - 1]) if t > 0 else np.eye(p)
            eps[s - 1] = scale @ rng.standard_normal(p)
        H[t] = Ht
        eps[s] = sym_sqrt(Ht) @ rng.standard_normal(p)
    keep = slice(spec.burn_in, n_total)
    y = eps[q:][keep]
    return SimResult(
        ReturnPanel(y), CovSequence.from_arrays(H[keep], "true", start=1),
        {"omega": omega, "A": A}, rejections,
    )


def bekk_stationarity_radius(A: np.ndarray, B: np.ndarray) -> float:
    """Spectral radius of ``D+ (A (x) A + B (x) B) D`` on the half-vectorized space."""
    p = A.shape[0]
    D = duplication_matrix(p)
    Dplus = np.linalg.pinv(D)
    return spectral_radius(Dplus @ (np.kron(A, A) + np.kron(B, B)) @ D)


def duplication_matrix(p: int) -> np.ndarray:
    """``D`` with ``vec(S) = D vech(S)`` for symmetric ``S`` (column-major vec)."""
    D = np.zeros((p * p, p * (p + 1) // 2))
    k = 0
    for j in range(p):
        for i in range(j, p):
            D[j * p + i, k] = 1.0
            D[i * p + j, k] = 1.0
            k += 1
    return D


def sample_bekk_coefficients(p: int, rng: np.random.Generator, max_rejections: int = BEKK_MAX_REJECTIONS):
    """Uniform(-0.8, 0.8) entries, rejection-sampled until stationary.

    Returns ``(A, B, rejections)``.  Draws with ``rho(A) >= 1`` or
    ``rho(B) >= 1`` are rejected before the full test: the vech operator of
    ``X -> A X A'`` has radius ``rho(A)**2`` and adding the positive map
    ``X -> B X B'`` cannot lower it.
    """
    for k in range(max_rejections + 1):
        A = rng.uniform(-0.8, 0.8, (p, p))
        B = rng.uniform(-0.8, 0.8, (p, p))
        if spectral_radius(A) >= 1 or spectral_radius(B) >= 1:
            continue
        if bekk_stationarity_radius(A, B) < 1:
            return A, B, k
    raise AdmissibilitySampleExhausted(
        f"no stationary BEKK draw with U(-0.8, 0.8) entries in {max_rejections} tries at p={p}"
    )


def simulate_bekk(spec: DgpSpec) -> SimResult:
    rng = make_rng(spec.seed)
    p = spec.p
    omega = np.asarray(spec.params.get("omega", sample_omega(p, rng)), dtype=float)
    rejections = 0
    if "A" in spec.params and "B" in spec.params:
        A = np.asarray(spec.params["A"], dtype=float)
        B = np.asarray(spec.params["B"], dtype=float)
    else:
        A, B, rejections = sample_bekk_coefficients(p, rng)
    n_total = spec.T + spec.burn_in
    H = np.empty((n_total, p, p))
    eps = np.empty((n_total, p))
    e_prev = rng.standard_normal(p)
    H_prev = omega
    for t in range(n_total):
        Ae = A @ e_prev
        Ht = omega + np.outer(Ae, Ae) + B @ H_prev @ B.T
        Ht = 0.5 * (Ht + Ht.T)
        H[t] = Ht
        eps[t] = sym_sqrt(Ht) @ rng.standard_normal(p)
        e_prev, H_prev = eps[t], Ht
    keep = slice(spec.burn_in, n_total)
    return SimResult(
        ReturnPanel(eps[keep]), CovSequence.from_arrays(H[keep], "true", start=1),
        {"omega": omega, "A": A, "B": B}, rejections,
    )


def stationary_state_cov(phi: np.ndarray, sigma_eta: np.ndarray) -> np.ndarray:
    """Solve ``vec(S) = (I - phi (x) phi)^{-1} vec(sigma_eta)``."""
    p = phi.shape[0]
    vec = np.linalg.solve(np.eye(p * p) - np.kron(phi, phi), sigma_eta.reshape(-1, order="F"))
    S = vec.reshape(p, p, order="F")
    return 0.5 * (S + S.T)


def default_msv_params(p: int) -> dict[str, np.ndarray]:
    phi = np.diag(np.linspace(0.8, 0.6, p)) if p > 1 else np.array([[0.8]])
    sigma_eta = 0.8 * np.eye(p) + 0.2 * np.ones((p, p))
    gamma = 0.6 * np.eye(p) + 0.4 * np.ones((p, p))
    return {"mu": np.zeros(p), "phi": phi, "sigma_eta": sigma_eta, "gamma": gamma}


def _factor(s: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return sym_sqrt(s)


def simulate_msv(spec: DgpSpec) -> SimResult:
    """``y_t = diag(exp(h_t/2)) eps_t``, ``h_{t+1} = mu + phi (h_t - mu) + eta_t``.

    ``h`` starts from its stationary distribution.  The result's ``logvol``
    holds ``h_t`` and ``params`` additionally records the innovations
    ``eps`` and ``eta`` actually drawn (post burn-in).
    """
    rng = make_rng(spec.seed)
    p = spec.p
    params = default_msv_params(p)
    params.update({k: np.asarray(v, dtype=float) for k, v in spec.params.items()})
    mu, phi, s_eta, gamma = (np.atleast_1d(params["mu"]), np.atleast_2d(params["phi"]),
                             np.atleast_2d(params["sigma_eta"]), np.atleast_2d(params["gamma"]))
    rho = spectral_radius(phi)
    if not rho < 1:
        raise UnstablePhi(f"phi has spectral radius {rho:.4f} >= 1")
    n_total = spec.T + spec.burn_in
    L_h = _factor(stationary_state_cov(phi, s_eta))
    L_eta = _factor(s_eta)
    L_eps = _factor(gamma)
    h = np.empty((n_total, p))
    eta = rng.standard_normal((n_total, p)) @ L_eta.T
    eps = rng.standard_normal((n_total, p)) @ L_eps.T
    h[0] = mu + L_h @ rng.standard_normal(p)
    for t in range(n_total - 1):
        h[t + 1] = mu + phi @ (h[t] - mu) + eta[t]
    keep = slice(spec.burn_in, n_total)
    h = h[keep]
    d = np.exp(h / 2.0)
    y = d * eps[keep]
    H = d[:, :, None] * gamma[None] * d[:, None, :]
    params = dict(params, eps=eps[keep], eta=eta[keep])
    return SimResult(ReturnPanel(y), CovSequence.from_arrays(H, "true", start=1), params, 0, h)


def simulate(spec: DgpSpec) -> SimResult:
    return {"march": simulate_march, "bekk": simulate_bekk, "msv": simulate_msv}[spec.kind](spec)


def varma_parameters(phi: np.ndarray, sigma_eta: np.ndarray, sigma_zeta: np.ndarray,
                     tol: float = 1e-13, max_iter: int = 100_000):
    """Invertible VARMA(1,1) moving-average matrix and innovation covariance.

    Solves ``sigma_eta + sigma_zeta + phi sigma_zeta phi' = S_u + xi S_u xi'``
    and ``-phi sigma_zeta = xi S_u`` by fixed-point iteration.
    Returns ``(xi, sigma_u)``.
    """
    g0 = sigma_eta + sigma_zeta + phi @ sigma_zeta @ phi.T
    g1 = -phi @ sigma_zeta
    s_u = g0.copy()
    for _ in range(max_iter):
        xi = np.linalg.solve(s_u.T, g1.T).T
        new = g0 - xi @ s_u @ xi.T
        new = 0.5 * (new + new.T)
        if np.max(np.abs(new - s_u)) < tol:
            s_u = new
            break
        s_u = new
    xi = np.linalg.solve(s_u.T, g1.T).T
    return xi, s_u


def msv_step2_truth(params: dict[str, np.ndarray], sigma_zeta: np.ndarray | None = None):
    """Population ``(c_star, phi, xi)`` of the step-2 regression for an MSV DGP.

    ``sigma_zeta`` defaults to ``(pi^2/2) I``, exact when ``gamma`` is the
    identity.
    """
    mu = np.atleast_1d(params["mu"])
    phi = np.atleast_2d(params["phi"])
    p = phi.shape[0]
    sz = (np.pi**2 / 2.0) * np.eye(p) if sigma_zeta is None else sigma_zeta
    c = mu + MEAN_LOG_CHI2
    xi, _ = varma_parameters(phi, np.atleast_2d(params["sigma_eta"]), sz)
    return (np.eye(p) - phi) @ c, phi, xi
