"""Transaction-cost-aware mean-variance allocation.

Solves, for one day,

    max_w  mu'w - gamma * w' Sigma w - tau * ||w - w_prev||_1
    s.t.   1'w = 1,  0 <= w <= w_max

by FISTA proximal-gradient iterations (the simplex/box/L1 prox is solved
exactly by bisection on the budget multiplier) followed by an active-set
polish that solves the reduced KKT system, so every returned solution carries
a verified stationarity certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .validation import as_float_array, check_symmetric

_FREE, _LO, _HI, _TIE = 0, 1, 2, 3


@dataclass(frozen=True)
class MvoConfig:
    """Risk aversion, linear transaction cost, and per-asset cap."""

    gamma: float = 5.0
    tau: float = 0.001
    w_max: float = 0.35

    def __post_init__(self):
        bad = []
        if self.gamma <= 0:
            bad.append("gamma")
        if self.tau < 0:
            bad.append("tau")
        if not (0.0 < self.w_max <= 1.0):
            bad.append("w_max")
        if bad:
            raise ConfigError(f"invalid MVO config: {bad}", keys=bad)


@dataclass(frozen=True)
class MvoSolution:
    """Solved weights with the per-solve certificate and diagnostics."""

    w: np.ndarray
    objective: float
    kkt_residual: float
    turnover: float  # 0.5 * ||w - w_prev||_1
    binding_caps: tuple[int, ...]
    nu: float  # budget multiplier

    def log_row(self, date) -> dict:
        return {
            "date": date,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "turnover": self.turnover,
            "binding_caps": ";".join(str(i) for i in self.binding_caps),
        }


def _prox_simplex_box_l1(v: np.ndarray, p: np.ndarray, thr: float, w_max: float) -> np.ndarray:
    """argmin_w 0.5||w - v||^2 + thr*||w - p||_1 over the simplex-box set.

    Dualizes the budget constraint; w_i(nu) is piecewise linear and
    nonincreasing, so bisection on nu is exact to machine precision.
    """

    def w_of(nu: float) -> np.ndarray:
        z = v - nu - p
        soft = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
        return np.clip(p + soft, 0.0, w_max)

    lo = float(v.min() - w_max - thr - 2.0)
    hi = float(v.max() + thr + 2.0)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if w_of(mid).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return w_of(0.5 * (lo + hi))


def _objective(w, mu, sigma, gamma, tau, p) -> float:
    return float(mu @ w - gamma * w @ sigma @ w - tau * np.abs(w - p).sum())


def _fista(mu, sigma, gamma, tau, p, w_max, max_iter: int) -> np.ndarray:
    n = mu.shape[0]
    L = 2.0 * gamma * float(np.linalg.eigvalsh(sigma).max())
    L = max(L, 1e-12)
    w = _prox_simplex_box_l1(np.full(n, 1.0 / n), p, 0.0, w_max)
    y = w.copy()
    t = 1.0
    f_prev = np.inf
    for it in range(max_iter):
        grad = 2.0 * gamma * (sigma @ y) - mu
        w_new = _prox_simplex_box_l1(y - grad / L, p, tau / L, w_max)
        f_new = -_objective(w_new, mu, sigma, gamma, tau, p)
        if f_new > f_prev:  # function restart
            t = 1.0
            y = w.copy()
            f_prev = np.inf
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        if it > 30 and np.abs(w_new - w).max() < 1e-11:
            return w_new
        w, t, f_prev = w_new, t_new, f_new
    return w


def kkt_residual(w, nu, mu, sigma, gamma, tau, w_prev, w_max) -> float:
    """Max-norm KKT residual of the buy/sell reformulation at (w, nu).

    The L1 subgradient and bound multipliers are reconstructed optimally from
    (w, nu), so the residual measures exactly the irreducible violation.
    """
    grad = 2.0 * gamma * (sigma @ w) - mu
    r = grad + nu
    trades = np.abs(w - w_prev) > 1e-12
    t = np.where(trades, tau * np.sign(w - w_prev), np.clip(-r, -tau, tau))
    stat = r + t
    at_lo = w <= 1e-11
    at_hi = w >= w_max - 1e-11
    lam_lo = np.where(at_lo, np.maximum(stat, 0.0), 0.0)
    lam_hi = np.where(at_hi, np.maximum(-stat, 0.0), 0.0)
    res_stat = float(np.abs(stat - lam_lo + lam_hi).max())
    res_primal = max(
        abs(float(w.sum()) - 1.0),
        float(np.maximum(-w, 0.0).max()),
        float(np.maximum(w - w_max, 0.0).max()),
    )
    res_comp = max(
        float((lam_lo * np.abs(w)).max()),
        float((lam_hi * np.abs(w_max - w)).max()),
    )
    return max(res_stat, res_primal, res_comp)


def _classify(w, p, tau, w_max, tol) -> tuple[np.ndarray, np.ndarray]:
    """Initial status/sign classification from an approximate solution."""
    n = w.shape[0]
    status = np.full(n, _FREE, dtype=np.int64)
    sign = np.zeros(n)
    for i in range(n):
        if w[i] <= tol:
            status[i] = _LO
        elif w[i] >= w_max - tol:
            status[i] = _HI
        elif tau > 0.0 and abs(w[i] - p[i]) <= tol:
            status[i] = _TIE
        else:
            sign[i] = np.sign(w[i] - p[i]) if tau > 0.0 else 0.0
    return status, sign


def _polish(w0, mu, sigma, gamma, tau, p, w_max):
    """Active-set refinement: solve the reduced KKT system, verify multipliers,
    reclassify violators, repeat. Returns (w, nu, residual) for the best iterate."""
    n = mu.shape[0]
    status, sign = _classify(w0, p, tau, w_max, tol=1e-6 * max(1.0, w_max))
    tolb = 1e-11
    best = (w0.copy(), 0.0, np.inf)
    H = 2.0 * gamma * sigma

    for _ in range(60):
        fixed_val = np.where(status == _LO, 0.0, np.where(status == _HI, w_max, p))
        free = status == _FREE
        idx_f = np.flatnonzero(free)
        idx_x = np.flatnonzero(~free)
        w = fixed_val.copy()

        if idx_f.size > 0:
            m = idx_f.size
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = H[np.ix_(idx_f, idx_f)]
            kkt[:m, m] = 1.0
            kkt[m, :m] = 1.0
            rhs = np.empty(m + 1)
            rhs[:m] = mu[idx_f] - tau * sign[idx_f]
            if idx_x.size > 0:
                rhs[:m] -= H[np.ix_(idx_f, idx_x)] @ fixed_val[idx_x]
            rhs[m] = 1.0 - fixed_val[idx_x].sum() if idx_x.size else 1.0
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"singular KKT system in polish: {e}") from e
            w[idx_f] = sol[:m]
            nu = float(sol[m])
        else:
            # all coordinates fixed; pick nu from the intersection of the
            # one-sided multiplier conditions
            grad = H @ w - mu
            lo_b, hi_b = -np.inf, np.inf
            for i in range(n):
                g = grad[i]
                if status[i] == _TIE:
                    lo_b, hi_b = max(lo_b, -tau - g), min(hi_b, tau - g)
                elif status[i] == _LO:
                    lo_b = max(lo_b, (tau if p[i] > tolb else -tau) - g)
                elif status[i] == _HI:
                    hi_b = min(hi_b, (tau if p[i] >= w_max - tolb else -tau) - g)
            if np.isfinite(lo_b) and np.isfinite(hi_b):
                nu = 0.5 * (lo_b + hi_b)  # midpoint also when empty: minimizes worst violation
            elif np.isfinite(lo_b):
                nu = lo_b
            elif np.isfinite(hi_b):
                nu = hi_b
            else:
                nu = 0.0

        changed = False
        # primal checks on the free block
        for i in idx_f:
            if w[i] < -1e-14:
                status[i] = _LO
                changed = True
            elif w[i] > w_max + 1e-14:
                status[i] = _HI
                changed = True
            elif tau > 0.0 and sign[i] * (w[i] - p[i]) < -1e-14:
                status[i] = _TIE
                changed = True
        if not changed:
            # dual checks on the fixed block
            grad = H @ w - mu
            slack = 1e-10 * max(1.0, float(np.abs(grad).max()))
            for i in range(n):
                r = grad[i] + nu
                if status[i] == _TIE:
                    if r > tau + slack:
                        if p[i] <= tolb:
                            status[i] = _LO
                        else:
                            status[i], sign[i] = _FREE, -1.0
                        changed = True
                    elif r < -tau - slack:
                        if p[i] >= w_max - tolb:
                            status[i] = _HI
                        else:
                            status[i], sign[i] = _FREE, 1.0
                        changed = True
                elif status[i] == _LO:
                    need = tau if p[i] > tolb else -tau
                    if r < need - slack:
                        status[i] = _FREE
                        sign[i] = -1.0 if (tau > 0.0 and p[i] > tolb) else (1.0 if tau > 0.0 else 0.0)
                        changed = True
                elif status[i] == _HI:
                    need = -tau if p[i] < w_max - tolb else tau
                    if r > need + slack:
                        status[i] = _FREE
                        sign[i] = 1.0 if (tau > 0.0 and p[i] < w_max - tolb) else (-1.0 if tau > 0.0 else 0.0)
                        changed = True

        res = kkt_residual(w, nu, mu, sigma, gamma, tau, p, w_max)
        if res < best[2]:
            best = (w.copy(), nu, res)
        if not changed:
            break
    return best


def solve_mvo(mu, sigma, w_prev, cfg: MvoConfig) -> MvoSolution:
    """Solve the daily allocation problem to a verified KKT certificate.

    w_prev may be a feasible weight vector or the zero vector (cold start,
    where the L1 term is constant on the simplex). sigma is symmetrized,
    PSD-projected within tolerance, and ridged by 1e-10 * trace/N to keep the
    quadratic strictly convex.
    """
    mu = as_float_array(mu, "mu", ndim=1)
    n = mu.shape[0]
    sigma = check_symmetric(sigma, tol=1e-8, name="sigma")
    if sigma.shape[0] != n:
        raise DataError("mu and sigma dimensions disagree")
    if cfg.w_max * n < 1.0 - 1e-12:
        raise ConfigError(f"infeasible cap: w_max * N = {cfg.w_max * n:.6f} < 1", keys=["w_max"])

    vals, vecs = np.linalg.eigh(sigma)
    scale = max(1.0, float(np.abs(vals).max()))
    if vals.min(initial=0.0) < -1e-8 * scale:
        raise NumericalError("sigma is not PSD beyond ridge tolerance")
    vals = np.clip(vals, 0.0, None)
    sigma = (vecs * vals) @ vecs.T
    ridge = 1e-10 * float(np.trace(sigma)) / n
    sigma = 0.5 * (sigma + sigma.T) + ridge * np.eye(n)

    p = as_float_array(w_prev, "w_prev", ndim=1)
    if p.shape[0] != n:
        raise DataError("w_prev dimension disagrees with mu")
    if np.abs(p).max(initial=0.0) > 1e-12:  # not a cold start: must be feasible
        if (
            abs(p.sum() - 1.0) > 1e-6
            or p.min() < -1e-9
            or p.max() > cfg.w_max + 1e-9
        ):
            raise DataError("w_prev is neither feasible nor the zero vector")

    gamma, tau, w_max = float(cfg.gamma), float(cfg.tau), float(cfg.w_max)
    w_approx = _fista(mu, sigma, gamma, tau, p, w_max, max_iter=600)
    w, nu, res = _polish(w_approx, mu, sigma, gamma, tau, p, w_max)
    if res > 1e-7:
        w_approx = _fista(mu, sigma, gamma, tau, p, w_max, max_iter=20000)
        w2, nu2, res2 = _polish(w_approx, mu, sigma, gamma, tau, p, w_max)
        if res2 < res:
            w, nu, res = w2, nu2, res2
    if res > 1e-7:
        raise NumericalError(f"MVO solver did not certify optimality: KKT residual {res:.3e}")

    obj = _objective(w, mu, sigma, gamma, tau, p)
    caps = tuple(int(i) for i in np.flatnonzero(w >= w_max - 1e-9))
    return MvoSolution(
        w=w,
        objective=obj,
        kkt_residual=res,
        turnover=0.5 * float(np.abs(w - p).sum()),
        binding_caps=caps,
        nu=nu,
    )
