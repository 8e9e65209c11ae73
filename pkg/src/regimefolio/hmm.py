"""Gaussian HMM on expanding feature history: EM fitting, filtering,
one-step-ahead predictive scoring and predictive model-order selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator

from ._hmm_core import backward_smooth, forward_pass
from .errors import ConfigError, DataError, NumericalError
from .validation import as_float_array, check_symmetric

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianComponent:
    """A (mean, covariance) pair; the unit for both HMM states and templates."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = as_float_array(self.mu, "mu", ndim=1)
        sigma = check_symmetric(self.sigma, name="sigma")
        if sigma.shape[0] != mu.shape[0]:
            raise DataError("mu and sigma dimensions disagree")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class EmConfig:
    """EM controls: iteration cap, relative tolerance, covariance ridge, restarts.

    ridge=None means 1e-6 times the mean diagonal of the sample covariance of
    the fitted data (keeps every state covariance invertible for the matrix
    square roots downstream). n_init > 1 runs that many seeded restarts on
    cold fits and keeps the highest-likelihood one; warm starts never restart.
    """

    max_iters: int = 200
    tol: float = 1e-5
    ridge: float | None = None
    n_init: int = 1

    def __post_init__(self):
        if self.max_iters < 1 or self.tol <= 0:
            raise ConfigError("max_iters must be >= 1 and tol > 0")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")


@dataclass(frozen=True)
class FilterResult:
    """Forward-recursion output over a feature matrix.

    filtered[t] conditions on observations up to t, predicted[t] strictly
    before t. log_c[t] is the per-step predictive log-density, so
    loglik == log_c.sum().
    """

    filtered: np.ndarray
    predicted: np.ndarray
    log_c: np.ndarray
    loglik: float


def complexity_free_params(n_states: int, dim: int) -> int:
    """Free-parameter count: (K-1) + K(K-1) + K*(d + d(d+1)/2)."""
    k, d = int(n_states), int(dim)
    return (k - 1) + k * (k - 1) + k * (d + d * (d + 1) // 2)


def _kmeanspp_rows(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: means are data rows picked by squared-distance weighting."""
    T = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    idx = int(rng.integers(T))
    centers[0] = X[idx]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(T, p=d2 / total))
        else:
            idx = int(rng.integers(T))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _chol_logdens(X: np.ndarray, mu: np.ndarray, sigma: np.ndarray, jitter0: float) -> np.ndarray:
    """Log N(x; mu, sigma) per row, with escalating diagonal jitter on Cholesky failure."""
    d = mu.shape[0]
    jitter = 0.0
    for _ in range(4):
        try:
            L = np.linalg.cholesky(sigma + jitter * np.eye(d))
            break
        except np.linalg.LinAlgError:
            jitter = jitter0 if jitter == 0.0 else jitter * 100.0
    else:
        raise NumericalError("state covariance is not positive definite despite jitter")
    z = solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (d * _LOG_2PI + logdet + (z * z).sum(axis=0))


class GaussianHMM(BaseEstimator):
    """Gaussian hidden Markov model fitted by Baum-Welch with full covariances.

    Parameters
    ----------
    n_states : number of latent states K.
    max_iters, tol : EM stopping rule (relative log-likelihood improvement).
    ridge : added to every state covariance diagonal each M-step; None means
        1e-6 * mean diagonal of the sample covariance of the fitted data.
    random_state : seed for the k-means++ mean seeding.
    warm_start : when True and the model is already fitted with matching
        shapes, fit() continues EM from the current parameters instead of
        re-seeding.

    Attributes (after fit)
    ----------------------
    startprob_, transmat_, means_, covariances_, loglik_, loglik_path_,
    converged_, n_iter_, ridge_, n_features_in_
    """

    def __init__(
        self,
        n_states: int = 2,
        max_iters: int = 200,
        tol: float = 1e-5,
        ridge: float | None = None,
        random_state: int = 0,
        warm_start: bool = False,
        n_init: int = 1,
    ):
        self.n_states = n_states
        self.max_iters = max_iters
        self.tol = tol
        self.ridge = ridge
        self.random_state = random_state
        self.warm_start = warm_start
        self.n_init = n_init

    # -- fitting -----------------------------------------------------------

    def _log_dens(self, X: np.ndarray) -> np.ndarray:
        T = X.shape[0]
        K = self.means_.shape[0]
        out = np.empty((T, K))
        for k in range(K):
            out[:, k] = _chol_logdens(X, self.means_[k], self.covariances_[k], self.ridge_)
        return out

    def _can_warm_start(self, X: np.ndarray) -> bool:
        return (
            self.warm_start
            and hasattr(self, "means_")
            and self.means_.shape == (int(self.n_states), X.shape[1])
        )

    def fit(self, X, y=None):
        X = as_float_array(X, "X", ndim=2)
        K = int(self.n_states)
        T, d = X.shape
        if K < 1:
            raise ConfigError("n_states must be >= 1")
        if T < K + 2:
            raise DataError(f"need at least K+2={K + 2} rows, got {T}")
        if np.unique(X, axis=0).shape[0] < K:
            raise DataError("degenerate input: fewer distinct rows than states")

        sample_cov = np.atleast_2d(np.cov(X.T, ddof=1))
        mean_diag = float(np.diag(sample_cov).mean())
        self.ridge_ = float(self.ridge) if self.ridge is not None else 1e-6 * mean_diag

        self.n_features_in_ = d
        if self._can_warm_start(X):
            inits = [
                (
                    self.startprob_.copy(),
                    self.transmat_.copy(),
                    self.means_.copy(),
                    self.covariances_.copy(),
                )
            ]
        else:
            inits = []
            for r in range(int(self.n_init)):
                seed = (
                    self.random_state
                    if r == 0
                    else int(np.random.SeedSequence((int(self.random_state), r)).generate_state(1)[0])
                )
                rng = np.random.default_rng(seed)
                inits.append(
                    (
                        np.full(K, 1.0 / K),
                        np.full((K, K), 1.0 / K),
                        _kmeanspp_rows(X, K, rng),
                        np.repeat((sample_cov + self.ridge_ * np.eye(d))[None, :, :], K, axis=0),
                    )
                )

        best = None
        for pi, A, means, covs in inits:
            self.startprob_, self.transmat_ = pi, A
            self.means_, self.covariances_ = means, covs
            state = self._run_em(X)
            if best is None or state["loglik"] > best["loglik"]:
                best = state

        self.startprob_, self.transmat_ = best["startprob"], best["transmat"]
        self.means_, self.covariances_ = best["means"], best["covariances"]
        self.loglik_path_ = best["path"]
        self.loglik_ = best["loglik"]
        self.converged_ = best["converged"]
        self.n_iter_ = best["n_iter"]
        return self

    def _run_em(self, X: np.ndarray) -> dict:
        path = []
        converged = False
        n_m_steps = 0
        for it in range(int(self.max_iters)):
            log_b = self._log_dens(X)
            alpha, log_c = forward_pass(log_b, self.startprob_, self.transmat_)
            if not np.all(np.isfinite(log_c)):
                raise NumericalError("non-finite likelihood during EM")
            ll = float(log_c.sum())
            path.append(ll)
            if it > 0 and (ll - path[-2]) <= self.tol * (1.0 + abs(path[-2])):
                converged = True
                break
            gamma, xi_sum = backward_smooth(log_b, self.transmat_, alpha, log_c)
            self._m_step(X, gamma, xi_sum)
            n_m_steps += 1
        else:
            # loop exhausted: score the final parameters so loglik_ matches them
            log_b = self._log_dens(X)
            _, log_c = forward_pass(log_b, self.startprob_, self.transmat_)
            if not np.all(np.isfinite(log_c)):
                raise NumericalError("non-finite likelihood after EM")
            path.append(float(log_c.sum()))

        return {
            "startprob": self.startprob_,
            "transmat": self.transmat_,
            "means": self.means_,
            "covariances": self.covariances_,
            "path": np.asarray(path),
            "loglik": float(path[-1]),
            "converged": converged,
            "n_iter": n_m_steps,
        }

    def _m_step(self, X: np.ndarray, gamma: np.ndarray, xi_sum: np.ndarray) -> None:
        K, d = self.means_.shape
        nk = gamma.sum(axis=0)
        self.startprob_ = gamma[0] / gamma[0].sum()

        row = xi_sum.sum(axis=1)
        A = self.transmat_.copy()
        for k in range(K):
            if row[k] > 1e-12:
                A[k] = xi_sum[k] / row[k]
        self.transmat_ = A

        eye = np.eye(d)
        for k in range(K):
            if nk[k] <= 1e-10:
                continue  # empty state: keep previous parameters
            w = gamma[:, k]
            mu = (w @ X) / nk[k]
            Xc = X - mu
            cov = (Xc.T * w) @ Xc / nk[k] + self.ridge_ * eye
            self.means_[k] = mu
            self.covariances_[k] = 0.5 * (cov + cov.T)

    # -- inference ---------------------------------------------------------

    def _check_fitted_dims(self, X: np.ndarray) -> None:
        if not hasattr(self, "means_"):
            raise DataError("model is not fitted")
        if X.shape[1] != self.means_.shape[1]:
            raise DataError(
                f"feature dimension {X.shape[1]} does not match model dimension "
                f"{self.means_.shape[1]}"
            )

    def filter(self, X) -> FilterResult:
        """Forward recursion: filtered and one-step-ahead predicted state probabilities."""
        X = as_float_array(X, "X", ndim=2)
        self._check_fitted_dims(X)
        log_b = self._log_dens(X)
        alpha, log_c = forward_pass(log_b, self.startprob_, self.transmat_)
        if not np.all(np.isfinite(log_c)):
            raise NumericalError("underflow in forward recursion (pathological covariance)")
        predicted = np.empty_like(alpha)
        predicted[0] = self.startprob_
        if alpha.shape[0] > 1:
            predicted[1:] = alpha[:-1] @ self.transmat_
        return FilterResult(
            filtered=alpha, predicted=predicted, log_c=log_c, loglik=float(log_c.sum())
        )

    def predict_proba(self, X) -> np.ndarray:
        return self.filter(X).filtered

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.filter(X).filtered, axis=1)

    def predict_next_proba(self, X) -> np.ndarray:
        """P(z_{T+1} = k | x_{1:T}): the strictly causal probabilities used at decision time."""
        res = self.filter(X)
        p = res.filtered[-1] @ self.transmat_
        return p / p.sum()

    def score(self, X) -> float:
        return self.filter(X).loglik

    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means_[k].copy(), self.covariances_[k].copy())
            for k in range(self.means_.shape[0])
        ]

    def stationary_distribution(self) -> np.ndarray:
        """Stationary distribution of the fitted transition matrix."""
        vals, vecs = np.linalg.eig(self.transmat_.T)
        idx = int(np.argmin(np.abs(vals - 1.0)))
        v = np.real(vecs[:, idx])
        v = np.abs(v)
        return v / v.sum()


def fit_hmm(
    X,
    n_states: int,
    seed: int = 0,
    em: EmConfig | None = None,
    warm_from: GaussianHMM | None = None,
) -> GaussianHMM:
    """Fit a Gaussian HMM; with warm_from, EM continues from that model's parameters."""
    em = em or EmConfig()
    model = GaussianHMM(
        n_states=n_states,
        max_iters=em.max_iters,
        tol=em.tol,
        ridge=em.ridge,
        random_state=seed,
        warm_start=warm_from is not None,
        n_init=em.n_init,
    )
    if warm_from is not None and hasattr(warm_from, "means_"):
        model.startprob_ = warm_from.startprob_.copy()
        model.transmat_ = warm_from.transmat_.copy()
        model.means_ = warm_from.means_.copy()
        model.covariances_ = warm_from.covariances_.copy()
    return model.fit(X)


def predictive_log_score(
    X_hist, v_idx, n_states: int, seed: int = 0, em: EmConfig | None = None
) -> float:
    """Sum over the validation slice of one-step-ahead predictive log-densities.

    The model is fitted on all of X_hist; v_idx must be a contiguous suffix of
    its row indices.
    """
    X_hist = as_float_array(X_hist, "X_hist", ndim=2)
    v_idx = np.asarray(v_idx, dtype=np.int64)
    T = X_hist.shape[0]
    if v_idx.size == 0:
        raise DataError("empty validation slice")
    if not (
        np.all(np.diff(v_idx) == 1) and v_idx[-1] == T - 1 and v_idx[0] >= 0
    ):
        raise DataError("validation indices must be a contiguous suffix of the history")
    model = fit_hmm(X_hist, n_states, seed=seed, em=em)
    log_c = model.filter(X_hist).log_c
    score = float(log_c[v_idx].sum())
    if not np.isfinite(score):
        raise NumericalError("non-finite predictive log score")
    return score


@dataclass(frozen=True)
class OrderSelectionConfig:
    """Bounds and cadence for predictive model-order selection."""

    k_min: int = 2
    k_max: int = 6
    freq: int = 5
    v_len: int = 63
    lambda_k: float = 1.0

    def __post_init__(self):
        bad = []
        if not (1 <= self.k_min <= self.k_max):
            bad.append("k_min/k_max")
        if self.freq < 1:
            bad.append("freq")
        if self.v_len < 1:
            bad.append("v_len")
        if self.lambda_k < 0:
            bad.append("lambda_k")
        if bad:
            raise ConfigError(f"invalid order-selection config: {bad}", keys=bad)


def select_order(
    X_hist,
    cfg: OrderSelectionConfig,
    seed: int = 0,
    em: EmConfig | None = None,
) -> tuple[int, list[dict]]:
    """Pick the state count maximizing PredLL - lambda_k * free-parameter count.

    Fits each candidate K on the full history (per-K seed = seed + K), scores
    the last v_len points, breaks ties toward smaller K, skips failed fits.
    Returns (selected K, per-K score table).
    """
    X_hist = as_float_array(X_hist, "X_hist", ndim=2)
    T, d = X_hist.shape
    if T < cfg.v_len + cfg.k_max + 2:
        raise DataError(
            f"need at least v_len + k_max + 2 = {cfg.v_len + cfg.k_max + 2} rows, got {T}"
        )
    v_idx = np.arange(T - cfg.v_len, T)
    table: list[dict] = []
    best_k, best_score = None, -np.inf
    last_err: Exception | None = None
    for k in range(cfg.k_min, cfg.k_max + 1):
        comp = complexity_free_params(k, d)
        try:
            predll = predictive_log_score(X_hist, v_idx, k, seed=seed + k, em=em)
        except (DataError, NumericalError) as e:
            table.append(
                {"K": k, "predll": None, "complexity": comp, "score": None, "error": str(e)}
            )
            last_err = e
            continue
        score = predll - cfg.lambda_k * comp
        table.append({"K": k, "predll": predll, "complexity": comp, "score": score, "error": None})
        if score > best_score:
            best_k, best_score = k, score
    if best_k is None:
        raise NumericalError(f"order selection failed for every K: {last_err}")
    for row in table:
        row["selected"] = row["K"] == best_k
    return best_k, table
