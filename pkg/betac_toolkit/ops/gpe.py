"""
Gaussian process emulators: ARD squared-exponential kernel, marginal-likelihood
fitting with seeded restarts, exact and inducing-point inference.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from ..errors import GpeTrainingError, InvalidArgumentError
from ..models.ensemble import GpeSubmodel, GpeTrainingOptions


logger = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-2
FAILED_OBJECTIVE = 1e25


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, signal_variance: float) -> np.ndarray:
    d2 = cdist(A / lengthscales, B / lengthscales, metric="sqeuclidean")
    return signal_variance * np.exp(-0.5 * d2)


def _cholesky_with_jitter(K: np.ndarray, signal_variance: float) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + jitter I, escalating jitter by decades."""
    jitter = JITTER_START * signal_variance
    n = K.shape[0]
    while jitter <= JITTER_MAX * signal_variance * (1.0 + 1e-12):
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GpeTrainingError(
        f"Covariance not positive definite with jitter up to {JITTER_MAX:g} x signal variance"
    )


def _prior_mean(L: np.ndarray, Y: np.ndarray, mode: str) -> float:
    if mode == "one":
        return 1.0
    ones = np.ones_like(Y)
    k_inv_ones = linalg.cho_solve((L, True), ones)
    return float(k_inv_ones @ Y / (k_inv_ones @ ones))


def negative_log_marginal_likelihood(
    theta: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    prior_mean: str = "fitted"
) -> Tuple[float, np.ndarray]:
    """NLML and its gradient in log-parameters [log l_1..log l_d, log sf2, log sn2].

    The fitted prior mean is profiled out, so it carries no gradient term.
    """
    n, d = X.shape
    lengthscales = np.exp(theta[:d])
    signal_variance = np.exp(theta[d])
    noise_variance = np.exp(theta[d + 1])

    Kf = se_kernel(X, X, lengthscales, signal_variance)
    try:
        L, jitter = _cholesky_with_jitter(Kf + noise_variance * np.eye(n), signal_variance)
    except GpeTrainingError:
        return FAILED_OBJECTIVE, np.zeros_like(theta)

    mu0 = _prior_mean(L, Y, prior_mean)
    r = Y - mu0
    alpha = linalg.cho_solve((L, True), r)
    nlml = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2.0 * np.pi)

    K_inv = linalg.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - K_inv
    M = W * Kf
    row_sums = M.sum(axis=1)
    term1 = 2.0 * (X ** 2).T @ row_sums
    term2 = 2.0 * np.sum(X * (M @ X), axis=0)

    grad = np.empty_like(theta)
    grad[:d] = -0.5 * (term1 - term2) / lengthscales ** 2
    grad[d] = -0.5 * np.sum(M)
    grad[d + 1] = -0.5 * noise_variance * np.trace(W)
    return float(nlml), grad


def _bounds(d: int, opts: GpeTrainingOptions):
    log = np.log
    return (
        [(log(opts.lengthscale_bounds[0]), log(opts.lengthscale_bounds[1]))] * d
        + [(log(opts.signal_variance_bounds[0]), log(opts.signal_variance_bounds[1]))]
        + [(log(opts.noise_variance_bounds[0]), log(opts.noise_variance_bounds[1]))]
    )


def _initial_theta(X: np.ndarray, Y: np.ndarray, opts: GpeTrainingOptions) -> np.ndarray:
    spread = np.std(X, axis=0)
    lengthscales = np.clip(np.where(spread > 0, spread, 1.0), *opts.lengthscale_bounds)
    variance = max(float(np.var(Y)), 1e-6)
    signal = np.clip(variance, *opts.signal_variance_bounds)
    noise = np.clip(0.1 * variance, *opts.noise_variance_bounds)
    return np.concatenate([np.log(lengthscales), [np.log(signal), np.log(noise)]])


def fit_hyperparameters(X: np.ndarray, Y: np.ndarray, opts: GpeTrainingOptions,
                        name: str = "") -> np.ndarray:
    d = X.shape[1]
    bounds = _bounds(d, opts)
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(opts.seed)
    start = np.clip(_initial_theta(X, Y, opts), lower, upper)

    best_theta, best_value = start, np.inf
    for restart in range(opts.restarts):
        theta0 = start if restart == 0 else np.clip(start + rng.normal(0.0, 1.0, size=start.shape), lower, upper)
        result = minimize(
            negative_log_marginal_likelihood, theta0, args=(X, Y, opts.prior_mean),
            jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": opts.max_optimizer_iterations},
        )
        logger.debug(
            f"GP restart {restart} for {name}: NLML {result.fun:.6e}",
            extra={'source': name, 'restart': restart, 'nlml': float(result.fun)}
        )
        if np.isfinite(result.fun) and result.fun < best_value:
            best_theta, best_value = result.x, float(result.fun)

    if best_value >= FAILED_OBJECTIVE:
        raise GpeTrainingError(f"No restart produced a factorisable covariance for {name}", source=name)
    return best_theta


def build_gpe(
    X: np.ndarray,
    Y: np.ndarray,
    lengthscales: np.ndarray,
    signal_variance: float,
    noise_variance: float,
    prior_mean: str = "fitted",
    include_noise: bool = False,
    inducing: Optional[np.ndarray] = None,
    name: str = ""
) -> GpeSubmodel:
    """Condition a GP with given hyper-parameters on (X, Y)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    lengthscales = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],)).copy()
    if np.any(lengthscales <= 0) or signal_variance <= 0 or noise_variance <= 0:
        raise InvalidArgumentError("Kernel hyper-parameters must be positive")

    if inducing is None:
        K = se_kernel(X, X, lengthscales, signal_variance) + noise_variance * np.eye(len(X))
        L, jitter = _cholesky_with_jitter(K, signal_variance)
        mu0 = _prior_mean(L, Y, prior_mean)
        alpha = linalg.cho_solve((L, True), Y - mu0)
        return GpeSubmodel(
            name=name, X=X, Y=Y, lengthscales=lengthscales,
            signal_variance=float(signal_variance), noise_variance=float(noise_variance),
            prior_mean=mu0, jitter=jitter, mode="exact", alpha=alpha, chol=L,
            include_noise=include_noise,
        )

    Z = np.asarray(inducing, dtype=float)
    Kuu = se_kernel(Z, Z, lengthscales, signal_variance)
    L_uu, jitter = _cholesky_with_jitter(Kuu, signal_variance)
    Kuf = se_kernel(Z, X, lengthscales, signal_variance)
    A = L_uu @ L_uu.T + Kuf @ Kuf.T / noise_variance
    L_A, _ = _cholesky_with_jitter(A, signal_variance)
    if prior_mean == "one":
        mu0 = 1.0
    else:
        # generalised least squares under the low-rank-plus-noise covariance
        ones = np.ones_like(Y)

        def solve_q(v: np.ndarray) -> np.ndarray:
            inner = linalg.cho_solve((L_A, True), Kuf @ v)
            return v / noise_variance - Kuf.T @ inner / noise_variance ** 2

        q_ones = solve_q(ones)
        mu0 = float(q_ones @ Y / (q_ones @ ones))
    alpha = linalg.cho_solve((L_A, True), Kuf @ (Y - mu0)) / noise_variance
    return GpeSubmodel(
        name=name, X=X, Y=Y, lengthscales=lengthscales,
        signal_variance=float(signal_variance), noise_variance=float(noise_variance),
        prior_mean=mu0, jitter=jitter, mode="sparse", alpha=alpha, chol=L_A,
        inducing=Z, chol_inducing=L_uu, include_noise=include_noise,
    )


def _validate_training(X: np.ndarray, Y: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise InvalidArgumentError(f"X shape {X.shape} does not match {Y.shape[0]} targets", stage=name or None)
    if X.shape[0] < 2:
        raise InvalidArgumentError("GP training needs at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidArgumentError("GP training data contains non-finite values")
    return X, Y


def inducing_points(X: np.ndarray, opts: GpeTrainingOptions) -> np.ndarray:
    m = max(2, min(opts.max_inducing, X.shape[0] // 4))
    kmeans = KMeans(n_clusters=m, random_state=opts.seed, n_init=1)
    kmeans.fit(X)
    return kmeans.cluster_centers_


def train_gpe(X: np.ndarray, Y: np.ndarray, opts: Optional[GpeTrainingOptions] = None,
              name: str = "") -> GpeSubmodel:
    opts = opts or GpeTrainingOptions()
    X, Y = _validate_training(X, Y, name)
    n = X.shape[0]
    sparse = n > opts.sparse_threshold

    if sparse:
        rng = np.random.default_rng(opts.seed)
        subset = rng.choice(n, size=min(opts.hyper_subsample, n), replace=False)
        theta = fit_hyperparameters(X[subset], Y[subset], opts, name)
        Z = inducing_points(X, opts)
    else:
        theta = fit_hyperparameters(X, Y, opts, name)
        Z = None

    d = X.shape[1]
    model = build_gpe(
        X, Y,
        lengthscales=np.exp(theta[:d]),
        signal_variance=float(np.exp(theta[d])),
        noise_variance=float(np.exp(theta[d + 1])),
        prior_mean=opts.prior_mean,
        include_noise=opts.include_noise,
        inducing=Z,
        name=name,
    )
    logger.info(
        f"Trained {model.mode} GP for {name or 'source'} on {n} samples",
        extra={'source': name, 'n_train': n, 'mode': model.mode,
               'signal_variance': model.signal_variance, 'noise_variance': model.noise_variance,
               'jitter': model.jitter}
    )
    return model


def predict_gpe(model: GpeSubmodel, X_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at the query rows."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X_star.shape[1] != model.width:
        raise InvalidArgumentError(
            f"Query has {X_star.shape[1]} features, model {model.name or ''} was trained on {model.width}"
        )

    if model.mode == "exact":
        K_star = se_kernel(X_star, model.X, model.lengthscales, model.signal_variance)
        mean = model.prior_mean + K_star @ model.alpha
        v = linalg.solve_triangular(model.chol, K_star.T, lower=True)
        variance = model.signal_variance - np.sum(v ** 2, axis=0)
    else:
        K_su = se_kernel(X_star, model.inducing, model.lengthscales, model.signal_variance)
        mean = model.prior_mean + K_su @ model.alpha
        v_uu = linalg.solve_triangular(model.chol_inducing, K_su.T, lower=True)
        v_a = linalg.solve_triangular(model.chol, K_su.T, lower=True)
        variance = model.signal_variance - np.sum(v_uu ** 2, axis=0) + np.sum(v_a ** 2, axis=0)

    variance = np.maximum(variance, 0.0)
    if model.include_noise:
        variance = variance + model.noise_variance
    return mean, np.sqrt(variance)
