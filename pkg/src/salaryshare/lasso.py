"""L1-penalized least squares and logistic regression by cyclic coordinate descent.

Objectives use the unscaled sum form, with an unpenalized intercept::

    squared:   sum_i (y_i - b0 - x_i.beta)^2 + lam * sum_j |beta_j|
    logistic: -sum_i [y_i eta_i - log(1 + exp(eta_i))] + lam * sum_j |beta_j|

Because nothing is divided by ``n``, a given ``lam`` corresponds to
``lam / (2n)`` in the glmnet/scikit-learn squared-loss convention and
``lam / n`` in their logistic convention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .folds import as_generator, make_folds

__all__ = [
    "ConvergenceError",
    "SeparationError",
    "LassoFit",
    "LambdaGrid",
    "lasso_fit",
    "logistic_lasso_fit",
    "lasso_path",
    "lambda_grid",
    "lambda_max",
    "tune_lambda_cv",
    "kkt_residual",
    "objective",
    "selected_features",
    "write_path_csv",
]

SELECTION_TOL = 1e-8
SQUARED = "squared"
LOGISTIC = "logistic"

# kernel status codes
_OK, _NOT_CONVERGED, _SEPARATED = 0, 1, 2


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (KKT residual {residual:.3e})")
        self.residual = residual


class SeparationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coef: np.ndarray
    lam: float
    objective_value: float
    loss: str = SQUARED
    feature_names: tuple[str, ...] | None = None

    @property
    def selected(self) -> frozenset[int]:
        return frozenset(int(j) for j in np.flatnonzero(np.abs(self.coef) > SELECTION_TOL))

    def decision_function(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    ratio: float = field(default=1e-3)

    @property
    def n_lambda(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def _gram_kkt(G, c, beta, lam):
    p = beta.size
    worst = 0.0
    for j in range(p):
        g = -2.0 * (c[j] - np.dot(G[j], beta))
        if beta[j] == 0.0:
            v = abs(g) - lam
        elif beta[j] > 0.0:
            v = abs(g + lam)
        else:
            v = abs(g - lam)
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def _active_solve(H, rhs, pen, x, n_free):
    """Solve the stationarity equations on the support of ``x``.

    The first ``n_free`` variables are unpenalized. Penalized variables keep
    their current signs; any that flip sign are dropped and the system is
    solved again. Returns ``(ok, candidate)``; the caller still has to check
    the conditions for the variables left at zero.
    """
    m = x.size
    s = np.zeros(m)
    keep = np.zeros(m, dtype=np.bool_)
    for j in range(m):
        if j < n_free:
            keep[j] = True
        elif x[j] != 0.0:
            keep[j] = True
            s[j] = 1.0 if x[j] > 0.0 else -1.0
    out = np.zeros(m)
    for attempt in range(m + 1):
        idx = np.flatnonzero(keep)
        k = idx.size
        if k == 0:
            return True, out
        Hs = np.empty((k, k))
        r = np.empty(k)
        for a in range(k):
            r[a] = rhs[idx[a]] - pen * s[idx[a]]
            for b in range(k):
                Hs[a, b] = H[idx[a], idx[b]]
        sol = np.linalg.lstsq(Hs, r)[0]
        bad = False
        for a in range(k):
            j = idx[a]
            if j >= n_free and sol[a] * s[j] <= 0.0:
                keep[j] = False
                s[j] = 0.0
                bad = True
        if not bad:
            for a in range(k):
                out[idx[a]] = sol[a]
            return True, out
    return False, out


@njit(cache=True, nogil=True)
def _squared_path(G, c, lambdas, beta_init, tol, kkt_tol, max_sweeps):
    """Warm-started coordinate descent on centered Gram data.

    Minimizes ``b'Gb - 2c'b + lam*|b|_1`` (the centered squared loss up to
    a constant) for each lambda in turn. Strongly correlated columns make
    plain coordinate descent crawl, so every so often the support is
    polished with a direct solve and kept if it passes the KKT check.
    """
    p = c.size
    L = lambdas.size
    betas = np.zeros((L, p))
    status = np.zeros(L, dtype=np.int64)
    kkt = np.zeros(L)
    beta = beta_init.copy()
    for li in range(L):
        lam = lambdas[li]
        half = 0.5 * lam
        status[li] = _NOT_CONVERGED
        for sweep in range(max_sweeps):
            max_delta = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0.0:
                    beta[j] = 0.0
                    continue
                z = c[j] - np.dot(G[j], beta) + gjj * beta[j]
                new = _soft(z, half) / gjj
                d = abs(new - beta[j])
                if d > max_delta:
                    max_delta = d
                beta[j] = new
            settled = max_delta < tol
            if settled or (sweep + 1) % 25 == 0:
                r = _gram_kkt(G, c, beta, lam)
                if r < kkt_tol:
                    status[li] = _OK
                    kkt[li] = r
                    break
                ok, cand = _active_solve(G, c, half, beta, 0)
                if ok:
                    rc = _gram_kkt(G, c, cand, lam)
                    if rc < kkt_tol:
                        beta[:] = cand
                        status[li] = _OK
                        kkt[li] = rc
                        break
        if status[li] != _OK:
            kkt[li] = _gram_kkt(G, c, beta, lam)
        betas[li] = beta
    return betas, status, kkt


@njit(cache=True, nogil=True)
def _softplus(eta):
    if eta > 0.0:
        return eta + np.log1p(np.exp(-eta))
    return np.log1p(np.exp(eta))


@njit(cache=True, nogil=True)
def _sigmoid(eta):
    if eta >= 0.0:
        return 1.0 / (1.0 + np.exp(-eta))
    e = np.exp(eta)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _logistic_obj(XT, y, b0, beta, lam):
    eta = b0 + np.dot(beta, XT)
    total = 0.0
    for i in range(y.size):
        total += _softplus(eta[i]) - y[i] * eta[i]
    return total + lam * np.sum(np.abs(beta))


@njit(cache=True, nogil=True)
def _logistic_kkt(XT, y, b0, beta, lam):
    eta = b0 + np.dot(beta, XT)
    resid = np.empty(y.size)
    for i in range(y.size):
        resid[i] = y[i] - _sigmoid(eta[i])
    worst = abs(np.sum(resid))
    g = -np.dot(XT, resid)
    for j in range(beta.size):
        if beta[j] == 0.0:
            v = abs(g[j]) - lam
        elif beta[j] > 0.0:
            v = abs(g[j] + lam)
        else:
            v = abs(g[j] - lam)
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def _cd_pass(XT, w, r, sw, xwx, b0, beta, lam, active_only):
    max_delta = 0.0
    d0 = np.dot(w, r) / sw
    if d0 != 0.0:
        b0 += d0
        r -= d0
        max_delta = abs(d0)
    n = r.size
    for j in range(beta.size):
        old = beta[j]
        if xwx[j] <= 0.0 or (active_only and old == 0.0):
            continue
        xj = XT[j]
        num = 0.0
        for i in range(n):
            num += w[i] * xj[i] * r[i]
        new = _soft(num + xwx[j] * old, lam) / xwx[j]
        if new != old:
            diff = new - old
            for i in range(n):
                r[i] -= xj[i] * diff
            beta[j] = new
            if abs(diff) > max_delta:
                max_delta = abs(diff)
    return b0, max_delta


@njit(cache=True, nogil=True)
def _weighted_polish(XT, z, w, b0, beta, lam):
    """Direct solve of the weighted subproblem on the current support.

    Returns ``(ok, b0, beta)``; ``ok`` only if the zero coefficients also
    satisfy their subgradient bound.
    """
    p, n = XT.shape
    idx = np.flatnonzero(beta)
    k = idx.size
    H = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    x = np.zeros(k + 1)
    x[0] = 1.0 if b0 == 0.0 else b0
    H[0, 0] = np.sum(w)
    rhs[0] = np.dot(w, z)
    for a in range(k):
        xa = XT[idx[a]]
        wa = w * xa
        x[a + 1] = beta[idx[a]]
        H[0, a + 1] = np.sum(wa)
        H[a + 1, 0] = H[0, a + 1]
        rhs[a + 1] = np.dot(wa, z)
        for b in range(a, k):
            H[a + 1, b + 1] = np.dot(wa, XT[idx[b]])
            H[b + 1, a + 1] = H[a + 1, b + 1]
    ok, sol = _active_solve(H, rhs, lam, x, 1)
    if not ok:
        return False, b0, beta
    cand = np.zeros(p)
    for a in range(k):
        cand[idx[a]] = sol[a + 1]
    r = z - sol[0] - np.dot(cand, XT)
    wr = w * r
    slack = 1e-9 * max(1.0, lam)
    for j in range(p):
        if cand[j] == 0.0 and abs(np.dot(XT[j], wr)) > lam + slack:
            return False, b0, beta
    return True, sol[0], cand


@njit(cache=True, nogil=True)
def _weighted_cd(XT, z, w, b0, beta, lam, tol, max_sweeps):
    """Minimize ``0.5*sum w (z - b0 - X beta)^2 + lam*|beta|_1`` in place.

    Cycles over the active set until it settles, then confirms with a full
    pass. Slow active-set cycling is cut short by a direct solve.
    """
    p = beta.size
    r = z - b0 - np.dot(beta, XT)
    sw = np.sum(w)
    xwx = np.empty(p)
    for j in range(p):
        xwx[j] = np.dot(w * XT[j], XT[j])
    for sweep in range(max_sweeps):
        b0, delta = _cd_pass(XT, w, r, sw, xwx, b0, beta, lam, False)
        if delta < tol:
            break
        for inner in range(max_sweeps):
            b0, delta = _cd_pass(XT, w, r, sw, xwx, b0, beta, lam, True)
            if delta < tol:
                break
            if (inner + 1) % 25 == 0:
                ok, nb0, nbeta = _weighted_polish(XT, z, w, b0, beta, lam)
                if ok:
                    b0 = nb0
                    beta[:] = nbeta
                    r[:] = z - b0 - np.dot(beta, XT)
                    break
    return b0


@njit(cache=True, nogil=True)
def _logistic_path(XT, y, lambdas, b0_init, beta_init, kkt_tol, max_outer, cap):
    p, n = XT.shape
    L = lambdas.size
    betas = np.zeros((L, p))
    b0s = np.zeros(L)
    status = np.full(L, _NOT_CONVERGED)
    kkt = np.full(L, np.inf)
    beta = beta_init.copy()
    b0 = b0_init
    w = np.empty(n)
    z = np.empty(n)
    for li in range(L):
        lam = lambdas[li]
        separated = False
        for outer in range(max_outer):
            r = _logistic_kkt(XT, y, b0, beta, lam)
            if r < kkt_tol:
                status[li] = _OK
                kkt[li] = r
                break
            f_old = _logistic_obj(XT, y, b0, beta, lam)
            beta_old = beta.copy()
            b0_old = b0
            eta = b0 + np.dot(beta, XT)
            for i in range(n):
                mu = _sigmoid(eta[i])
                w[i] = max(mu * (1.0 - mu), 1e-6)
                z[i] = eta[i] + (y[i] - mu) / w[i]
            b0 = _weighted_cd(XT, z, w, b0, beta, lam, 1e-9, 10000)
            f_new = _logistic_obj(XT, y, b0, beta, lam)
            if not f_new <= f_old + 1e-12 * abs(f_old):
                # Newton step overshot; the 1/4 curvature bound majorizes the loss
                beta[:] = beta_old
                b0 = b0_old
                for i in range(n):
                    mu = _sigmoid(eta[i])
                    w[i] = 0.25
                    z[i] = eta[i] + (y[i] - mu) / 0.25
                b0 = _weighted_cd(XT, z, w, b0, beta, lam, 1e-9, 10000)
            if abs(b0) > cap or np.max(np.abs(beta)) > cap:
                separated = True
                break
        if separated:
            status[li:] = _SEPARATED
            betas[li] = beta
            b0s[li] = b0
            kkt[li] = _logistic_kkt(XT, y, b0, beta, lam)
            break
        if status[li] != _OK:
            kkt[li] = _logistic_kkt(XT, y, b0, beta, lam)
        betas[li] = beta
        b0s[li] = b0
    return b0s, betas, status, kkt


# ---------------------------------------------------------------- helpers


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in X or y")
    return X, y


def _check_binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic response must be 0/1")
    if y.min() == y.max():
        raise ValueError("logistic response has a single class")


def objective(X, y, intercept, coef, lam, loss=SQUARED) -> float:
    X, y = _check_xy(X, y)
    coef = np.asarray(coef, dtype=float)
    eta = intercept + X @ coef
    if loss == SQUARED:
        r = y - eta
        return float(r @ r + lam * np.abs(coef).sum())
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(coef).sum())


def lambda_max(X, y, loss=SQUARED) -> float:
    """Smallest penalty at which the all-zero coefficient vector is optimal."""
    X, y = _check_xy(X, y)
    g = X.T @ (y - y.mean())
    scale = 2.0 if loss == SQUARED else 1.0
    return float(scale * np.max(np.abs(g))) if g.size else 0.0


def lambda_grid(X, y, n_lambda: int = 100, ratio: float = 1e-3, loss=SQUARED) -> LambdaGrid:
    if n_lambda < 2:
        raise ValueError(f"n_lambda must be at least 2, got {n_lambda}")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    lmax = lambda_max(X, y, loss)
    if lmax <= 0:
        # response orthogonal to every column; any positive grid is all-zero
        lmax = 1.0
    values = lmax * np.logspace(0.0, np.log10(ratio), n_lambda)
    values[0] = lmax
    return LambdaGrid(values=values, ratio=ratio)


def _path_raw(X, y, lambdas, loss, warm_start=None, intercept_start=None,
              tol=1e-7, kkt_tol=None, max_sweeps=100_000, cap=30.0):
    """Run the warm-started kernel; returns (intercepts, betas, status, kkt)."""
    lambdas = np.ascontiguousarray(lambdas, dtype=float)
    p = X.shape[1]
    beta0 = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if loss == SQUARED:
        kkt_tol = 1e-6 if kkt_tol is None else kkt_tol
        xm = X.mean(axis=0)
        ym = y.mean()
        Xc = X - xm
        G = np.ascontiguousarray(Xc.T @ Xc)
        c = Xc.T @ (y - ym)
        betas, status, kkt = _squared_path(G, c, lambdas, beta0, tol, kkt_tol, max_sweeps)
        b0s = ym - betas @ xm
        return b0s, betas, status, kkt
    if loss == LOGISTIC:
        kkt_tol = 1e-5 if kkt_tol is None else kkt_tol
        if intercept_start is None:
            ybar = y.mean()
            intercept_start = np.log(ybar / (1 - ybar))
        return _logistic_path(np.ascontiguousarray(X.T), y, lambdas, float(intercept_start), beta0, kkt_tol,
                              1000, cap)
    raise ValueError(f"unknown loss {loss!r}")


def _make_fit(X, y, b0, beta, lam, loss, names):
    beta = np.where(np.abs(beta) > 0.0, beta, 0.0)  # drop signed zeros
    return LassoFit(
        intercept=float(b0),
        coef=beta.copy(),
        lam=float(lam),
        objective_value=objective(X, y, b0, beta, lam, loss),
        loss=loss,
        feature_names=tuple(names) if names is not None else None,
    )


def _single_fit(X, y, lam, loss, warm_start, feature_names, **kw):
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    b0s, betas, status, _ = _path_raw(X, y, [lam], loss, warm_start, **kw)
    if status[0] == _SEPARATED:
        raise SeparationError(
            f"coefficients exceeded the magnitude cap at lambda={lam:g}; the classes look separable"
        )
    fit = _make_fit(X, y, b0s[0], betas[0], lam, loss, feature_names)
    tol = kw.get("kkt_tol") or (1e-6 if loss == SQUARED else 1e-5)
    res = kkt_residual(X, y, fit)
    if status[0] != _OK or res >= tol:
        raise ConvergenceError(f"{loss} lasso did not converge at lambda={lam:g}", res)
    return fit


def lasso_fit(X, y, lam: float, warm_start=None, *, feature_names=None, tol: float = 1e-7,
              kkt_tol: float = 1e-6, max_sweeps: int = 100_000) -> LassoFit:
    """Minimize the penalized residual sum of squares at a single ``lam``.

    Cyclic coordinate descent with soft-thresholding, run until the largest
    coefficient change is below ``tol`` and the KKT residual is below
    ``kkt_tol``.
    """
    X, y = _check_xy(X, y)
    return _single_fit(X, y, lam, SQUARED, warm_start, feature_names,
                       tol=tol, kkt_tol=kkt_tol, max_sweeps=max_sweeps)


def logistic_lasso_fit(X, y01, lam: float, warm_start=None, *, feature_names=None,
                       kkt_tol: float = 1e-5, cap: float = 30.0) -> LassoFit:
    """Penalized maximum likelihood for a 0/1 response.

    Each outer iteration solves the weighted least-squares approximation of
    the log-likelihood by coordinate descent. Raises ``SeparationError`` once
    any coefficient exceeds ``cap`` in magnitude.
    """
    X, y = _check_xy(X, y01)
    _check_binary(y)
    return _single_fit(X, y, lam, LOGISTIC, warm_start, feature_names, kkt_tol=kkt_tol, cap=cap)


def lasso_path(X, y, lambdas, loss=SQUARED, feature_names=None, cap: float = 30.0) -> list[LassoFit]:
    """Fits along a decreasing penalty sequence, each warm-started from the previous.

    For the logistic loss the path stops at the first penalty where the
    coefficients hit ``cap``; later penalties are omitted from the result.
    Squared-loss fits that fail to certify raise ``ConvergenceError``.
    """
    X, y = _check_xy(X, y)
    if loss == LOGISTIC:
        _check_binary(y)
    lambdas = np.asarray(getattr(lambdas, "values", lambdas), dtype=float)
    b0s, betas, status, kkt = _path_raw(X, y, lambdas, loss, cap=cap)
    fits = []
    for i, lam in enumerate(lambdas):
        if status[i] == _SEPARATED:
            break
        if status[i] != _OK:
            raise ConvergenceError(f"{loss} lasso path did not converge at lambda={lam:g}", float(kkt[i]))
        fits.append(_make_fit(X, y, b0s[i], betas[i], lam, loss, feature_names))
    return fits


def kkt_residual(X, y, fit: LassoFit) -> float:
    """Largest violation of the subgradient optimality conditions.

    Covers the unpenalized intercept (gradient must vanish) and every
    coefficient: ``|g_j| <= lam`` at zero, ``g_j + lam*sign(beta_j) = 0``
    otherwise.
    """
    X, y = _check_xy(X, y)
    eta = fit.intercept + X @ fit.coef
    if fit.loss == SQUARED:
        r = y - eta
        g0 = -2.0 * r.sum()
        g = -2.0 * (X.T @ r)
    else:
        r = y - 1.0 / (1.0 + np.exp(-eta))
        g0 = -r.sum()
        g = -(X.T @ r)
    b = fit.coef
    viol = np.where(b == 0.0, np.abs(g) - fit.lam, np.abs(g + fit.lam * np.sign(b)))
    worst = max(abs(g0), float(viol.max()) if viol.size else 0.0)
    return max(0.0, worst)


def selected_features(fit: LassoFit, names=None, tolerance: float = SELECTION_TOL) -> list[str]:
    """Names of the non-zero coefficients, largest magnitude first."""
    names = names if names is not None else fit.feature_names
    if names is None:
        names = [f"x{j + 1}" for j in range(fit.coef.size)]
    mag = np.abs(fit.coef)
    keep = [j for j in np.argsort(-mag, kind="stable") if mag[j] > tolerance]
    return [names[j] for j in keep]


def _heldout_loss(y, eta, loss):
    if loss == SQUARED:
        return (y[None, :] - eta) ** 2
    p = np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-15, 1 - 1e-15)
    return -2.0 * (y * np.log(p) + (1 - y) * np.log1p(-p))


def tune_lambda_cv(X, y, k: int = 10, grid: LambdaGrid | None = None, rng_seed=None,
                   loss=SQUARED, n_lambda: int = 100, ratio: float = 1e-3):
    """Choose the penalty with the smallest mean held-out error by k-fold CV.

    Held-out error is squared error (squared loss) or binomial deviance
    (logistic loss), pooled over all samples. Ties go to the larger penalty.
    Returns ``(lambda_best, cv_errors)`` with one error per grid value.
    """
    X, y = _check_xy(X, y)
    n = y.size
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    if grid is None:
        grid = lambda_grid(X, y, n_lambda, ratio, loss)
    lambdas = grid.values
    folds = make_folds(n, k, as_generator(rng_seed))
    total = np.zeros(lambdas.size)
    counted = 0
    for f in range(k):
        tr = folds.train_indices(f)
        te = folds.test_indices(f)
        ytr = y[tr]
        if loss == LOGISTIC and ytr.min() == ytr.max():
            continue
        b0s, betas, status, kkt = _path_raw(X[tr], ytr, lambdas, loss)
        bad = status == _NOT_CONVERGED
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ConvergenceError(f"inner CV fit did not converge at lambda={lambdas[i]:g}", float(kkt[i]))
        eta = b0s[:, None] + betas @ X[te].T
        err = _heldout_loss(y[te], eta, loss).sum(axis=1)
        err[status == _SEPARATED] = np.inf
        total += err
        counted += te.size
    if counted == 0:
        raise ValueError("every inner training fold had a single class")
    cv_errors = total / counted
    best = int(np.argmin(cv_errors))  # first minimum = largest lambda
    return float(lambdas[best]), cv_errors


def write_path_csv(fits: list[LassoFit], path, names=None) -> None:
    if not fits:
        raise ValueError("empty path")
    p = fits[0].coef.size
    names = names or fits[0].feature_names or [f"x{j + 1}" for j in range(p)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "objective", "intercept", *names])
        for fit in fits:
            w.writerow([repr(fit.lam), repr(fit.objective_value), repr(fit.intercept),
                        *(repr(float(b)) for b in fit.coef)])
