"""Self-contained penalized regression fitters.

Four fitters back every statistical module in the package:

- ``fit_lasso``: weighted lasso by cyclic coordinate descent on the
  standardized Gram system, with an optional 5-fold cross-validated penalty.
- ``fit_ols_ridge``: weighted least squares with an unpenalized intercept,
  solved by normal equations (Cholesky).
- ``fit_logistic``: weighted, ridge-penalized binary logistic regression by
  damped Newton iterations.
- ``fit_multinomial``: ridge-penalized multinomial logistic regression
  (reference class pinned to zero) by L-BFGS with analytic gradients.

Conventions shared by all fitters:

- deterministic given identical inputs; the only stochastic element is the
  fold assignment of cross-validated lasso, which consumes a caller-supplied
  generator;
- zero-variance feature columns are dropped with a ``DegenerateDesign``
  warning and reported with coefficient 0 (``fit_ols_ridge`` excepted: its
  contract is to surface ``SingularDesign`` instead when ridge = 0);
- the lasso objective is ``(1/2n) sum_i w_i (y_i - b0 - x_i.beta)^2 +
  lam * |beta_std|_1`` with weights normalized to mean one and the penalty
  applied on the standardized coefficient scale; coefficients are returned
  on the original scale;
- the logistic objective is the weighted log-likelihood minus
  ``ridge/2 * |theta|^2`` over *all* parameters including the intercept
  (the penalty is what keeps the optimum finite under separation or a
  single-class outcome), and likewise for the multinomial fitter.

Setting the environment variable ``MEND_STRICT_CHECKS=1`` enables per-sweep
and per-step objective monotonicity assertions (slow; used by the tests).
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numba import njit
from scipy.special import expit

from .errors import DegenerateDesign, Separation, SingularDesign, TooFewRows

CV_FOLDS = 5
CV_GRID_SIZE = 50
CV_LAMBDA_MIN_RATIO = 1e-3
KKT_TOL = 1e-8
_VAR_REL_TOL = 1e-12


def _strict_checks() -> bool:
    return bool(os.environ.get("MEND_STRICT_CHECKS"))


# ---------------------------------------------------------------------------
# Fit containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearFit:
    """A fitted linear or logistic model on the original feature scale.

    ``scale`` holds the per-feature standard deviation seen at fit time
    (0 for dropped columns); ``coef * scale`` recovers standardized-scale
    coefficients, which is what makes magnitudes comparable across features.
    """

    intercept: float
    coef: np.ndarray
    lam: float
    family: str
    scale: np.ndarray | None = None
    dropped: tuple[int, ...] = ()

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x) @ self.coef

    def predict_mean(self, x: np.ndarray) -> np.ndarray:
        """Fitted conditional mean: identity link (gaussian) or sigmoid (bernoulli)."""
        eta = self.linear_predictor(x)
        return expit(eta) if self.family == "bernoulli" else eta

    def coef_standardized(self) -> np.ndarray:
        if self.scale is None:
            raise ValueError("fit carries no standardization scale")
        return self.coef * self.scale


@dataclass(frozen=True)
class MultinomialFit:
    """Multinomial logistic fit; row t-1 of ``weights`` is [intercept, slopes]
    for class t, with row 0 (the reference class) pinned to zero."""

    weights: np.ndarray
    ridge: float

    @property
    def t_max(self) -> int:
        return self.weights.shape[0]

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.weights[:, 0] + x @ self.weights[:, 1:].T

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.scores(x)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p = np.maximum(p, 1e-300)
        p /= p.sum(axis=1, keepdims=True)
        return p


# ---------------------------------------------------------------------------
# Weighted moments / standardization
# ---------------------------------------------------------------------------


def _as_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise ValueError("weights must have one entry per row")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    return w


def _column_moments(x: np.ndarray, w: np.ndarray):
    """Weighted per-column mean/std and the kept-column mask (variance > 0)."""
    sw = w.sum()
    mx = (w @ x) / sw
    ex2 = (w @ (x * x)) / sw
    var = np.maximum(ex2 - mx * mx, 0.0)
    keep = var > _VAR_REL_TOL * np.maximum(ex2, 1.0)
    sx = np.sqrt(var)
    return mx, sx, keep


def _warn_dropped(keep: np.ndarray, caller: str) -> tuple[int, ...]:
    dropped = tuple(int(j) for j in np.flatnonzero(~keep))
    if dropped:
        warnings.warn(
            f"{caller}: zero-variance column(s) {dropped} dropped, coefficient 0",
            DegenerateDesign,
            stacklevel=3,
        )
    return dropped


# ---------------------------------------------------------------------------
# Lasso: coordinate descent on the standardized Gram system
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cd_sweeps(gram, cross, lam, beta, max_sweeps, tol):
    """Cyclic soft-threshold sweeps; mutates ``beta``, returns sweeps used."""
    p = beta.shape[0]
    for sweep in range(max_sweeps):
        maxd = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = cross[j] - np.dot(gram[j], beta) + gjj * beta[j]
            if rho > lam:
                bj = (rho - lam) / gjj
            elif rho < -lam:
                bj = (rho + lam) / gjj
            else:
                bj = 0.0
            d = bj - beta[j]
            if d != 0.0:
                beta[j] = bj
                ad = abs(d)
                if ad > maxd:
                    maxd = ad
        if maxd <= tol:
            return sweep + 1
    return max_sweeps


def _gram_objective(gram, cross, lam, beta) -> float:
    return 0.5 * beta @ gram @ beta - cross @ beta + lam * np.abs(beta).sum()


def _kkt_violation(gram, cross, lam, beta) -> float:
    grad = cross - gram @ beta
    active = beta != 0.0
    v_inactive = np.abs(grad[~active]) - lam
    v_active = np.abs(grad[active] - lam * np.sign(beta[active]))
    worst = 0.0
    if v_inactive.size:
        worst = max(worst, float(v_inactive.max()))
    if v_active.size:
        worst = max(worst, float(v_active.max()))
    return worst


def _cd_solve(gram, cross, lam, beta):
    """Run CD until the subgradient optimality residual is below KKT_TOL."""
    if _strict_checks():
        obj = _gram_objective(gram, cross, lam, beta)
        for _ in range(20000):
            _cd_sweeps(gram, cross, lam, beta, 1, 0.0)
            new = _gram_objective(gram, cross, lam, beta)
            assert new <= obj + 1e-9 * (1.0 + abs(obj)), "CD sweep increased objective"
            if obj - new <= 1e-15 * (1.0 + abs(obj)):
                break
            obj = new
        return beta
    for _ in range(10):
        _cd_sweeps(gram, cross, lam, beta, 2000, 1e-11)
        if _kkt_violation(gram, cross, lam, beta) <= KKT_TOL:
            break
    return beta


def _standardized_system(x, y, w, keep, mx, sx):
    """Gram and cross-moment vector of the weighted, standardized design."""
    sw = w.sum()
    xk = x[:, keep]
    mk = mx[keep]
    sk = sx[keep]
    raw = (xk * w[:, None]).T @ xk / sw
    gram = (raw - np.outer(mk, mk)) / np.outer(sk, sk)
    my = float(w @ y) / sw
    cross = ((w * y) @ xk / sw - my * mk) / sk
    return np.ascontiguousarray(gram), cross, my, mk, sk


def lasso_objective(x, y, weights, lam, intercept, coef) -> float:
    """Value of the lasso objective at an arbitrary (intercept, coef) point.

    Uses the package convention: weights normalized to mean one, penalty on
    the standardized coefficient scale.  Exposed so that independent
    optimizers can be compared against ``fit_lasso`` on equal terms.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = x.shape[0]
    w = _as_weights(weights, n)
    wn = w * (n / w.sum())
    resid = y - intercept - x @ coef
    _, sx, _ = _column_moments(x, w)
    return float(0.5 * (wn @ resid**2) / n + lam * np.abs(coef * sx).sum())


def _cv_lambda(x, y, w, rng) -> float:
    n, p = x.shape
    mx, sx, keep = _column_moments(x, w)
    if not keep.any():
        return 0.0
    gram, cross, _, _, _ = _standardized_system(x, y, w, keep, mx, sx)
    lam_max = float(np.abs(cross).max())
    if lam_max <= 0.0:
        return 0.0
    grid = np.geomspace(lam_max, lam_max * CV_LAMBDA_MIN_RATIO, CV_GRID_SIZE)

    perm = rng.permutation(n)
    folds = np.array_split(perm, CV_FOLDS)
    errs = np.zeros(CV_GRID_SIZE)
    for fold in folds:
        tr = np.ones(n, dtype=bool)
        tr[fold] = False
        xtr, ytr, wtr = x[tr], y[tr], w[tr]
        mx_t, sx_t, keep_t = _column_moments(xtr, wtr)
        keep_t &= keep
        if not keep_t.any():
            base = np.average(ytr, weights=wtr)
            errs += np.full(
                CV_GRID_SIZE, float(w[fold] @ (y[fold] - base) ** 2)
            )
            continue
        g_t, c_t, my_t, mk_t, sk_t = _standardized_system(
            xtr, ytr, wtr, keep_t, mx_t, sx_t
        )
        beta = np.zeros(keep_t.sum())
        xho = x[fold][:, keep_t]
        for gi, lam in enumerate(grid):
            _cd_solve(g_t, c_t, lam, beta)
            coef_k = beta / sk_t
            b0 = my_t - coef_k @ mk_t
            pred = b0 + xho @ coef_k
            errs[gi] += float(w[fold] @ (y[fold] - pred) ** 2)
    # grid is descending, argmin returns the largest lambda among ties
    return float(grid[int(np.argmin(errs))])


def fit_lasso(x, y, weights=None, lam="cv", rng=None, warm_start=None) -> LinearFit:
    """Weighted lasso via cyclic coordinate descent.

    Parameters
    ----------
    x, y : design matrix (n, p) and response (n,)
    weights : optional nonnegative per-row weights
    lam : penalty level, or the string "cv" to select it by 5-fold
        cross-validated squared error over a 50-point log grid spanning
        [1e-3 * lam_max, lam_max]
    rng : numpy Generator, required in CV mode (fold assignment)
    warm_start : optional original-scale coefficients to start the sweeps from

    Returns a :class:`LinearFit` on the original feature scale satisfying the
    subgradient KKT conditions within 1e-6.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = x.shape
    if n < 2:
        raise TooFewRows(f"lasso needs at least 2 rows, got {n}")
    w = _as_weights(weights, n)

    if isinstance(lam, str):
        if lam != "cv":
            raise ValueError(f"unknown lambda mode {lam!r}")
        if n < 10:
            raise TooFewRows("cross-validated lasso needs at least 10 rows")
        if rng is None:
            raise ValueError("CV mode requires an rng for fold assignment")
        lam = _cv_lambda(x, y, w, rng)
    lam = float(lam)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")

    mx, sx, keep = _column_moments(x, w)
    dropped = _warn_dropped(keep, "fit_lasso")
    scale = np.where(keep, sx, 0.0)
    my = float(w @ y) / w.sum()
    if not keep.any():
        return LinearFit(my, np.zeros(p), lam, "gaussian", scale, dropped)

    gram, cross, my, mk, sk = _standardized_system(x, y, w, keep, mx, sx)
    beta = np.zeros(keep.sum())
    if warm_start is not None:
        beta = np.asarray(warm_start, dtype=float)[keep] * sk
    _cd_solve(gram, cross, lam, beta)

    coef = np.zeros(p)
    coef[keep] = beta / sk
    intercept = my - float(coef[keep] @ mk)
    return LinearFit(intercept, coef, lam, "gaussian", scale, dropped)


# ---------------------------------------------------------------------------
# OLS / ridge by normal equations
# ---------------------------------------------------------------------------


def fit_ols_ridge(x, y, weights=None, ridge=0.0) -> LinearFit:
    """Weighted least squares with an L2 penalty on the slopes only.

    Solves ``min sum_i w_i (y_i - b0 - x_i.beta)^2 + ridge * |beta|^2`` by
    Cholesky on the augmented normal equations.  Raises ``SingularDesign``
    when ridge = 0 and the Gram matrix is rank-deficient; any ridge > 0
    guarantees nonsingularity.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = x.shape
    if n < 1:
        raise TooFewRows("ols/ridge needs at least 1 row")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    w = _as_weights(weights, n)

    a = np.column_stack([np.ones(n), x])
    m = a.T @ (a * w[:, None])
    m[1:, 1:] += ridge * np.eye(p)
    b = a.T @ (w * y)
    try:
        c, low = sla.cho_factor(m)
        sol = sla.cho_solve((c, low), b)
    except np.linalg.LinAlgError as exc:
        if ridge == 0.0:
            raise SingularDesign("rank-deficient design with ridge = 0") from exc
        raise
    return LinearFit(float(sol[0]), sol[1:], float(ridge), "gaussian")


# ---------------------------------------------------------------------------
# Binary logistic regression: damped Newton
# ---------------------------------------------------------------------------

_NEWTON_GRAD_TOL = 1e-8
_NEWTON_MAX_HALVINGS = 30


def _logistic_objective(a, yv, w, ridge, theta):
    eta = a @ theta
    ll = float(w @ (yv * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * float(theta @ theta)


def fit_logistic(x, y, weights=None, ridge=0.0, max_iter=100) -> LinearFit:
    """Weighted bernoulli log-likelihood maximization by damped Newton.

    The ridge penalty applies to all parameters including the intercept,
    which keeps the optimum finite even when one class is absent.  Converged
    when the gradient max-norm falls below 1e-8.  Raises ``Separation`` when
    ridge = 0 and the iteration fails to converge (the classic symptom of
    separable data); callers should retry with ridge > 0.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = x.shape
    if n < 2:
        raise TooFewRows(f"logistic fit needs at least 2 rows, got {n}")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("logistic outcome must be binary 0/1")
    w = _as_weights(weights, n)
    if ridge == 0.0 and (np.all(y[w > 0] == 0.0) or np.all(y[w > 0] == 1.0)):
        raise Separation("single-class outcome requires ridge > 0")

    mx, sx, keep = _column_moments(x, w)
    dropped = _warn_dropped(keep, "fit_logistic")
    scale = np.where(keep, sx, 0.0)
    xk = x[:, keep]
    d = xk.shape[1]
    a = np.column_stack([np.ones(n), xk])
    theta = np.zeros(d + 1)
    obj = _logistic_objective(a, y, w, ridge, theta)
    gmax = np.inf
    for _ in range(max_iter):
        eta = a @ theta
        prob = expit(eta)
        grad = a.T @ (w * (y - prob)) - ridge * theta
        gmax = float(np.abs(grad).max())
        if gmax <= 1e-2 * _NEWTON_GRAD_TOL:
            break  # well past the contract; one extra quadratic step is free
        hw = w * prob * (1.0 - prob)
        hess = a.T @ (a * hw[:, None]) + ridge * np.eye(d + 1)
        try:
            step = sla.cho_solve(sla.cho_factor(hess), grad)
        except np.linalg.LinAlgError:
            if ridge == 0.0:
                raise Separation("singular Hessian at ridge = 0") from None
            raise
        t = 1.0
        improved = False
        for _ in range(_NEWTON_MAX_HALVINGS):
            cand = theta + t * step
            new = _logistic_objective(a, y, w, ridge, cand)
            if new > obj:
                theta, obj = cand, new
                improved = True
                break
            t *= 0.5
        if not improved:
            # objective improvements have dropped below float resolution;
            # take the full step anyway if it still shrinks the gradient
            cand = theta + step
            gnew = a.T @ (w * (y - expit(a @ cand))) - ridge * cand
            if np.abs(gnew).max() < gmax:
                new = _logistic_objective(a, y, w, ridge, cand)
                if _strict_checks():
                    assert new >= obj - 1e-9 * (1.0 + abs(obj))
                theta, obj = cand, new
                continue
            break
    eta = a @ theta
    grad = a.T @ (w * (y - expit(eta))) - ridge * theta
    if np.abs(grad).max() > _NEWTON_GRAD_TOL:
        raise Separation(
            f"no convergence within {max_iter} iterations (ridge={ridge}); "
            "retry with ridge > 0"
        )
    coef = np.zeros(p)
    coef[keep] = theta[1:]
    return LinearFit(float(theta[0]), coef, float(ridge), "bernoulli", scale, dropped)


# ---------------------------------------------------------------------------
# Multinomial logistic regression
# ---------------------------------------------------------------------------

_MULTINOMIAL_DENSE_LIMIT = 400  # free-parameter count below which full Newton runs


def _softmax2(a, th):
    """Log-sum-exp and non-reference class probabilities for scores a @ th.T
    (the reference class contributes a pinned zero score)."""
    z = a @ th.T
    zmax = np.maximum(z.max(axis=1), 0.0)
    lse = zmax + np.log(np.exp(-zmax) + np.exp(z - zmax[:, None]).sum(axis=1))
    return z, lse, np.exp(z - lse[:, None])


def fit_multinomial(x, r, ridge=1e-4, max_iter=500) -> MultinomialFit:
    """Ridge-penalized multinomial logistic regression.

    Class 1 is the reference (its parameter row is pinned to zero); the
    penalty covers all free parameters including intercepts, matching
    :func:`fit_logistic` so the binary case reduces exactly.  Features are
    standardized internally for conditioning, with the penalty mapped back
    exactly, so the optimized objective is the raw-scale one; coefficients
    return on the original scale.  Small systems solve by damped Newton
    with the dense Hessian; large ones by a trust-region Newton-CG using
    Hessian-vector products.  Either way the fit must end with gradient
    norm below 1e-8 * (1 + |objective|) or ``Separation`` is raised.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    r = np.asarray(r, dtype=np.int64).reshape(-1)
    n, p = x.shape
    if len(r) != n:
        raise ValueError("r must have one entry per row")
    if r.size == 0 or r.min() < 1:
        raise ValueError("labels must be integers >= 1")
    t_max = int(r.max())
    if n < t_max:
        raise TooFewRows(f"need at least {t_max} rows for {t_max} classes")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    counts = np.bincount(r, minlength=t_max + 1)[1:]
    if ridge == 0.0 and np.any(counts == 0):
        raise Separation("absent class requires ridge > 0")
    if t_max == 1:
        return MultinomialFit(np.zeros((1, p + 1)), float(ridge))

    mx, sx, keep = _column_moments(x, np.ones(n))
    dropped = _warn_dropped(keep, "fit_multinomial")
    xk = (x[:, keep] - mx[keep]) / sx[keep]
    d = xk.shape[1]
    a = np.ascontiguousarray(np.column_stack([np.ones(n), xk]))
    r_idx = r - 1
    onehot2 = np.zeros((n, t_max - 1))
    pos = r_idx >= 1
    onehot2[np.flatnonzero(pos), r_idx[pos] - 1] = 1.0

    # map from standardized to raw parameters: raw_row = m @ std_row
    m = np.zeros((d + 1, d + 1))
    m[0, 0] = 1.0
    m[0, 1:] = -mx[keep] / sx[keep]
    m[1:, 1:] = np.diag(1.0 / sx[keep])
    pen = m.T @ m  # raw-scale ridge as a quadratic form in standardized coords
    n_free = (t_max - 1) * (d + 1)

    def fun_grad(flat):
        th = flat.reshape(t_max - 1, d + 1)
        z, lse, prob2 = _softmax2(a, th)
        ll = float((onehot2 * z).sum() - lse.sum())
        penalty = 0.5 * ridge * float(np.einsum("ci,ij,cj->", th, pen, th))
        grad = -((onehot2 - prob2).T @ a) + ridge * th @ pen
        return -ll + penalty, grad.ravel()

    def hessp(flat, v):
        th = flat.reshape(t_max - 1, d + 1)
        vm = v.reshape(t_max - 1, d + 1)
        _, _, prob2 = _softmax2(a, th)
        av = a @ vm.T
        row = (prob2 * av).sum(axis=1)
        wdot = prob2 * av - prob2 * row[:, None]
        return (wdot.T @ a + ridge * vm @ pen).ravel()

    if n_free <= _MULTINOMIAL_DENSE_LIMIT:
        flat = _multinomial_newton(fun_grad, a, onehot2, pen, ridge, t_max, d, max_iter)
    else:
        flat = np.zeros(n_free)
        from scipy.optimize import minimize

        for _round in range(4):
            res = minimize(
                fun_grad, flat, jac=True, hessp=hessp, method="trust-ncg",
                options={"gtol": 1e-10, "maxiter": max_iter},
            )
            flat = res.x
            fval, grad = fun_grad(flat)
            if np.linalg.norm(grad) <= 1e-9 * (1.0 + abs(fval)):
                break

    fval, grad = fun_grad(flat)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > 1e-8 * (1.0 + abs(fval)):
        raise Separation(
            f"multinomial fit did not reach gradient tolerance (|g|={gnorm:.2e})"
        )
    th = flat.reshape(t_max - 1, d + 1)
    raw_kept = th @ m.T
    weights_raw = np.zeros((t_max, p + 1))
    weights_raw[1:, 0] = raw_kept[:, 0]
    weights_raw[1:, np.flatnonzero(keep) + 1] = raw_kept[:, 1:]
    return MultinomialFit(weights_raw, float(ridge))


def _multinomial_newton(fun_grad, a, onehot2, pen, ridge, t_max, d, max_iter):
    """Damped Newton with the dense multinomial Hessian (small systems)."""
    tm1 = t_max - 1
    dim = d + 1
    flat = np.zeros(tm1 * dim)
    fval, grad = fun_grad(flat)
    for _ in range(max_iter):
        gmax = np.abs(grad).max()
        if gmax <= 1e-10 * (1.0 + abs(fval)):
            break
        th = flat.reshape(tm1, dim)
        _, _, prob2 = _softmax2(a, th)
        hess = np.empty((tm1 * dim, tm1 * dim))
        for t in range(tm1):
            for s in range(t, tm1):
                wts = prob2[:, t] * ((1.0 if s == t else 0.0) - prob2[:, s])
                block = a.T @ (a * wts[:, None])
                if s == t:
                    block += ridge * pen
                hess[t * dim:(t + 1) * dim, s * dim:(s + 1) * dim] = block
                if s != t:
                    hess[s * dim:(s + 1) * dim, t * dim:(t + 1) * dim] = block.T
        try:
            step = sla.cho_solve(sla.cho_factor(hess), grad)
        except np.linalg.LinAlgError:
            if ridge == 0.0:
                raise Separation("singular Hessian at ridge = 0") from None
            raise
        t_frac = 1.0
        improved = False
        for _ in range(_NEWTON_MAX_HALVINGS):
            cand = flat - t_frac * step
            fnew, gnew = fun_grad(cand)
            if fnew < fval:
                flat, fval, grad = cand, fnew, gnew
                improved = True
                break
            t_frac *= 0.5
        if not improved:
            # below float resolution of the objective; accept the full step
            # if it still shrinks the gradient
            cand = flat - step
            fnew, gnew = fun_grad(cand)
            if np.abs(gnew).max() < gmax:
                if _strict_checks():
                    assert fnew <= fval + 1e-9 * (1.0 + abs(fval))
                flat, fval, grad = cand, fnew, gnew
                continue
            break
    return flat
