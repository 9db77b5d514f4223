"""Independent oracle implementations used by the unit and acceptance tests.

These deliberately avoid the production solve paths: the lasso oracle is a
proximal-gradient loop, the mixing-coefficient oracle is golden-section
search, and the logistic helpers evaluate the documented objective directly.
"""

import numpy as np


def ista_lasso_oracle(x, y, weights, lam, iters=200_000, tol=1e-14):
    """Proximal gradient on the standardized lasso objective, run to high
    precision.  Standardization is recomputed here from first principles."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n, p = x.shape
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    wn = w / w.mean()
    mx = (wn @ x) / n
    var = (wn @ (x - mx) ** 2) / n
    sx = np.sqrt(var)
    xs = (x - mx) / sx
    my = float(wn @ y) / n
    yc = y - my

    gram = (xs * wn[:, None]).T @ xs / n
    cross = (wn * yc) @ xs / n
    step = 1.0 / np.linalg.eigvalsh(gram).max()
    beta = np.zeros(p)
    for _ in range(iters):
        grad = gram @ beta - cross
        cand = beta - step * grad
        cand = np.sign(cand) * np.maximum(np.abs(cand) - step * lam, 0.0)
        if np.abs(cand - beta).max() < tol:
            beta = cand
            break
        beta = cand
    coef = beta / sx
    intercept = my - coef @ mx
    return intercept, coef


def golden_section_mixing(y, m0, m1, lam, tol=1e-11):
    """Golden-section minimization of the regularized blend objective.

    Comparisons use the algebraically expanded difference
    f(a) - f(b) = (b - a) * (2*sum(d*u) - (a + b)*sum(d^2))
                  + lam * (a - b) * (a + b - 1),
    which avoids the catastrophic cancellation that otherwise caps plain
    golden section at ~sqrt(eps) accuracy near a quadratic minimum.
    """
    y, m0, m1 = (np.asarray(v, dtype=float) for v in (y, m0, m1))
    d = m0 - m1
    u = y - m1
    s1 = float(d @ u)
    s2 = float(d @ d)

    def f_diff(a, b):
        return (b - a) * (2.0 * s1 - (a + b) * s2) + lam * (a - b) * (a + b - 1.0)

    lo, hi = -50.0, 51.0
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - phi * (hi - lo)
    e = lo + phi * (hi - lo)
    while hi - lo > tol:
        if f_diff(c, e) < 0.0:  # f(c) < f(e)
            hi, e = e, c
            c = hi - phi * (hi - lo)
        else:
            lo, c = c, e
            e = lo + phi * (hi - lo)
    return 0.5 * (lo + hi)


def logistic_objective_raw(x, y, w, ridge, intercept, coef):
    """The documented weighted, ridge-penalized bernoulli log-likelihood."""
    eta = intercept + np.asarray(x) @ coef
    ll = float(w @ (y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * (intercept**2 + float(coef @ coef))
