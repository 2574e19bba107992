"""Independent numerical oracles shared by the test suite.

These deliberately avoid the library code paths they are used to check:
quadrature is composite Gauss-Legendre coded from scratch, norms are plain
loops, and conjugate posteriors are dense matrix algebra.
"""

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def gauss_integral(f, a, b, panels=64):
    """Composite 12-point Gauss-Legendre integral of f over [a, b]."""
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        total += half * np.sum(_GL_WEIGHTS * f(mid + half * _GL_NODES))
    return total


def cumulative_gauss(f, xs, panels_per_cell=2):
    """Values of x -> int_0^x f at the sorted points xs."""
    out = np.empty(len(xs))
    acc = 0.0
    prev = 0.0
    for j, x in enumerate(xs):
        if x > prev:
            acc += gauss_integral(f, prev, x, panels=panels_per_cell)
        prev = x
        out[j] = acc
    return out


def l2_norm_func(f, panels=256):
    """L2(0,1) norm of a callable by Gauss-Legendre quadrature."""
    return np.sqrt(gauss_integral(lambda x: f(x) ** 2, 0.0, 1.0, panels=panels))


def dense_gaussian_posterior(y, kappas, prior_var, n):
    """Conjugate posterior by dense matrix conditioning.

    Model y = K v + eps/sqrt(n) with K = diag(kappas), prior v ~ N(0, S0)
    with S0 = diag(prior_var).  Returns (mean, cov) from the textbook
    formulas cov = (S0^-1 + n K^T K)^-1, mean = cov (n K^T y).
    """
    K = np.diag(np.asarray(kappas, dtype=float))
    S0inv = np.diag(1.0 / np.asarray(prior_var, dtype=float))
    cov = np.linalg.inv(S0inv + n * K.T @ K)
    mean = cov @ (n * K.T @ np.asarray(y, dtype=float))
    return mean, cov
