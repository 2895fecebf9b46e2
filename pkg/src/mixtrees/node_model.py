"""Conjugate linear model at a terminal node.

Within a node the residuals are Gaussian around ``design @ mu`` with a
N(beta, tau^2 I) prior on the K-vector ``mu``, so the marginal likelihood,
the full conditional of ``mu``, and the full conditional of the error
variance all have closed forms.  Everything derives from one Cholesky
factorization of the K x K posterior precision; the ``_raw`` variants skip
argument validation and are what the sampler's inner loop calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class NodeData:
    """Residual vector and its (n_p, K) design matrix for one node."""

    residuals: np.ndarray
    design: np.ndarray

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=float).ravel()
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        if self.design.shape[0] != self.residuals.size:
            raise ValueError("design rows must match residuals")
        if self.residuals.size < 1:
            raise ValueError("node must contain at least one observation")
        if not (
            np.all(np.isfinite(self.residuals)) and np.all(np.isfinite(self.design))
        ):
            raise ValueError("non-finite node data")


@dataclass
class LeafPrior:
    """Independent Gaussian prior N(mean, sd^2 I) on a leaf vector."""

    mean: np.ndarray
    sd: float

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if self.sd <= 0:
            raise ValueError("prior sd must be positive")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("non-finite prior mean")


@dataclass
class NoisePrior:
    """Scaled inverse-chi-squared prior shape/scale for the error variance."""

    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("shape and scale must be positive")


def _precision_chol(resid, design, mean, sd, sigma2):
    """Cholesky of the posterior precision A^-1 and the linear term b.

    K is the number of models being mixed, so these matrices are tiny;
    K <= 2 gets scalar closed forms to keep the sampler's inner loop off
    the LAPACK dispatch path.
    """
    k = mean.size
    tau_prec = 1.0 / sd ** 2
    if k == 1:
        col = design[:, 0]
        a = float(col @ col) / sigma2 + tau_prec
        b0 = mean[0] * tau_prec + float(col @ resid) / sigma2
        return np.array([[np.sqrt(a)]]), np.array([b0])
    if k == 2:
        c0, c1 = design[:, 0], design[:, 1]
        a = float(c0 @ c0) / sigma2 + tau_prec
        d = float(c1 @ c1) / sigma2 + tau_prec
        c = float(c0 @ c1) / sigma2
        l11 = np.sqrt(a)
        l21 = c / l11
        l22 = np.sqrt(d - l21 * l21)
        b = np.array(
            [
                mean[0] * tau_prec + float(c0 @ resid) / sigma2,
                mean[1] * tau_prec + float(c1 @ resid) / sigma2,
            ]
        )
        return np.array([[l11, 0.0], [l21, l22]]), b
    prec = design.T @ design / sigma2
    prec.flat[:: k + 1] += tau_prec
    b = mean * tau_prec + design.T @ resid / sigma2
    return np.linalg.cholesky(prec), b


def _tri_solve_lower(chol, v):
    k = v.size
    if k == 1:
        return v / chol[0, 0]
    if k == 2:
        u0 = v[0] / chol[0, 0]
        return np.array([u0, (v[1] - chol[1, 0] * u0) / chol[1, 1]])
    return solve_triangular(chol, v, lower=True, check_finite=False)


def _tri_solve_upper_t(chol, v):
    """Solve chol.T @ x = v for lower-triangular chol."""
    k = v.size
    if k == 1:
        return v / chol[0, 0]
    if k == 2:
        x1 = v[1] / chol[1, 1]
        return np.array([(v[0] - chol[1, 0] * x1) / chol[0, 0], x1])
    return solve_triangular(chol.T, v, lower=False, check_finite=False)


def _log_ml_raw(resid, design, mean, sd, sigma2) -> float:
    chol, b = _precision_chol(resid, design, mean, sd, sigma2)
    # |A| = 1 / |A^-1|; chol factors A^-1.
    log_det_a = -2.0 * float(np.sum(np.log(np.diag(chol))))
    u = _tri_solve_lower(chol, b)
    bab = float(u @ u)
    rss = float(resid @ resid)
    bb = float(mean @ mean)
    return (
        -0.5 * resid.size * (LOG_2PI + np.log(sigma2))
        - 0.5 * mean.size * np.log(sd ** 2)
        + 0.5 * log_det_a
        - 0.5 * (rss / sigma2 + bb / sd ** 2 - bab)
    )


def _sample_leaf_raw(resid, design, mean, sd, sigma2, rng) -> np.ndarray:
    chol, b = _precision_chol(resid, design, mean, sd, sigma2)
    post_mean = _tri_solve_upper_t(chol, _tri_solve_lower(chol, b))
    # x ~ N(0, A): x = L^-T z with L L^T = A^-1.
    z = rng.standard_normal(mean.size)
    return post_mean + _tri_solve_upper_t(chol, z)


def log_marginal_likelihood(nd: NodeData, lp: LeafPrior, sigma2: float) -> float:
    """Log of the node likelihood with the leaf vector integrated out."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return _log_ml_raw(nd.residuals, nd.design, lp.mean, lp.sd, sigma2)


def leaf_posterior(nd: NodeData, lp: LeafPrior, sigma2: float):
    """Full-conditional mean and covariance of the leaf vector."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    chol, b = _precision_chol(nd.residuals, nd.design, lp.mean, lp.sd, sigma2)
    inv_l = solve_triangular(
        chol, np.eye(lp.mean.size), lower=True, check_finite=False
    )
    cov = inv_l.T @ inv_l
    cov = 0.5 * (cov + cov.T)
    return cov @ b, cov


def sample_leaf(
    nd: NodeData, lp: LeafPrior, sigma2: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw the leaf vector from its full conditional."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return _sample_leaf_raw(nd.residuals, nd.design, lp.mean, lp.sd, sigma2, rng)


def sample_sigma2(
    total_sse: float, n: int, noise: NoisePrior, rng: np.random.Generator
) -> float:
    """Draw the error variance from its scaled inverse-chi-squared conditional.

    The posterior has shape n + nu and scale (SSE + nu*lambda) / (n + nu).
    """
    if total_sse < 0:
        raise ValueError("sum of squared errors must be nonnegative")
    nu_post = n + noise.shape
    lam_post = (total_sse + noise.shape * noise.scale) / nu_post
    return float(nu_post * lam_post / rng.chisquare(nu_post))
