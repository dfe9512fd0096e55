"""Bayesian linear regression over several outcomes sharing one design matrix.

Every outcome ``m`` has its own coefficient vector ``theta_m`` but all of them
share the same precision matrix, since they are observed on the same features.
The prior is ``N(0, lambda^-1 I)``.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg


class PosteriorError(RuntimeError):
    """Raised when the precision matrix stops being positive definite."""


class OutcomePosterior:
    """Gaussian posterior for ``M`` linear outcome models in ``d`` dimensions.

    Attributes:
        precision: d x d matrix ``Sigma = lambda I + sum(phi phi^T) / noise_var``.
        b: (M, d) array of accumulated ``phi * y_m / noise_var``.
        mean: (M, d) array, ``mean[m] = Sigma^-1 b[m]``.
    """

    def __init__(self, dim: int, num_outcomes: int = 1, prior_precision: float = 1.0,
                 noise_var: float = 1.0):
        if int(dim) != dim or dim < 1:
            raise ValueError(f"dim must be a positive integer, got {dim!r}")
        if int(num_outcomes) != num_outcomes or num_outcomes < 1:
            raise ValueError(f"num_outcomes must be a positive integer, got {num_outcomes!r}")
        if not prior_precision > 0:
            raise ValueError(f"prior_precision must be positive, got {prior_precision!r}")
        if not noise_var > 0:
            raise ValueError(f"noise_var must be positive, got {noise_var!r}")
        self.dim = int(dim)
        self.num_outcomes = int(num_outcomes)
        self.prior_precision = float(prior_precision)
        self.noise_var = float(noise_var)
        self.precision = self.prior_precision * np.eye(self.dim)
        self.b = np.zeros((self.num_outcomes, self.dim))
        self.mean = np.zeros((self.num_outcomes, self.dim))
        self.num_obs = 0
        self._chol = None

    def copy(self) -> "OutcomePosterior":
        out = OutcomePosterior(self.dim, self.num_outcomes, self.prior_precision, self.noise_var)
        out.precision = self.precision.copy()
        out.b = self.b.copy()
        out.mean = self.mean.copy()
        out.num_obs = self.num_obs
        return out

    def _check_phi(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"feature vector must have shape ({self.dim},), got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature vector has non-finite entries")
        return phi

    def _factor(self) -> np.ndarray:
        if self._chol is None:
            try:
                self._chol = linalg.cholesky(self.precision, lower=True)
            except linalg.LinAlgError as exc:
                raise PosteriorError("precision matrix is not positive definite") from exc
        return self._chol

    def update(self, phi, y) -> "OutcomePosterior":
        """Ingest one observation ``(phi, y)`` in place and return ``self``."""
        phi = self._check_phi(phi)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (self.num_outcomes,):
            raise ValueError(f"outcome vector must have shape ({self.num_outcomes},), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome vector has non-finite entries")
        return self.update_batch(phi[None, :], y[None, :])

    def update_batch(self, phis, ys) -> "OutcomePosterior":
        """Ingest ``n`` observations at once; ``phis`` is (n, d), ``ys`` is (n, M)."""
        phis = np.asarray(phis, dtype=float).reshape(-1, self.dim)
        ys = np.asarray(ys, dtype=float).reshape(phis.shape[0], self.num_outcomes)
        if not (np.all(np.isfinite(phis)) and np.all(np.isfinite(ys))):
            raise ValueError("observations have non-finite entries")
        if phis.shape[0] == 0:
            return self
        self.precision = self.precision + phis.T @ phis / self.noise_var
        # keep exact symmetry so the Cholesky factor is well defined
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.b = self.b + ys.T @ phis / self.noise_var
        self.num_obs += phis.shape[0]
        self._chol = None
        chol = self._factor()
        self.mean = linalg.cho_solve((chol, True), self.b.T).T
        return self

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw ``theta_m ~ N(mean_m, Sigma^-1)`` for every outcome.

        With ``Sigma = L L^T`` the draw is ``mean + L^-T z``. The factor is
        cached until the next update, so a cohort sampling from a frozen
        posterior pays for one factorization.

        Returns:
            (M, d) array, or (size, M, d) when ``size`` is given.
        """
        chol = self._factor()
        n = 1 if size is None else int(size)
        z = rng.standard_normal((self.dim, n * self.num_outcomes))
        noise = linalg.solve_triangular(chol, z, lower=True, trans="T")
        draws = noise.T.reshape(n, self.num_outcomes, self.dim) + self.mean[None]
        if not np.all(np.isfinite(draws)):
            raise PosteriorError("posterior draw has non-finite entries")
        return draws[0] if size is None else draws

    def predict_mean(self, phi) -> np.ndarray:
        """Posterior-mean outcomes ``[phi . mean_m for m]``."""
        phi = self._check_phi(phi)
        return self.mean @ phi

    def covariance(self) -> np.ndarray:
        chol = self._factor()
        return linalg.cho_solve((chol, True), np.eye(self.dim))


def init_posterior(d: int, M: int, lam: float, noise_var: float = 1.0) -> OutcomePosterior:
    return OutcomePosterior(d, M, lam, noise_var)


def update(post: OutcomePosterior, phi, y) -> OutcomePosterior:
    return post.update(phi, y)


def sample_params(post: OutcomePosterior, rng: np.random.Generator) -> np.ndarray:
    return post.sample(rng)


def predict_mean(post: OutcomePosterior, phi) -> np.ndarray:
    return post.predict_mean(phi)
