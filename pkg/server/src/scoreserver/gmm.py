"""Analytic eps prediction for isotropic Gaussian mixtures.

For clean data distributed as sum_k w_k N(mu_k, s_k^2 I), the noisy marginal
at signal level a is sum_k w_k N(sqrt(a) mu_k, (a s_k^2 + 1 - a) I); the
served prediction is eps = -sqrt(1 - a) * grad log of that marginal.

Scalar component means broadcast to whatever latent size a request carries;
explicit mean tensors pin the size.
"""

from __future__ import annotations

import numpy as np


class Mixture:
    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = [np.asarray(m, dtype=np.float64) for m in means]
        self.variances = np.asarray(variances, dtype=np.float64)
        k = self.weights.size
        if len(self.means) != k or self.variances.size != k:
            raise ValueError("mixture parameter counts disagree")
        if np.any(self.weights <= 0) or np.any(self.variances <= 0):
            raise ValueError("weights and variances must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.weights.sum()}, expected 1")

    def _mean_stack(self, dim: int) -> np.ndarray:
        rows = []
        for m in self.means:
            if m.ndim == 0:
                rows.append(np.full(dim, float(m)))
            else:
                flat = m.reshape(-1)
                if flat.size != dim:
                    raise ValueError(f"component mean has {flat.size} values, request has {dim}")
                rows.append(flat)
        return np.stack(rows)

    def epsilon(self, y: np.ndarray, alpha_t: float) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        dim = y.size
        noisy_means = np.sqrt(alpha_t) * self._mean_stack(dim)  # (K, dim)
        noisy_vars = alpha_t * self.variances + (1.0 - alpha_t)  # (K,)
        resid = y[None, :] - noisy_means
        sq = np.sum(resid * resid, axis=1)
        log_resp = (
            np.log(self.weights)
            - 0.5 * dim * np.log(2.0 * np.pi * noisy_vars)
            - sq / (2.0 * noisy_vars)
        )
        log_resp -= log_resp.max()
        resp = np.exp(log_resp)
        resp /= resp.sum()
        score = np.einsum("k,kd->d", resp / noisy_vars, -resid)
        return -np.sqrt(1.0 - alpha_t) * score
