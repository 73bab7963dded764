"""Shared random constructions for the test suite."""
import numpy as np


def random_spd(rng, d, spread=1.0):
    """SPD matrix with log-eigenvalues uniform in [-spread, spread]."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigenvalues = np.exp(rng.uniform(-spread, spread, size=d))
    S = (q * eigenvalues) @ q.T
    return 0.5 * (S + S.T)


def random_invertible(rng, d, max_cond=1e3):
    while True:
        P = rng.standard_normal((d, d))
        if np.linalg.cond(P) < max_cond:
            return P


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
