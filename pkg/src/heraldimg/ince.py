"""Ince polynomials from the three-term Fourier recurrence.

The Ince equation

    C'' + eps * sin(2 eta) C' + (a - p * eps * cos(2 eta)) C = 0

maps a cosine (or sine) harmonic of order ``k`` onto orders ``k - 2``, ``k`` and
``k + 2``. Restricted to the harmonics allowed for a given order ``p`` and parity
the operator is a tridiagonal matrix whose off-diagonal products are positive,
so a diagonal similarity makes it symmetric and ``eigh_tridiagonal`` applies.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import NumericError, ParameterError


def check_ince_indices(p: int, m: int, parity: str) -> None:
    if parity not in ("even", "odd"):
        raise ParameterError(f"parity must be 'even' or 'odd', got {parity!r}")
    if p < 0 or m < 0 or m > p:
        raise ParameterError(f"invalid Ince indices p={p}, m={m}: need 0 <= m <= p")
    if (p - m) % 2:
        raise ParameterError(f"invalid Ince indices p={p}, m={m}: p - m must be even")
    if parity == "odd" and m < 1:
        raise ParameterError("odd Ince polynomials need m >= 1")


def harmonics(p: int, parity: str) -> np.ndarray:
    """Fourier orders present in the Ince polynomials of order ``p``."""
    if p % 2 == 0:
        start = 0 if parity == "even" else 2
    else:
        start = 1
    return np.arange(start, p + 1, 2)


def _operator_matrix(p: int, parity: str, eps: float, ks: np.ndarray) -> np.ndarray:
    n = len(ks)
    A = np.zeros((n, n))
    sign_fold = 1.0 if parity == "even" else -1.0
    for j, k in enumerate(ks):
        A[j, j] += -float(k * k)
        up = 0.5 * eps * (k - p)
        down = 0.5 * eps * (-k - p)
        if j + 1 < n:
            A[j + 1, j] += up
        if k >= 2:
            if k - 2 >= ks[0]:
                A[j - 1, j] += down
            # sin(0) vanishes: nothing to add
        elif k == 1:
            # cos(-eta) = cos(eta), sin(-eta) = -sin(eta)
            A[j, j] += sign_fold * down
        elif k == 0 and n > 1:
            # cos(-2 eta) = cos(2 eta)
            A[j + 1, j] += down
    return A


def ince_coefficients(p: int, m: int, parity: str, eps: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Fourier coefficients of the Ince polynomial :math:`C_p^m` or :math:`S_p^m`.

    Parameters
    ----------
    p, m : int
        Order and degree, ``0 <= m <= p`` with ``p - m`` even (``m >= 1`` for odd parity).
    parity : {"even", "odd"}
        Cosine series (even) or sine series (odd).
    eps : float
        Ellipticity, ``eps >= 0``.

    Returns
    -------
    orders : ndarray of int
        Harmonic orders ``k``.
    coefficients : ndarray
        Unit-norm coefficients; the coefficient of harmonic ``m`` is made positive.
    a : float
        Eigenvalue (separation constant) of the Ince equation.
    """
    check_ince_indices(p, m, parity)
    if eps < 0:
        raise ParameterError(f"ellipticity must be >= 0, got {eps}")
    ks = harmonics(p, parity)
    idx = int(np.searchsorted(ks, m))
    A = _operator_matrix(p, parity, float(eps), ks)
    n = len(ks)
    if n == 1 or eps == 0.0:
        vec = np.zeros(n)
        vec[idx] = 1.0
        return ks, vec, float(-A[idx, idx])

    lower = np.diag(A, -1)
    upper = np.diag(A, 1)
    prod = lower * upper
    if np.any(prod <= 0):
        raise NumericError("Ince recurrence is not symmetrizable for these parameters")
    # d[j+1]/d[j] = sqrt(upper/lower) gives S = D A D^-1 symmetric
    ratio = np.sqrt(upper / lower)
    d = np.concatenate([[1.0], np.cumprod(ratio)])
    off = np.sign(upper) * np.sqrt(prod)
    try:
        lam, vecs = eigh_tridiagonal(np.diag(A).copy(), off)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"Ince eigenproblem failed: {exc}") from exc
    # separation constants a = -lambda, ascending a <-> ascending degree m
    order = np.argsort(-lam, kind="stable")
    col = order[idx]
    coeffs = vecs[:, col] / d
    if not np.all(np.isfinite(coeffs)):
        raise NumericError("non-finite Ince coefficients")
    coeffs /= np.linalg.norm(coeffs)
    pivot = coeffs[idx] if abs(coeffs[idx]) > 1e-12 else coeffs[np.argmax(np.abs(coeffs))]
    if pivot < 0:
        coeffs = -coeffs
    return ks, coeffs, float(-lam[col])


def ince_polynomial(eta, p: int, m: int, parity: str, eps: float) -> np.ndarray:
    """Evaluate the Ince polynomial at real angles ``eta``."""
    ks, c, _ = ince_coefficients(p, m, parity, eps)
    eta = np.asarray(eta, dtype=float)
    trig = np.cos if parity == "even" else np.sin
    out = np.zeros_like(eta)
    for k, ck in zip(ks, c):
        out += ck * trig(k * eta)
    return out


def ince_polynomial_imag(xi, p: int, m: int, parity: str, eps: float) -> np.ndarray:
    """Evaluate the Ince polynomial at imaginary argument ``i * xi``.

    For the sine series the overall factor ``i`` is dropped, leaving a real result.
    """
    ks, c, _ = ince_coefficients(p, m, parity, eps)
    xi = np.asarray(xi, dtype=float)
    hyp = np.cosh if parity == "even" else np.sinh
    out = np.zeros_like(xi)
    for k, ck in zip(ks, c):
        out += ck * hyp(k * xi)
    return out
