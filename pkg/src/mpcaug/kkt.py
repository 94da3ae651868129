"""Symmetric indefinite factorization of saddle-point (KKT) matrices."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class SingularKKT(np.linalg.LinAlgError):
    """The KKT matrix could not be factorized with the required inertia."""


def block_diagonal_eigs(d: np.ndarray) -> np.ndarray:
    """Eigenvalues of the 1x1/2x2 block diagonal factor returned by ``ldl``."""
    n = d.shape[0]
    eigs = []
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            eigs.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
            i += 2
        else:
            eigs.append(d[i, i])
            i += 1
    return np.asarray(eigs)


class LDLFactorization:
    """Bunch-Kaufman ``L D L^T`` factors of a symmetric matrix, reusable for solves.

    Attributes
    ----------
    matrix : ndarray
        The factorized matrix (including any regularization).
    inertia : tuple of int
        ``(n_positive, n_negative, n_zero)`` eigenvalue counts of ``matrix``.
    regularization : float
        Multiple of the identity added to the leading block, 0 if none.
    """

    def __init__(self, matrix: np.ndarray, n_primal: int | None = None,
                 regularization: float = 0.0, zero_tol: float = 1e-13):
        self.matrix = np.asarray(matrix, dtype=float)
        self.n_primal = self.matrix.shape[0] if n_primal is None else n_primal
        self.regularization = regularization
        lu, d, perm = sla.ldl(self.matrix, lower=True, hermitian=True)
        self._L = lu[perm]
        self._perm = perm
        self._d = d
        eigs = block_diagonal_eigs(d)
        scale = max(1.0, float(np.abs(self.matrix).max(initial=0.0)))
        tiny = zero_tol * scale
        self.inertia = (int(np.sum(eigs > tiny)), int(np.sum(eigs < -tiny)),
                        int(np.sum(np.abs(eigs) <= tiny)))
        self._banded = _banded_d(d)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray, refine: bool = True) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._solve(rhs)
        if refine:
            r = rhs - self.matrix @ x
            if np.abs(r).max(initial=0.0) > 1e-12 * max(1.0, np.abs(rhs).max(initial=0.0)):
                x = x + self._solve(r)
        return x

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        perm = self._perm
        y = sla.solve_triangular(self._L, rhs[perm], lower=True, unit_diagonal=True,
                                 check_finite=False)
        z = sla.solve_banded((1, 1), self._banded, y, check_finite=False)
        xp = sla.solve_triangular(self._L.T, z, lower=False, unit_diagonal=True,
                                  check_finite=False)
        x = np.empty_like(xp)
        x[perm] = xp
        return x


def _banded_d(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    ab = np.zeros((3, n))
    ab[1] = np.diag(d)
    if n > 1:
        ab[0, 1:] = np.diag(d, 1)
        ab[2, :-1] = np.diag(d, -1)
    return ab


def kkt_matrix(hessian: np.ndarray, constraint_jac: np.ndarray) -> np.ndarray:
    """``[[H, A^T], [A, 0]]`` for constraint Jacobian ``A`` (rows = constraints)."""
    n = hessian.shape[0]
    m = constraint_jac.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = hessian
    K[n:, :n] = constraint_jac
    K[:n, n:] = constraint_jac.T
    return K


def factorize_kkt(hessian: np.ndarray, constraint_jac: np.ndarray,
                  regularize: bool = True, floor: float = 1e-8,
                  max_regularization: float = 1e10) -> LDLFactorization:
    """Factorize the KKT matrix, adding ``tau*I`` to the Hessian until the inertia is right.

    The target inertia is ``(n, m, 0)`` for ``n`` primal variables and ``m``
    constraint rows.  Raises :class:`SingularKKT` when no admissible
    ``tau`` exists below ``max_regularization`` (or immediately when
    ``regularize`` is false).
    """
    n = hessian.shape[0]
    m = constraint_jac.shape[0]
    target = (n, m, 0)
    K = kkt_matrix(hessian, constraint_jac)
    try:
        fac = LDLFactorization(K, n)
    except (ValueError, np.linalg.LinAlgError) as err:
        raise SingularKKT(str(err)) from err
    if fac.inertia == target:
        return fac
    if not regularize:
        raise SingularKKT(f"KKT inertia {fac.inertia}, expected {target}")
    scale = max(1.0, float(np.abs(np.diag(hessian)).max(initial=0.0)))
    tau = max(floor, 1e-4 * scale)
    eye = np.eye(n)
    while tau <= max_regularization * scale:
        K[:n, :n] = hessian + tau * eye
        fac = LDLFactorization(K, n, regularization=tau)
        if fac.inertia == target:
            return fac
        if fac.inertia[2] > 0 and fac.inertia[0] >= n:
            # zero eigenvalues the Hessian shift cannot remove: dependent constraint rows
            break
        tau *= 10.0
    raise SingularKKT(f"could not correct KKT inertia {fac.inertia} to {target}")
