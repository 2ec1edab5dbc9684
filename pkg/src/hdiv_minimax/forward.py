"""Discrete mixed forward problem and the shared sparse saddle-point solver.

The forward pair (j^h, phi^h) solves the 2x2 block system

    [ a1   a2^T ] [ j   ]   [ 0    ]
    [ a2   a6   ] [ phi ] = [ -M f ]

where M is the P0 mass matrix. The same direct factorization machinery
(SuperLU with pivoting, safe for indefinite blocks) backs every estimator
system in this package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Singular system or unacceptable residual from a direct solve."""


@dataclass
class FieldPair:
    """Flux and state coefficient vectors, plus the observed stability ratio

    (||j||_Hdiv + ||phi||) / ||f||, the discrete a priori constant."""

    j: np.ndarray
    phi: np.ndarray
    stability_ratio: float = float("nan")


class SaddleFactorization:
    """LU factorization of a sparse square matrix, reusable across solves."""

    def __init__(self, matrix):
        matrix = sp.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise SolverError("matrix must be square")
        self.matrix = matrix
        try:
            self._lu = spla.splu(matrix)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("factorization produced non-finite solution")
        res = np.linalg.norm(self.matrix @ x - rhs)
        if res > 1e-10 * (1.0 + np.linalg.norm(rhs)):
            raise SolverError(f"residual {res:.3e} exceeds tolerance")
        return x

    def condition_estimate(self):
        """1-norm condition estimate kappa_1 = ||A||_1 * est(||A^-1||_1)."""
        n = self.matrix.shape[0]
        inv = spla.LinearOperator(
            (n, n), matvec=self._lu.solve,
            rmatvec=lambda v: self._lu.solve(v, trans="T"),
        )
        try:
            inv_norm = spla.onenormest(inv)
        except Exception:
            return float("inf")
        return float(spla.norm(self.matrix, 1) * inv_norm)


def solve_saddle(matrix, rhs):
    """Direct sparse solve with residual verification."""
    return SaddleFactorization(matrix).solve(rhs)


def forward_matrix(blocks):
    """The forward saddle operator [[a1, a2^T], [a2, a6]]."""
    return sp.bmat([[blocks.a1, blocks.a2.T], [blocks.a2, blocks.a6]],
                   format="csc")


def forward_rhs(blocks, f):
    f = np.asarray(f, dtype=float)
    if f.shape != (blocks.n2,):
        raise ValueError(f"f must have length {blocks.n2}")
    return np.concatenate([np.zeros(blocks.n1), -(blocks.mass_p0 @ f)])


def solve_forward(blocks, f, factorization=None):
    """Solve the mixed forward problem for the right-hand side f.

    Passing a prebuilt SaddleFactorization of forward_matrix(blocks) lets
    repeated solves (Monte Carlo trials) reuse one factorization.
    """
    if factorization is None:
        factorization = SaddleFactorization(forward_matrix(blocks))
    x = factorization.solve(forward_rhs(blocks, f))
    j, phi = x[: blocks.n1], x[blocks.n1 :]
    fnorm = blocks.l2.l2_norm(f)
    if fnorm > 0.0:
        ratio = (blocks.hdiv.hdiv_norm(j) + blocks.l2.l2_norm(phi)) / fnorm
    else:
        ratio = 0.0
    return FieldPair(j=j, phi=phi, stability_ratio=ratio)
