"""Four-field minimax systems: guaranteed estimates, errors, reconstructions.

Both estimation families share one block matrix. With K the forward saddle
operator [[a1, a2^T], [a2, a6]], G the observation Gram [[a3, 0], [0, a4]]
and H the prior block [[0, 0], [0, a5]], the coupled system is

    [ abar1  a2^T | a3   0    ] [z1]   [r_z1]        [ K  G ] [z]   [r_z]
    [ a2     a6   | 0    a4   ] [z2] = [r_z2]   i.e. [ H  K ] [p] = [r_p]
    [ 0      0    | a1   a2^T ] [p1]   [r_p1]
    [ 0      a5   | a2   a6   ] [p2]   [r_p2]

Right-hand sides select the problem:
  * state functional:   r = (b1, b2, 0, 0); gains u = Q~ C p, c = -(z2, f0),
    sigma^2 = b1.p1 + b2.p2;
  * rhs functional:     r = (0, 0, 0, a5 l0); c = (l0 - z2, f0),
    sigma^2 = (l0, Q^-1 (l0 - z2));
  * reconstruction:     r = (G1^T W1 y1, G2^T W2 y2, 0, -M f0); the last two
    unknowns are the state estimate (jhat, phihat) and fhat = f0 - Q^-1 p2hat.

Because K, G, H are symmetric, the representation identities
(y, u) + c = l(jhat, phihat) = l(fhat) and sigma^2 = I(u_hat) are exact
algebraic consequences of these solves, not approximations; the tests check
them at solver precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_functional_loads, rt0_mass_matrix
from .forward import SaddleFactorization, SolverError, forward_matrix

log = logging.getLogger("hdiv_minimax")

STATE = "state"
RHS = "rhs"

_KAPPA_WARN = 1e12


class FunctionalSpec:
    """Target linear functional: state kind (l1, l2) or rhs kind (l0)."""

    def __init__(self, kind, l1=None, l2=None, l0=None):
        if kind == STATE:
            self.l1 = np.asarray(l1, dtype=float)
            self.l2 = np.asarray(l2, dtype=float)
            self.l0 = None
        elif kind == RHS:
            self.l0 = np.asarray(l0, dtype=float)
            self.l1 = self.l2 = None
        else:
            raise ValueError(f"unknown functional kind {kind!r}")
        self.kind = kind

    @classmethod
    def state(cls, l1_coeffs, l2_coeffs):
        return cls(STATE, l1=l1_coeffs, l2=l2_coeffs)

    @classmethod
    def rhs(cls, l0_coeffs):
        return cls(RHS, l0=l0_coeffs)

    def scaled(self, lam):
        if self.kind == STATE:
            return FunctionalSpec.state(lam * self.l1, lam * self.l2)
        return FunctionalSpec.rhs(lam * self.l0)

    def loads(self, blocks):
        """(b1, b2) for the state family."""
        if self.kind != STATE:
            raise ValueError("loads are defined for the state family")
        if getattr(blocks, "_rt0_mass", None) is None:
            blocks._rt0_mass = rt0_mass_matrix(blocks.hdiv)
        return assemble_functional_loads(
            blocks.hdiv, blocks.l2, self.l1, self.l2, rt0_mass=blocks._rt0_mass
        )


@dataclass
class EstimatorSolution:
    """Solution of a four-field estimator system and its derived quantities.

    prior_direction is the L2 direction that saturates the prior ellipsoid
    in the worst case: z2hat for the state family, l0 - z2hat for rhs.
    """

    z1hat: np.ndarray
    z2hat: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    u1hat: list
    u2hat: list
    chat: float
    sigma: float
    family: str
    prior_direction: np.ndarray

    def gains(self):
        from .observation import ObservationData

        return ObservationData(self.u1hat, self.u2hat)


@dataclass
class StateReconstruction:
    """Observation-driven reconstruction (jhat, phihat) with its adjoint pair
    and the induced right-hand side estimate fhat = f0 - Q^-1 p2hat."""

    jhat: np.ndarray
    phihat: np.ndarray
    p1hat: np.ndarray
    p2hat: np.ndarray
    fhat: np.ndarray


def four_field_matrix(blocks):
    """The shared coupled matrix; requires the observation blocks a3, a4."""
    if blocks.a3 is None or blocks.a4 is None:
        raise ValueError("blocks are missing the observation Gram (a3, a4)")
    return sp.bmat(
        [
            [blocks.abar1, blocks.a2.T, blocks.a3, None],
            [blocks.a2, blocks.a6, None, blocks.a4],
            [None, None, blocks.a1, blocks.a2.T],
            [None, blocks.a5, blocks.a2, blocks.a6],
        ],
        format="csc",
    )


def _split4(x, n1, n2):
    o = 0
    parts = []
    for size in (n1, n2, n1, n2):
        parts.append(x[o : o + size])
        o += size
    return parts


def _solve_four_field(blocks, rhs, factorization=None):
    if factorization is None:
        factorization = SaddleFactorization(four_field_matrix(blocks))
        kappa = factorization.condition_estimate()
        if kappa > _KAPPA_WARN:
            log.warning("coupled system condition estimate %.3e exceeds %.0e "
                        "(near-degenerate prior or weights?)", kappa, _KAPPA_WARN)
        else:
            log.debug("coupled system condition estimate %.3e", kappa)
    x = factorization.solve(rhs)
    return _split4(x, blocks.n1, blocks.n2)


def _sigma_from_sq(sig_sq):
    if sig_sq < -1e-12:
        raise SolverError(
            f"sigma^2 = {sig_sq:.3e} is negative beyond tolerance "
            "(inconsistent assembly)"
        )
    return float(np.sqrt(max(sig_sq, 0.0)))


def solve_minimax_system(blocks, setup, functional, factorization=None):
    """Solve the state-family system and return gains, c and sigma."""
    if functional.kind != STATE:
        raise ValueError("state-family solver requires a state functional")
    b1, b2 = functional.loads(blocks)
    rhs = np.concatenate([b1, b2, np.zeros(blocks.n1), np.zeros(blocks.n2)])
    z1, z2, p1, p2 = _solve_four_field(blocks, rhs, factorization)
    u = setup.gains(p1, p2)
    areas = blocks.hdiv.mesh.areas
    prior = _prior_of(blocks)
    chat = -float(np.sum(z2 * prior.f0 * areas))
    sigma = _sigma_from_sq(float(b1 @ p1 + b2 @ p2))
    return EstimatorSolution(
        z1hat=z1, z2hat=z2, p1=p1, p2=p2, u1hat=u.y1, u2hat=u.y2,
        chat=chat, sigma=sigma, family=STATE, prior_direction=z2,
    )


def solve_rhs_minimax(blocks, setup, prior, functional, y=None,
                      factorization=None):
    """Solve the rhs-family system; with data y also reconstruct fhat."""
    if functional.kind != RHS:
        raise ValueError("rhs-family solver requires an rhs functional")
    l0 = functional.l0
    if l0.shape != (blocks.n2,):
        raise ValueError(f"l0 must have length {blocks.n2}")
    rhs = np.concatenate(
        [np.zeros(blocks.n1), np.zeros(blocks.n2), np.zeros(blocks.n1),
         blocks.a5 @ l0]
    )
    z1, z2, p1, p2 = _solve_four_field(blocks, rhs, factorization)
    u = setup.gains(p1, p2)
    areas = blocks.hdiv.mesh.areas
    direction = l0 - z2
    chat = float(np.sum(direction * prior.f0 * areas))
    sigma = _sigma_from_sq(prior.weighted_inner(l0, direction, inverse=True))
    sol = EstimatorSolution(
        z1hat=z1, z2hat=z2, p1=p1, p2=p2, u1hat=u.y1, u2hat=u.y2,
        chat=chat, sigma=sigma, family=RHS, prior_direction=direction,
    )
    if y is None:
        return sol, None
    recon = solve_state_reconstruction(blocks, setup, prior, y,
                                       factorization=factorization)
    return sol, recon.fhat


def solve_state_reconstruction(blocks, setup, prior, y, factorization=None):
    """Solve the observation-driven system for (jhat, phihat, p1hat, p2hat)."""
    setup.validate_shapes(y)
    d1, d2 = setup.adjoint_load(y, weighted=True)
    rhs = np.concatenate(
        [d1, d2, np.zeros(blocks.n1), -(blocks.mass_p0 @ prior.f0)]
    )
    p1h, p2h, jh, phih = _solve_four_field(blocks, rhs, factorization)
    fhat = prior.f0 - prior.apply_qinv(p2h)
    return StateReconstruction(jhat=jh, phihat=phih, p1hat=p1h, p2hat=p2h,
                               fhat=fhat)


def estimate_with_sigma(setup, sol, y):
    """The estimate (y1, u1) + (y2, u2) + c together with sigma."""
    setup.validate_shapes(y)
    estimate = setup.inner(y, sol.gains()) + sol.chat
    return float(estimate), sol.sigma


def evaluate_cost_I(blocks, setup, prior, functional, u, factorization=None):
    """Cost of a candidate gain element u.

    Solves the adjoint pair for z(.; u) under the family's loads and returns
    (Q^-1 d, d) + (Q~1^-1 u1, u1) + (Q~2^-1 u2, u2), with d = z2 for the
    state family and d = l0 - z2 for the rhs family. Infinite if u is
    nonzero on a zero-weight channel cell.
    """
    setup.validate_shapes(u)
    uterm = setup.inverse_weighted_quadratic(u)
    if not np.isfinite(uterm):
        return float("inf")
    g1, g2 = setup.adjoint_load(u, weighted=False)
    if functional.kind == STATE:
        b1, b2 = functional.loads(blocks)
        rhs = np.concatenate([b1 - g1, b2 - g2])
    else:
        rhs = np.concatenate([-g1, -g2])
    if factorization is None:
        factorization = SaddleFactorization(forward_matrix(blocks))
    x = factorization.solve(rhs)
    z2 = x[blocks.n1 :]
    d = z2 if functional.kind == STATE else functional.l0 - z2
    return prior.weighted_inner(d, d, inverse=True) + uterm


def evaluate_functional(functional, fields, blocks):
    """l(j, phi) for the state family, or l(f) for the rhs family."""
    if functional.kind == STATE:
        b1, b2 = functional.loads(blocks)
        return float(b1 @ fields.j + b2 @ fields.phi)
    f = np.asarray(fields, dtype=float)
    return float(np.sum(functional.l0 * f * blocks.hdiv.mesh.areas))


def _prior_of(blocks):
    """Recover prior data (f0, q) stored alongside the blocks."""
    prior = getattr(blocks, "prior", None)
    if prior is None:
        raise ValueError("blocks must carry their PriorEllipsoid as .prior")
    return prior
