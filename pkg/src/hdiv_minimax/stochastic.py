"""Admissible and worst-case perturbations, and Monte Carlo validation of
the guaranteed bound E|l - l_hat|^2 <= sigma^2.

The worst-case elements come from the saturation construction: the
right-hand side is pushed to the boundary of the prior ellipsoid along
Q^-1 w (w = prior direction of the solved family), and the noise is
nu * Q~^-1 u_hat / (Q~^-1 u_hat, u_hat)^(1/2) per channel group with
Rademacher nu, which attains the trace bound exactly in expectation.
Flux-group and scalar-group draws use independent generator streams, so
the two noise components are uncorrelated by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import RHS, STATE, estimate_with_sigma, evaluate_functional
from .forward import SaddleFactorization, forward_matrix, solve_forward
from .observation import ObservationData, apply_observation

WHITE = "white"
WORST_CASE = "worst_case"
ADMISSIBLE_RANDOM = "admissible_random"


class NoiseModel:
    """Noise family: WHITE with target trace tau, or WORST_CASE against a
    reference gain element."""

    def __init__(self, kind=WHITE, tau=1.0, reference=None, seed=0):
        if kind not in (WHITE, WORST_CASE):
            raise ValueError(f"unknown noise kind {kind!r}")
        if kind == WHITE and not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if kind == WORST_CASE and reference is None:
            raise ValueError("worst-case noise needs a reference gain element")
        self.kind = kind
        self.tau = float(tau)
        self.reference = reference
        self.seed = int(seed)

    # Per-group scaling constants for white noise: variance s^2 such that
    # sum_ch int Sp(Q~ s^2 I) dx = tau (flux) and likewise for scalars.
    def white_variances(self, setup):
        t_flux = sum(
            float(np.sum((ch.weight[:, 0, 0] + ch.weight[:, 1, 1]) * ch.areas))
            for ch in setup.flux_channels
        )
        t_scalar = sum(
            float(np.sum(ch.weight * ch.areas)) for ch in setup.scalar_channels
        )
        s1 = self.tau / t_flux if t_flux > 0.0 else 0.0
        s2 = self.tau / t_scalar if t_scalar > 0.0 else 0.0
        return s1, s2

    def covariance_diagonals(self, setup):
        """Per-cell covariance diagonals R~(x, x) for admissibility checks."""
        if self.kind == WHITE:
            s1, s2 = self.white_variances(setup)
            flux = [np.broadcast_to(s1 * np.eye(2), (ch.cells.size, 2, 2))
                    for ch in setup.flux_channels]
            scalar = [np.full(ch.cells.size, s2) for ch in setup.scalar_channels]
            return flux, scalar
        # Worst case: eta = nu * Q~^-1 u / (Q~^-1 u, u)^(1/2), E nu^2 = 1,
        # so R(x, x) = v(x) v(x)^T / (Q~^-1 u, u) with v = Q~^-1 u.
        u = self.reference
        v = setup.apply_inverse_weight(u)
        flux, scalar = [], []
        den1 = sum(
            float(np.sum(np.sum(a * b, axis=1) * ch.areas))
            for a, b, ch in zip(v.y1, u.y1, setup.flux_channels)
        )
        den2 = sum(
            float(np.sum(a * b * ch.areas))
            for a, b, ch in zip(v.y2, u.y2, setup.scalar_channels)
        )
        for a, ch in zip(v.y1, setup.flux_channels):
            if den1 > 0.0:
                flux.append(np.einsum("ci,cj->cij", a, a) / den1)
            else:
                flux.append(np.zeros((ch.cells.size, 2, 2)))
        for a, ch in zip(v.y2, setup.scalar_channels):
            scalar.append(a * a / den2 if den2 > 0.0 else np.zeros(ch.cells.size))
        return flux, scalar


def sample_admissible_noise(setup, model, rng):
    """Draw one noise realization whose covariance satisfies the trace bound.

    The flux and scalar groups use independent child streams of rng.
    """
    rng_flux, rng_scalar = rng.spawn(2)
    if model.kind == WHITE:
        s1, s2 = model.white_variances(setup)
        out = ObservationData()
        for ch in setup.flux_channels:
            out.y1.append(np.sqrt(s1) * rng_flux.standard_normal((ch.cells.size, 2)))
        for ch in setup.scalar_channels:
            out.y2.append(np.sqrt(s2) * rng_scalar.standard_normal(ch.cells.size))
        return out
    return _worst_case_noise(setup, model.reference, rng_flux, rng_scalar)


def _rademacher(rng):
    return 1.0 if rng.random() < 0.5 else -1.0


def _worst_case_noise(setup, u, rng_flux, rng_scalar):
    v = setup.apply_inverse_weight(u)
    out = setup.zero_data()
    den1 = sum(
        float(np.sum(np.sum(a * b, axis=1) * ch.areas))
        for a, b, ch in zip(v.y1, u.y1, setup.flux_channels)
    )
    den2 = sum(
        float(np.sum(a * b * ch.areas))
        for a, b, ch in zip(v.y2, u.y2, setup.scalar_channels)
    )
    if den1 > 0.0:
        nu1 = _rademacher(rng_flux)
        for k, a in enumerate(v.y1):
            out.y1[k] = nu1 * a / np.sqrt(den1)
    if den2 > 0.0:
        nu2 = _rademacher(rng_scalar)
        for k, a in enumerate(v.y2):
            out.y2[k] = nu2 * a / np.sqrt(den2)
    return out


@dataclass
class WorstCasePerturbation:
    ftilde: np.ndarray
    noise: ObservationData
    prior_degenerate: bool


def worst_case_perturbations(sol, prior, setup, sign, rng):
    """The boundary right-hand side and saturating noise for a solved system.

    ftilde = f0 + sign * Q^-1 w / (Q^-1 w, w)^(1/2) with w the family's prior
    direction; zero w degenerates to the center f0 (flagged). The noise part
    draws Rademacher signs from independent group streams of rng.
    """
    if sign not in (1, -1, 1.0, -1.0):
        raise ValueError("sign must be +1 or -1")
    w = sol.prior_direction
    qinv_w = prior.apply_qinv(w)
    den = prior.weighted_inner(w, w, inverse=True)
    if den > 0.0:
        ftilde = prior.f0 + sign * qinv_w / np.sqrt(den)
        degenerate = False
    else:
        ftilde = prior.f0.copy()
        degenerate = True
    rng_flux, rng_scalar = rng.spawn(2)
    noise = _worst_case_noise(setup, sol.gains(), rng_flux, rng_scalar)
    return WorstCasePerturbation(ftilde=ftilde, noise=noise,
                                 prior_degenerate=degenerate)


@dataclass
class MonteCarloReport:
    policy: str
    trials: int
    empirical_mse: float
    sigma_sq: float
    ratio: float
    ci: float

    def as_row(self):
        return [self.policy, self.trials, self.empirical_mse, self.sigma_sq,
                self.ratio, self.ci]


def _trial_rng(seed, trial):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(trial,))
    )


def monte_carlo_mse(blocks, prior, setup, functional, sol, policy, trials,
                    seed=0, tau_prior=0.25, tau_noise=0.25):
    """Empirical mean-square estimation error against sigma^2.

    Per trial: draw an admissible (or worst-case) right-hand side and noise,
    solve the forward problem on the same mesh, observe, estimate through
    the solved gains, and record |l(true) - estimate|^2. The same-mesh
    setup makes the worst-case ratio converge to 1 up to sampling error.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if policy not in (ADMISSIBLE_RANDOM, WORST_CASE):
        raise ValueError(f"unknown policy {policy!r}")
    fwd = SaddleFactorization(forward_matrix(blocks))
    white = NoiseModel(WHITE, tau=tau_noise)
    areas = blocks.hdiv.mesh.areas
    den = prior.weighted_inner(sol.prior_direction, sol.prior_direction,
                               inverse=True)
    qinv_w = prior.apply_qinv(sol.prior_direction)
    gains = sol.gains()

    errors = np.empty(trials)
    for t in range(trials):
        rng = _trial_rng(seed, t)
        rng_f, rng_noise = rng.spawn(2)
        if policy == WORST_CASE:
            sgn = _rademacher(rng_f)
            ftilde = (prior.f0 + sgn * qinv_w / np.sqrt(den)
                      if den > 0.0 else prior.f0)
            noise = _worst_case_noise(setup, gains, *rng_noise.spawn(2))
        else:
            delta = rng_f.standard_normal(blocks.n2)
            norm2 = float(np.sum(prior.q * delta * delta * areas))
            if norm2 > 0.0:
                delta *= np.sqrt(tau_prior / norm2)
            ftilde = prior.f0 + delta
            noise = sample_admissible_noise(setup, white, rng_noise)
        fields = solve_forward(blocks, ftilde, factorization=fwd)
        if functional.kind == STATE:
            truth = evaluate_functional(functional, fields, blocks)
        else:
            truth = float(np.sum(functional.l0 * ftilde * areas))
        y = apply_observation(setup, fields, noise)
        est, _ = estimate_with_sigma(setup, sol, y)
        errors[t] = (truth - est) ** 2

    mse = float(errors.mean())
    sigma_sq = sol.sigma**2
    ratio = mse / sigma_sq if sigma_sq > 0.0 else float("nan")
    ci = 3.0 * float(errors.std(ddof=1)) / np.sqrt(trials)
    return MonteCarloReport(policy=policy, trials=trials, empirical_mse=mse,
                            sigma_sq=sigma_sq, ratio=ratio, ci=ci)
