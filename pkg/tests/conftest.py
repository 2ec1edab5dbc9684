import numpy as np
import pytest

from hdiv_minimax import (
    CoefficientFields,
    PriorEllipsoid,
    assemble_core_forms,
    build_spaces,
    generate_unit_square,
)
from hdiv_minimax.observation import ObservationSetup


def random_spd_2x2(rng, scale=1.0):
    """Random symmetric positive definite 2x2 matrix."""
    q = rng.standard_normal((2, 2))
    return scale * (q @ q.T + 0.5 * np.eye(2))


def make_problem(n=3, rng=None, c_value=None, q_value=None, A=None,
                 channels="default"):
    """A small assembled problem with observation blocks attached.

    channels: "default" puts one identity scalar channel on all cells and
    one identity flux channel on a few cells; "none" omits observations;
    a list is used verbatim.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    mesh = generate_unit_square(n)
    hdiv, l2 = build_spaces(mesh)
    if A is None:
        A = random_spd_2x2(rng)
    c = rng.random(l2.n2) if c_value is None else c_value
    coeffs = CoefficientFields(mesh, A, c)
    q = 1.0 + rng.random(l2.n2) if q_value is None else q_value
    prior = PriorEllipsoid(mesh, rng.standard_normal(l2.n2), q)
    blocks = assemble_core_forms(hdiv, l2, coeffs, prior)
    if channels == "default":
        channels = [
            ("scalar", np.arange(l2.n2), "identity", 1.0 + rng.random(l2.n2)),
            ("flux", np.arange(min(6, l2.n2)), "identity",
             random_spd_2x2(rng, 1.5)),
        ]
    elif channels == "none":
        channels = []
    setup = ObservationSetup(hdiv, l2, channels)
    blocks.with_observation(*setup.gram_blocks())
    return mesh, hdiv, l2, coeffs, prior, blocks, setup


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
