"""Session-wide fixtures: the expensive normalized states and profiles.

Everything here is deterministic, so sharing one instance across test
modules only trades memory for the minutes a rebuild would cost.
"""

import dataclasses

import pytest

from magbottle.analysis import bifurcation_energy, capture_remainder_profile
from magbottle.model import (
    build_builtin_model,
    complexify_nonresonant,
    prepare_resonant,
)
from magbottle.normform import normalize


def truncated_view(state, r):
    """The state as it looked after only ``r`` normalization steps.

    Valid for transform pullbacks (which replay the generator list); the
    stored Hamiltonian still reflects the deeper run.
    """
    return dataclasses.replace(state, r=r, generators=state.generators[:r])


@pytest.fixture(scope="session")
def builtin():
    return build_builtin_model()


@pytest.fixture(scope="session")
def prep(builtin):
    return complexify_nonresonant(builtin)


@pytest.fixture(scope="session")
def nf5(prep):
    return normalize(prep, r_max=5, r_trunc=6)


@pytest.fixture(scope="session")
def nf8(prep):
    return normalize(prep, r_max=8, r_trunc=9)


@pytest.fixture(scope="session")
def nonres_profile(prep):
    return capture_remainder_profile(prep, N=20)


@pytest.fixture(scope="session")
def bif21(nf8):
    return bifurcation_energy(nf8, 2, 1)


@pytest.fixture(scope="session")
def res21_prep(builtin, bif21):
    return prepare_resonant(
        builtin,
        2,
        1,
        I1_star=bif21.I1_star,
        omega1=bif21.omega1,
        omega2=bif21.omega2,
    )


@pytest.fixture(scope="session")
def res21_nf8(res21_prep):
    return normalize(res21_prep, r_max=8, r_trunc=10)


@pytest.fixture(scope="session")
def res21_profile(res21_prep):
    # about two minutes; used by the acceptance gate only
    return capture_remainder_profile(res21_prep, N=20)
