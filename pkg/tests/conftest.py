from fractions import Fraction
from functools import lru_cache

import pytest

from conic_calabi.params import GeometryParams, derive
from conic_calabi.profile import Normalization, solve_profile

GEOMS = {
    "n2": GeometryParams(2, Fraction(3, 2), 1),
    "n3": GeometryParams(3, Fraction(2), 1),
    "n4": GeometryParams(4, Fraction(5, 2), 1),
}

# beta - beta_* offsets of the acceptance matrix
OFFSETS = (Fraction(-1, 20), Fraction(0), Fraction(1, 10**4), Fraction(1, 10**8))


@lru_cache(maxsize=None)
def profile(key: str, offset: Fraction, normalization: str = "Raw"):
    geom = GEOMS[key]
    return solve_profile(derive(geom, geom.beta_star + offset), normalization=Normalization(normalization))


@lru_cache(maxsize=None)
def obstruction_model(key, offset, a_TY=1.0):
    from conic_calabi.obstruction import ModelInputs, ObstructionModel
    geom = GEOMS[key]
    inputs = ModelInputs(a_TY=a_TY, faithful=a_TY > 0)
    return ObstructionModel(geom, geom.beta_star + offset, inputs)


@pytest.fixture
def geom2():
    return GEOMS["n2"]


def report(label: str, ok: bool, detail: str = "") -> None:
    print(f"{'PASS' if ok else 'FAIL'} {label} {detail}".rstrip())
