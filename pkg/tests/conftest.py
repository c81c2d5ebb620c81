import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatlab.primitives import PrimitiveSet, inverse_opacity
from splatlab.renderer import Viewpoint


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_set(rng, n=5, span=16.0, opacity=(0.25, 0.7), sigma=(1.0, 3.0),
              inset=3.0):
    """Random primitives placed inside a span x span region.

    Opacities and scales stay in ranges where blending is smooth: no
    alpha clamp, no early-termination crossings, so finite differences
    are trustworthy.
    """
    return PrimitiveSet(
        mu=rng.uniform(inset, span - inset, size=(n, 2)),
        kappa=np.log(rng.uniform(*sigma, size=(n, 2))),
        rot=rng.uniform(0.0, np.pi, size=n),
        tau=np.asarray(inverse_opacity(rng.uniform(*opacity, size=n))),
        color=rng.uniform(0.1, 0.9, size=(n, 3)),
        depth=rng.random(n),
    )


@pytest.fixture
def sixteen_vp():
    return Viewpoint(origin=(0.0, 0.0), shape=(16, 16))


@pytest.fixture
def scene5(rng, sixteen_vp):
    return small_set(rng), sixteen_vp
