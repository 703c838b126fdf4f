import math
from pathlib import Path

import numpy as np
import pytest

from cheyette.curves import Curve

DATA = Path(__file__).parent / "data"


@pytest.fixture
def flat2():
    return Curve.flat(0.02)


@pytest.fixture
def two_pillar():
    return Curve.from_pillars([(1.0, 0.98), (2.0, 0.95)])


@pytest.fixture
def curves():
    """Forecasting 1.75% and discounting 1.5% flat curves."""
    return Curve.flat(0.0175, label="forecasting"), Curve.flat(0.015)


@pytest.fixture
def pwlin_script():
    return (DATA / "pwlin_cir_caplets.chs").read_text()


@pytest.fixture
def linx_script():
    return (DATA / "linx_qdlnsv_caplets.chs").read_text()
