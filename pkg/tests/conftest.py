from pathlib import Path

import numpy as np
import pytest

from narmsr.imagecore import list_images, read_image

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def fixture_images():
    """The ten bundled 64x64 natural-image crops, keyed by name."""
    return {p.stem: read_image(p) for p in list_images(FIXTURES)}
