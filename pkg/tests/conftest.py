import numpy as np
import pytest

from salresample.core import Detection


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def centered_box(image_dims, area_frac, score=0.9, category=0):
    """Square box of ``area_frac`` of the image, centred."""
    h, w = image_dims
    side = np.sqrt(area_frac * h * w)
    cx, cy = w / 2.0, h / 2.0
    return Detection((cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2), score, category)


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
