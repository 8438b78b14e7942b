import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from facetraj import geom

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def band_limited_texture(shape, seed=0, cutoff=0.12):
    """Smooth random texture in [0, 1]: white noise low-passed in Fourier space."""
    rng = np.random.default_rng(seed)
    h, w = shape
    spec = np.fft.fft2(rng.standard_normal(shape))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    spec[np.hypot(fx, fy) > cutoff] = 0.0
    img = np.real(np.fft.ifft2(spec))
    img -= img.min()
    return img / img.max()


def fourier_shift(img, dx, dy):
    """``img`` translated by (dx, dy) px (content moves right/down), circularly."""
    h, w = img.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    phase = np.exp(-2j * np.pi * (fx * dx + fy * dy))
    return np.real(np.fft.ifft2(np.fft.fft2(img) * phase))


@pytest.fixture(scope="session")
def mean_face():
    return geom.load_landmark_json(DATA / "mean_face_68.json")


@pytest.fixture(scope="session")
def golden_rois():
    return json.loads((DATA / "mean_face_rois.json").read_text())


@pytest.fixture(params=["python", "cython"])
def backend(request):
    if request.param == "cython":
        pytest.importorskip("facetraj._ckernels")
    return request.param


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
