import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from texbench.dataset import Dataset, ImagePatch, SyntheticSpec, TextureSpec, generate_synthetic

settings.register_profile("texbench", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("texbench")


def solid(rgb, w=8, h=8, label=0, id="p"):
    px = np.empty((h, w, 3), dtype=np.uint8)
    px[:] = rgb
    return ImagePatch(px, label, id)


def texture_spec(per_class=10, seed=3, size_range=(96, 160)):
    return SyntheticSpec(3, per_class, (
        TextureSpec("oriented-grating", {"angle": 0, "period": 10}),
        TextureSpec("checker", {"cell": 8}),
        TextureSpec("blob-noise", {"sigma": 2}),
    ), size_range=size_range, seed=seed)


@pytest.fixture(scope="session")
def small_textures():
    return generate_synthetic(texture_spec())


@pytest.fixture
def color_dataset():
    """Three classes of flat colors with a little noise; trivially separable."""
    rng = np.random.default_rng(0)
    patches = []
    for c, rgb in enumerate([(200, 30, 30), (30, 200, 30), (30, 30, 200)]):
        for i in range(10):
            px = np.clip(np.array(rgb) + rng.integers(-10, 11, size=(20 + i, 24, 3)), 0, 255).astype(np.uint8)
            patches.append(ImagePatch(px, c, f"c{c}/{i}"))
    return Dataset(patches, ["red", "green", "blue"])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
