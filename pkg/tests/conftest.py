import numpy as np
import pytest

from visdist.scene import BoundingBox, ObjectInstance, Scene
from visdist.synth import SynthConfig, generate


def make_scene(boxes, cats, sid="s0", size=100.0, relations=None):
    objs = [ObjectInstance(BoundingBox(*b), c) for b, c in zip(boxes, cats)]
    return Scene(sid, size, size, objs, list(relations or []))


def random_scene(rng, sid, num_categories, max_objects=5, size=50):
    """Integer-grid boxes so overlap tests are exact."""
    n = int(rng.integers(0, max_objects + 1))
    boxes, cats = [], []
    for _ in range(n):
        x1, y1 = rng.integers(0, size - 1, size=2)
        x2 = rng.integers(x1 + 1, size + 1)
        y2 = rng.integers(y1 + 1, size + 1)
        boxes.append((int(x1), int(y1), int(x2), int(y2)))
        cats.append(int(rng.integers(num_categories)))
    return make_scene(boxes, cats, sid, float(size))


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(num_scenes=150, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
