import numpy as np
import pytest

from hybrid_aenr.scene import SceneSpec, generate, synthetic_speech


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(capsys):
    """Prints one PASS/FAIL line for an acceptance criterion, then asserts."""
    def check(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{name}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"{name} failed: {detail}"
    return check


def make_scene(seconds=3.0, seed=0, **kw):
    near = synthetic_speech(seed, seconds, voice=0)
    far = synthetic_speech(seed, seconds, voice=1)
    return generate(SceneSpec(seed=seed, **kw), near, far)
