import numpy as np
import pytest
from hypothesis import settings

from splatpose.camera import look_at
from splatpose.scene import synth_scene

settings.register_profile("splatpose", max_examples=40, deadline=None)
settings.load_profile("splatpose")

INTRINSICS = dict(fx=300.0, fy=300.0, cx=159.5, cy=119.5, width=320, height=240)

# filled by tests/test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def scene():
    return synth_scene(3, 200, 1.0)


@pytest.fixture
def camera():
    return look_at([0.3, 0.4, 2.5], [0.0, 0.0, 0.0], INTRINSICS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def write_eval_set(directory, scene, cams, coarse=None, **manifest):
    """Scene PLY, rendered query PNGs, camera JSONs and an oracle manifest; returns the manifest path."""
    import json

    from splatpose.camera import save_camera
    from splatpose.rasterizer import render, save_png
    from splatpose.scene import load_ply, save_ply

    directory.mkdir(parents=True, exist_ok=True)
    save_ply(scene, directory / "scene.ply")
    # render what the evaluator will load, not the unrounded in-memory scene
    scene = load_ply(directory / "scene.ply")
    views = []
    for i, cam in enumerate(cams):
        name = f"view_{i:03d}"
        save_camera(cam, directory / f"{name}.json")
        save_png(render(scene, cam).color, directory / f"{name}.png")
        views.append({"name": name, "image": f"{name}.png", "camera": f"{name}.json"})
    data = {"scene": "scene.ply", "views": views, "oracle": True, "output": "out",
            "coarse": coarse or {"k": 100, "subdivision_level": 2}}
    data.update(manifest)
    path = directory / "manifest.json"
    path.write_text(json.dumps(data, indent=2))
    return path
