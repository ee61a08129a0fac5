import numpy as np
import pytest
import torch

from underwater_nerf.data_io import make_toy_scene
from underwater_nerf.trainer import TrainConfig


def tiny_config(**overrides):
    """Smallest config that still exercises every stage; double precision."""
    base = dict(
        encoder_depth="tiny",
        feature_width=4,
        tiny_width=4,
        dim=8,
        depth=1,
        view_heads=1,
        ray_heads=1,
        ff_hidden=8,
        samples_per_ray=4,
        patch_size=2,
        decoder_width=4,
        latent_dim=4,
        rays_per_batch=16,
        n_min=2,
        n_max=2,
        k_min=1,
        k_max=2,
        steps=100,
        dtype="float64",
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy16():
    return make_toy_scene(size=16, n_views=4)


@pytest.fixture(scope="session")
def toy64():
    return make_toy_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# --- acceptance summary ----------------------------------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("_criterion")
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "skipped": False, "detail": ""})
    entry["ok"] &= not report.failed
    entry["skipped"] |= report.skipped
    entry["detail"] = dict(report.user_properties).get("detail", entry["detail"])


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("_criterion", tuple(marker.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "SKIP" if e["skipped"] else ("PASS" if e["ok"] else "FAIL")
        line = f"[{status}] criterion {number:>2}: {e['title']}"
        if e["detail"]:
            line += f" ({e['detail']})"
        terminalreporter.write_line(line)
