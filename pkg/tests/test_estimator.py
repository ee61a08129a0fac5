import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import tiny_config
from underwater_nerf import UnderwaterNeRF
from underwater_nerf.data_io import make_toy_scene
from underwater_nerf.trainer import checkpoint_bytes, parse_checkpoint


@pytest.fixture(scope="module")
def scene():
    return make_toy_scene(size=16, n_views=4)[0]


@pytest.fixture(scope="module")
def fitted(scene):
    return UnderwaterNeRF(tiny_config(), steps=3, random_state=1).fit(scene)


def test_params_and_clone():
    est = UnderwaterNeRF(tiny_config(), steps=5, random_state=2)
    params = est.get_params()
    assert params["steps"] == 5 and params["random_state"] == 2
    assert clone(est).get_params()["config"] == est.config


def test_fit_records_history(fitted):
    assert fitted.state_.step == 3 and len(fitted.loss_history_) == 3
    assert fitted.state_.config.seed == 1


def test_transform_and_predict(scene, fitted):
    J = fitted.transform([0, 1])
    assert J.shape == (2, 16, 16, 3) and J.min() >= 0 and J.max() <= 1
    (view,) = fitted.predict(0)
    assert np.array_equal(np.clip(view.J, 0, 1), J[0])


def test_score_is_psnr(scene, fitted):
    s = fitted.score(scene)
    assert np.isfinite(s) and s > 0


def test_partial_fit_continues(scene):
    est = UnderwaterNeRF(tiny_config())
    est.partial_fit(scene, steps=2).partial_fit(scene, steps=1)
    assert est.state_.step == 3 and len(est.loss_history_) == 3


def test_unfitted_and_bad_input(scene):
    with pytest.raises(NotFittedError):
        UnderwaterNeRF(tiny_config()).transform([0])
    with pytest.raises(TypeError):
        UnderwaterNeRF(tiny_config(), steps=1).fit(np.zeros((4, 16, 16, 3)))
    with pytest.raises(TypeError):
        UnderwaterNeRF(config={"dim": 8}, steps=1).fit(scene)


def test_checkpoint_round_trip(scene, fitted):
    ckpt = parse_checkpoint(checkpoint_bytes(fitted.to_checkpoint()))
    restored = UnderwaterNeRF.from_checkpoint(ckpt, scene)
    assert np.array_equal(restored.transform([2]), fitted.transform([2]))
