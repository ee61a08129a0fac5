"""scikit-learn style front end around training and rendering."""

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data_io import SceneDataset
from .evaluation import evaluate_scene, render_view
from .trainer import TrainConfig, TrainState, state_from_checkpoint, state_to_checkpoint, train


class UnderwaterNeRF(TransformerMixin, BaseEstimator):
    """Fit a restoration field to one scene, then render restored views.

    ``fit`` trains on a SceneDataset; ``transform`` maps view indices (or
    Pose objects) to restored images J; ``predict`` returns every component
    of a rendered view; ``score`` is the mean self-reconstruction PSNR.

    Parameters
    ----------
    config : TrainConfig, optional
        Architecture and optimization settings (defaults to ``TrainConfig()``).
    steps : int, optional
        Overrides ``config.steps``.
    random_state : int, optional
        Overrides ``config.seed``.
    n_sources : int, optional
        Source views used at render time; defaults to ``config.n_max``.
    """

    def __init__(self, config=None, steps=None, random_state=None, n_sources=None):
        self.config = config
        self.steps = steps
        self.random_state = random_state
        self.n_sources = n_sources

    def _effective_config(self):
        config = self.config if self.config is not None else TrainConfig()
        if not isinstance(config, TrainConfig):
            raise TypeError(f"config must be a TrainConfig, got {type(config).__name__}")
        overrides = {}
        if self.steps is not None:
            overrides["steps"] = int(self.steps)
        if self.random_state is not None:
            overrides["seed"] = int(self.random_state)
        return dataclasses.replace(config, **overrides)

    def _check_dataset(self, X):
        if not isinstance(X, SceneDataset):
            raise TypeError(f"expected a SceneDataset, got {type(X).__name__}")
        return X

    def fit(self, X, y=None, log_file=None):
        dataset = self._check_dataset(X)
        config = self._effective_config()
        state = TrainState(config, dataset.image_shape)
        state, reports = train(dataset, state=state, log_file=log_file)
        self.state_ = state
        self.dataset_ = dataset
        self.loss_history_ = [r.as_dict() for r in reports]
        return self

    def partial_fit(self, X, y=None, steps=1):
        """Continue training for ``steps`` iterations (starting a new run if unfitted)."""
        dataset = self._check_dataset(X)
        if not hasattr(self, "state_"):
            self.state_ = TrainState(self._effective_config(), dataset.image_shape)
            self.loss_history_ = []
        self.state_, reports = train(dataset, state=self.state_, steps=steps)
        self.dataset_ = dataset
        self.loss_history_ += [r.as_dict() for r in reports]
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit before rendering")

    def _pair(self):
        return self.state_.model, self.state_.config

    def predict(self, X, dataset=None):
        """RenderedView for each target in ``X`` (indices or Poses)."""
        self._check_fitted()
        dataset = dataset or self.dataset_
        targets = [X] if not isinstance(X, (list, tuple, range, np.ndarray)) else X
        return [render_view(self._pair(), dataset, t, self.n_sources) for t in targets]

    def transform(self, X, dataset=None):
        """Restored images J stacked as (n, H, W, 3)."""
        return np.stack([np.clip(r.J, 0.0, 1.0) for r in self.predict(X, dataset)])

    def score(self, X, y=None):
        """Mean self-reconstruction PSNR over all views of ``X``."""
        self._check_fitted()
        return evaluate_scene(self._pair(), self._check_dataset(X)).means()["psnr_self"]

    def to_checkpoint(self):
        self._check_fitted()
        return state_to_checkpoint(self.state_)

    @classmethod
    def from_checkpoint(cls, ckpt, dataset=None):
        state = state_from_checkpoint(ckpt)
        est = cls(config=state.config)
        est.state_ = state
        est.loss_history_ = []
        if dataset is not None:
            est.dataset_ = dataset
        return est
