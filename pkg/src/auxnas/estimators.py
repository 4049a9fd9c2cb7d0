"""Scikit-learn compatible front end: fit on primary plus auxiliary targets, predict the primary.

Auxiliary targets are passed to ``fit`` as ``y_aux`` and are used for
training only. After fitting, ``network_`` is the pruned single-task
network used by ``predict``; ``search_network_`` keeps the trained network
with its auxiliary branches.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import archnet, trainer
from .archnet import BranchSpec
from .evalbench import METHODS
from .trainer import TrainConfig

ESTIMATOR_MODES = ("single", "aux_head", "symmetric", "aux_g_stage", "aux_g_layer", "aux_nas")


def _aux_targets(y_aux, n: int) -> list[np.ndarray]:
    """Normalize ``y_aux`` to a list of float arrays with ``n`` rows.

    A single array is one auxiliary task; a list or tuple holds one array
    per task.
    """
    if y_aux is None:
        return []
    parts = list(y_aux) if isinstance(y_aux, (list, tuple)) else [y_aux]
    out = []
    for k, part in enumerate(parts):
        arr = check_array(part, ensure_2d=False, dtype=np.float64, input_name=f"y_aux[{k}]")
        if arr.shape[0] != n:
            raise ValueError(f"y_aux[{k}] has {arr.shape[0]} rows, expected {n}")
        out.append(arr.reshape(n, -1))
    return out


class _AuxNASBase(BaseEstimator):
    _head = "regression"

    def __init__(self, hidden: Sequence[int] = (32, 32, 32, 32), aux_hidden: Sequence[int] | None = None,
                 mode: str = "aux_nas", window: int = 3, stage_size: int = 2, epochs: int = 20,
                 batch_size: int = 32, lr_w: float = 1e-2, lr_alpha: float = 1e-2,
                 lambda_end: float = 100.0, random_state: int = 0):
        self.hidden = hidden
        self.aux_hidden = aux_hidden
        self.mode = mode
        self.window = window
        self.stage_size = stage_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_w = lr_w
        self.lr_alpha = lr_alpha
        self.lambda_end = lambda_end
        self.random_state = random_state

    def _fit_network(self, X, y_primary: np.ndarray, out_dim: int, y_aux):
        if self.mode not in ESTIMATOR_MODES:
            raise ValueError(f"mode must be one of {ESTIMATOR_MODES}, got {self.mode!r}")
        aux = _aux_targets(y_aux, X.shape[0])
        if self.mode != "single" and not aux:
            raise ValueError(f"mode {self.mode!r} needs auxiliary targets in y_aux")
        if self.mode == "single":
            aux = []
        seed = int(self.random_state or 0)
        primary = BranchSpec(tuple(self.hidden), self._head, out_dim)
        aux_widths = tuple(self.aux_hidden or self.hidden)
        aux_specs = [BranchSpec(aux_widths, "regression", a.shape[1]) for a in aux]
        build_mode, granularity, extra = METHODS[self.mode]
        net = archnet.build(primary, aux_specs, X.shape[1], build_mode, self.window,
                            granularity, self.stage_size, seed)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_w=self.lr_w,
                          lr_alpha=self.lr_alpha, lambda_end=self.lambda_end, seed=seed, **extra)
        self.report_ = trainer.train(net, X, [y_primary, *aux], cfg)
        self.search_network_ = net
        self.network_ = net if net.mode == "symmetric" else archnet.prune(net)
        self.n_features_in_ = X.shape[1]
        self.n_aux_ = len(aux)

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return archnet.predict(self.network_, X)


class AuxNASRegressor(RegressorMixin, _AuxNASBase):
    """Regressor trained with auxiliary tasks whose inference cost is that of one task."""

    def fit(self, X, y, y_aux=None):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        self._y_ndim = y.ndim
        target = y.reshape(len(y), -1)
        self._fit_network(X, target, target.shape[1], y_aux)
        return self

    def predict(self, X) -> np.ndarray:
        out = self._logits(X)
        return out.ravel() if self._y_ndim == 1 else out


class AuxNASClassifier(ClassifierMixin, _AuxNASBase):
    """Classifier trained with auxiliary tasks; predicts from the primary head only."""

    _head = "classification"

    def fit(self, X, y, y_aux=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("AuxNASClassifier needs at least two classes")
        self._fit_network(X, encoded, len(self.classes_), y_aux)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self._logits(X), axis=1)]
