"""Estimator-style wrappers around the device simulator and detector.

Two small classes bridge the functional core to the fit/transform/predict
conventions used across scikit-learn, so the feature extractor can sit in a
sklearn Pipeline and the threshold can be tuned with standard tools.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import metrics
from .dynamics import DynParams, solver_for
from .netgen import GenParams, generate_device
from .pipeline import extract_features


class NanowireFeatureExtractor(TransformerMixin, BaseEstimator):
    """Maps pooled drive vectors to device feature vectors.

    ``fit`` grows a nanowire device from the seed; ``transform`` presents
    each input row to it as one tile and returns the drive concatenated with
    the readout voltages.  Stateless across rows (per-tile reset), so
    transform order never matters.

    Parameters mirror the generator/dynamics defaults; any of them can be
    overridden via ``set_params`` before fitting.
    """

    def __init__(self, device_seed: int = 0, wire_count: int = 1520,
                 grid_n: int = 16, v_set: float = 1e-2,
                 v_reset: float = 5e-3, lambda_max: float = 1.5e-2,
                 decay_rate: float = 10.0, dt: float = 1e-4,
                 steps_per_tile: int = 14, g_off: float = 7.75e-8,
                 g_on: float = 7.75e-5):
        self.device_seed = device_seed
        self.wire_count = wire_count
        self.grid_n = grid_n
        self.v_set = v_set
        self.v_reset = v_reset
        self.lambda_max = lambda_max
        self.decay_rate = decay_rate
        self.dt = dt
        self.steps_per_tile = steps_per_tile
        self.g_off = g_off
        self.g_on = g_on

    def _dyn_params(self) -> DynParams:
        return DynParams(v_set=self.v_set, v_reset=self.v_reset,
                         lambda_max=self.lambda_max,
                         decay_rate=self.decay_rate, dt=self.dt,
                         steps_per_tile=self.steps_per_tile,
                         g_off=self.g_off, g_on=self.g_on)

    def fit(self, X=None, y=None):
        params = GenParams(wire_count=self.wire_count, grid_n=self.grid_n,
                           seed=self.device_seed)
        params.validate()
        self._dyn_params().validate()
        self.graph_ = generate_device(params)
        self.n_features_in_ = len(self.graph_.input_node_ids)
        self.n_features_out_ = (len(self.graph_.input_node_ids)
                                + len(self.graph_.readout_node_ids))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "graph_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("expected %d drive values per row, got %d"
                             % (self.n_features_in_, X.shape[1]))
        dyn = self._dyn_params()
        solver = solver_for(self.graph_, dyn.g_off)
        out = np.empty((X.shape[0], self.n_features_out_))
        for i in range(X.shape[0]):
            out[i] = extract_features(self.graph_, X[i], dyn, solver=solver)
        return out


class ThermalEventDetector(ClassifierMixin, BaseEstimator):
    """Thresholded spanning-norm classifier over paired band features.

    Rows of ``X`` hold the two band feature vectors back to back; the
    decision value is the range (max minus min) of their difference.  ``fit``
    picks the threshold that maximizes Matthews correlation on the given
    labels unless a fixed threshold was supplied.
    """

    def __init__(self, threshold: float | None = None, grid_size: int = 200):
        self.threshold = threshold
        self.grid_size = grid_size

    def decision_function(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] % 2 != 0 or X.shape[1] == 0:
            raise ValueError("rows must concatenate two equal-length "
                             "band features")
        half = X.shape[1] // 2
        diff = X[:, :half] - X[:, half:]
        return diff.max(axis=1) - diff.min(axis=1)

    def fit(self, X, y):
        scores = self.decision_function(X)
        y = np.asarray(y, dtype=bool).reshape(-1)
        if y.shape != scores.shape:
            raise ValueError("labels do not match the number of rows")
        self.classes_ = np.array([False, True])
        self.n_features_in_ = check_array(X, dtype=np.float64).shape[1]
        if self.threshold is not None:
            if not (self.threshold >= 0):
                raise ValueError("threshold must be non-negative")
            self.threshold_ = float(self.threshold)
            return self
        if self.grid_size < 1:
            raise ValueError("grid_size must be positive")
        grid = metrics.default_sweep_grid(scores, size=self.grid_size)
        result = metrics.sweep(scores, y, grid)
        self.threshold_ = float(result.argmax_mcc_threshold)
        self.fit_mcc_ = float(np.max(result.mcc))
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "threshold_")
        return self.decision_function(X) > self.threshold_

    def score(self, X, y, sample_weight=None) -> float:
        """Matthews correlation on the given data (not accuracy)."""
        c = metrics.confusion(self.predict(X),
                              np.asarray(y, dtype=bool).reshape(-1))
        value = metrics.mcc(c)
        return 0.0 if math.isnan(value) else value
