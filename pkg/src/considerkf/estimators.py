"""scikit-learn style wrappers around the filter recursions.

Each estimator is configured with a :class:`~considerkf.model.SystemModel`,
a :class:`~considerkf.model.ParameterPrior` and initial conditions. ``fit``
runs the filter over a measurement sequence ``Z`` of shape
``(n_steps, m)`` and stores the trajectory; ``transform`` filters a new
sequence from the same initial conditions and returns the estimates,
shape ``(n_steps, n)``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .model import ParameterPrior, Scenario, SensitivityWeight, SystemModel
from .sim import FilterTracker


class _BaseFilter(TransformerMixin, BaseEstimator):
    _filter_id = ""

    def __init__(self, model: SystemModel, prior: ParameterPrior, x0_hat=None, p0=None):
        self.model = model
        self.prior = prior
        self.x0_hat = x0_hat
        self.p0 = p0

    def _weight(self) -> SensitivityWeight:
        return SensitivityWeight.from_prior(self.prior)

    def _scenario(self, steps: int) -> Scenario:
        n = self.model.n
        x0 = np.zeros(n) if self.x0_hat is None else self.x0_hat
        p0 = np.eye(n) if self.p0 is None else self.p0
        return Scenario(self.model, self.prior, x0, p0, steps=steps)

    def _validate(self, Z, reset: bool) -> np.ndarray:
        Z = check_array(Z, ensure_2d=False, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if Z.shape[1] != self.model.m:
            raise ValueError(f"Z has {Z.shape[1]} columns, model expects {self.model.m} measurements")
        if reset:
            self.n_features_in_ = Z.shape[1]
        return Z

    def _run(self, Z: np.ndarray):
        scenario = self._scenario(len(Z))
        tracker = FilterTracker(self._filter_id, scenario, scenario.x0_hat, self._weight())
        estimates, covariances = [], []
        for k, z in enumerate(Z):
            covariances.append(tracker.step(z, self.model.at(k)))
            estimates.append(tracker.state.x_hat)
        return np.array(estimates), np.array(covariances)

    def fit(self, Z, y=None):
        Z = self._validate(Z, reset=True)
        self.estimates_, self.covariances_ = self._run(Z)
        return self

    def transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "estimates_")
        return self._run(self._validate(Z, reset=False))[0]

    def fit_transform(self, Z, y=None, **fit_params) -> np.ndarray:
        return self.fit(Z).estimates_


class KalmanFilter(_BaseFilter):
    """Standard filter that ignores the uncertain parameter."""

    _filter_id = "KF"


class ConsiderKalmanFilter(_BaseFilter):
    """Consider (Schmidt) filter carrying the state/parameter cross-covariance."""

    _filter_id = "CKF"


class SensitivityConsiderKalmanFilter(_BaseFilter):
    """Consider filter propagated through sensitivity matrices.

    ``covariances_`` holds the recovered total covariance.
    """

    _filter_id = "SMCKF"


class DesensitizedKalmanFilter(_BaseFilter):
    """Desensitized filter with analytical gain.

    ``weight`` is either ``"Ppp"`` (the prior covariance, which makes the
    filter coincide with the consider filter) or an explicit l x l matrix.
    """

    _filter_id = "SDKF"

    def __init__(self, model: SystemModel, prior: ParameterPrior, x0_hat=None, p0=None, weight="Ppp"):
        super().__init__(model, prior, x0_hat, p0)
        self.weight = weight

    def _weight(self) -> SensitivityWeight:
        if isinstance(self.weight, str):
            if self.weight != "Ppp":
                raise ValueError("weight must be 'Ppp' or a matrix")
            return SensitivityWeight.from_prior(self.prior)
        return SensitivityWeight(self.weight)
