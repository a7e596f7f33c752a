"""Estimator-style wrappers: classify per-class load vectors as stable or not.

Samples are rows of per-class per-ONU loads; label 1 means some queue of a
loaded class is not stable.  ``fit`` only validates and freezes the
topology, there is nothing to learn.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import NoSolution, mean_field_stability, uniform_overhead_stability
from .experiments import ClassSpec, analytic_unstable, boundary_analytic, probe_boundary_sim, sim_unstable
from .model import PacketLaw
from .sim.report import DEFAULT_GROWTH_THRESHOLD


class _RegionBase(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        class_counts: Sequence[int] = (10, 10),
        n_wavelengths: int = 10,
        switch_overhead: float = 1.2e-6,
        grant_limit: float = 8e-6,
        packet_time: float = 8e-6,
        transmitters: int = 1,
    ):
        self.class_counts = class_counts
        self.n_wavelengths = n_wavelengths
        self.switch_overhead = switch_overhead
        self.grant_limit = grant_limit
        self.packet_time = packet_time
        self.transmitters = transmitters

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        counts = [int(c) for c in self.class_counts]
        if X.shape[1] != len(counts):
            raise ValueError(f"X has {X.shape[1]} columns but there are {len(counts)} classes")
        if np.any(X < 0):
            raise ValueError("loads must be nonnegative")
        self.spec_ = ClassSpec.classes(
            counts, int(self.n_wavelengths), float(self.switch_overhead), float(self.grant_limit),
            PacketLaw.deterministic(float(self.packet_time)), int(self.transmitters),
        )
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def _check(self, X):
        check_is_fitted(self, "spec_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    @staticmethod
    def _monitor(row):
        return [c for c in range(row.shape[0]) if row[c] > 0]


class MeanFieldRegion(_RegionBase):
    """Analytic classifier from the mean-field conditions.

    ``method`` is ``"mean-field"`` (saturated-set search) or ``"corollary"``
    (closed form, equal overheads only).
    """

    def __init__(
        self,
        class_counts: Sequence[int] = (10, 10),
        n_wavelengths: int = 10,
        switch_overhead: float = 1.2e-6,
        grant_limit: float = 8e-6,
        packet_time: float = 8e-6,
        transmitters: int = 1,
        method: str = "mean-field",
    ):
        super().__init__(class_counts, n_wavelengths, switch_overhead, grant_limit, packet_time, transmitters)
        self.method = method

    def predict(self, X):
        X = self._check(X)
        return np.array([int(analytic_unstable(self.spec_, row, self._monitor(row), self.method)) for row in X])

    def decision_function(self, X):
        """Largest binding margin over loaded queues; positive means unstable."""
        X = self._check(X)
        out = np.empty(X.shape[0])
        for k, row in enumerate(X):
            traffic = self.spec_.build(row)
            try:
                if self.method == "corollary":
                    report = uniform_overhead_stability(self.spec_.config, traffic)
                else:
                    report = mean_field_stability(self.spec_.config, traffic)
            except NoSolution:
                out[k] = np.inf
                continue
            keys = self.spec_.queues_of(self._monitor(row))
            out[k] = max((report.binding_margin[q] for q in keys), default=-np.inf)
            if report.saturated_set & set(keys):
                out[k] = max(out[k], 0.0) if np.isfinite(out[k]) else out[k]
        return out

    def boundary(self, direction, offset=None) -> float:
        check_is_fitted(self, "spec_")
        return boundary_analytic(self.spec_, direction, offset, method=self.method).boundary_load


class SimulatedRegion(_RegionBase):
    """Classifier backed by simulation and the backlog-growth detector."""

    def __init__(
        self,
        class_counts: Sequence[int] = (10, 10),
        n_wavelengths: int = 10,
        switch_overhead: float = 1.2e-6,
        grant_limit: float = 8e-6,
        packet_time: float = 8e-6,
        transmitters: int = 1,
        seeds: Sequence[int] = (0, 1, 2),
        horizon: float = 1.0,
        warmup: Optional[float] = None,
        threshold: float = DEFAULT_GROWTH_THRESHOLD,
    ):
        super().__init__(class_counts, n_wavelengths, switch_overhead, grant_limit, packet_time, transmitters)
        self.seeds = seeds
        self.horizon = horizon
        self.warmup = warmup
        self.threshold = threshold

    def _warmup(self):
        return 0.1 * self.horizon if self.warmup is None else self.warmup

    def predict(self, X):
        X = self._check(X)
        out = []
        for row in X:
            verdict, _ = sim_unstable(self.spec_, row, self._monitor(row), tuple(self.seeds),
                                      float(self.horizon), float(self._warmup()), self.threshold)
            out.append(int(verdict))
        return np.array(out)

    def boundary(self, direction, offset=None, resolution=None) -> float:
        check_is_fitted(self, "spec_")
        return probe_boundary_sim(self.spec_, direction, resolution, tuple(self.seeds), float(self.horizon),
                                  float(self._warmup()), offset, threshold=self.threshold).boundary_load
