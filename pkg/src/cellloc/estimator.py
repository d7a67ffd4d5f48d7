"""scikit-learn style front end to the simulator.

``fit`` indexes the base stations (building both database placements) and
``predict`` runs one simulated localization per row of true mobile positions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import SPEED_OF_LIGHT_KM_S, Point, PropagationConstants
from .metrics import summarize
from .protocol import Scenario
from .simulator import (
    Bsc,
    Bts,
    Mobile,
    SimConfig,
    Topology,
    build_central_db,
    build_neighbor_db,
    check_runnable,
    run_localization,
)


class HelloLocalizer(BaseEstimator):
    """Locate mobiles from simulated hello-message round trips.

    Parameters
    ----------
    scenario : {"ddba", "cdba"}
        Where the station coordinates live: on every BTS or on the BSC.
    speed_of_light : float
        Signal speed in km/s.
    timing_noise_sigma : float
        Std. dev. of timestamp read noise at the measuring node, seconds.
    processing_delay : float
        Per-hop processing delay, seconds.
    eq9_literal : bool
        Invert BSC-timed loops with the one-way form.
    bsc_position : array-like of shape (2,), optional
        Controller position when ``fit`` gets a plain coordinate array.
        Defaults to the stations' centroid.
    random_state : int
        Seed for the timing noise.
    """

    def __init__(self, scenario="ddba", speed_of_light=SPEED_OF_LIGHT_KM_S,
                 timing_noise_sigma=0.0, processing_delay=0.0, eq9_literal=False,
                 bsc_position=None, random_state=0):
        self.scenario = scenario
        self.speed_of_light = speed_of_light
        self.timing_noise_sigma = timing_noise_sigma
        self.processing_delay = processing_delay
        self.eq9_literal = eq9_literal
        self.bsc_position = bsc_position
        self.random_state = random_state

    def _config(self) -> SimConfig:
        return SimConfig(Scenario(self.scenario), PropagationConstants(self.speed_of_light),
                         self.timing_noise_sigma, self.processing_delay,
                         self.random_state, self.eq9_literal)

    def fit(self, X, y=None):
        """Index base stations.

        ``X`` is either a :class:`~cellloc.simulator.Topology` or an array of
        station coordinates of shape (n_stations, 2), in which case station
        ids are row numbers and all stations share one controller (id 0).
        ``y`` is ignored.
        """
        self.config_ = self._config()
        if isinstance(X, Topology):
            topology = X.with_mobiles(())
        else:
            X = check_array(X, ensure_min_samples=3)
            if X.shape[1] != 2:
                raise ValueError(f"expected 2 coordinate columns, got {X.shape[1]}")
            if self.bsc_position is None:
                center = X.mean(axis=0)
            else:
                center = np.asarray(self.bsc_position, dtype=float).reshape(2)
            topology = Topology(
                btss=tuple(Bts(i, Point(*map(float, row)), 0) for i, row in enumerate(X)),
                bscs=(Bsc(0, Point(float(center[0]), float(center[1]))),))
        self.topology_ = topology
        self.neighbor_db_ = build_neighbor_db(topology)
        self.central_db_ = build_central_db(topology)
        self.station_positions_ = np.array([[b.position.x, b.position.y]
                                            for b in topology.btss])
        self.n_features_in_ = 2
        return self

    def localize(self, X, serving_bts=None):
        """Simulate each row of ``X`` and return the list of results."""
        check_is_fitted(self, "topology_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        if serving_bts is not None and len(serving_bts) != len(X):
            raise ValueError("serving_bts must have one entry per row")
        mobiles = tuple(
            Mobile(i, Point(float(x), float(y)),
                   serving_bts=None if serving_bts is None else serving_bts[i])
            for i, (x, y) in enumerate(X))
        topology = self.topology_.with_mobiles(mobiles)
        check_runnable(self.config_, topology)
        return [run_localization(self.config_, topology, m.id) for m in mobiles]

    def predict(self, X, serving_bts=None):
        """Estimated positions, shape (n, 2); NaN rows for failed localizations."""
        self.results_ = self.localize(X, serving_bts)
        out = np.full((len(self.results_), 2), np.nan)
        for i, r in enumerate(self.results_):
            if r.ok:
                out[i] = (r.estimated.x, r.estimated.y)
        return out

    def score(self, X, y=None):
        """Negative mean position error in km over successful localizations."""
        results = self.localize(X)
        summary = summarize(results, self.config_.scenario)
        if summary.mean_position_error is None:
            return -np.inf
        return -summary.mean_position_error
