"""scikit-learn style wrappers around the functional core.

These estimators let the pieces compose with the wider ecosystem
(`Pipeline`, `clone`, grid search): an event-extracting transformer, the
DP mixture as a density/cluster estimator, and the full surprise-cutoff
pipeline as a fit-once analyzer. State lives in immutable snapshots
(``state_``), so taking a model's before/after values stays cheap.
"""

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import cutoff as cutoff_mod
from . import dpgmm
from .blockfilter import FilterParams, block_filter, events_to_matrix, extract_events
from .ingest import PowerSeries
from .validation import as_float_array


class EventExtractor(BaseEstimator, TransformerMixin):
    """Turn a raw power signal into appliance-event feature vectors.

    ``transform`` accepts a 1-D watt array or a PowerSeries and returns
    the (n_events, feature_dim) matrix of level-change features.
    """

    def __init__(self, abs_threshold=15.0, rel_threshold=0.05,
                 min_segment_len=3, event_threshold=50.0, feature_dim=1):
        self.abs_threshold = abs_threshold
        self.rel_threshold = rel_threshold
        self.min_segment_len = min_segment_len
        self.event_threshold = event_threshold
        self.feature_dim = feature_dim

    def _params(self):
        return FilterParams(
            abs_threshold=self.abs_threshold,
            rel_threshold=self.rel_threshold,
            min_segment_len=self.min_segment_len,
            event_threshold=self.event_threshold,
        )

    def fit(self, X=None, y=None):
        self._params()  # validate
        return self

    def transform(self, X):
        params = self._params()
        if isinstance(X, PowerSeries):
            events = []
            for lo, hi in X.segments():
                if hi - lo < params.min_segment_len:
                    continue
                segs = block_filter(X.values[lo:hi], params)
                events.extend(extract_events(segs, params, self.feature_dim))
            return events_to_matrix(events)
        values = as_float_array(np.asarray(X).ravel(), "X", ndim=1)
        segs = block_filter(values, params)
        return events_to_matrix(
            extract_events(segs, params, self.feature_dim))

    def get_feature_names_out(self, input_features=None):
        return (["delta"] if self.feature_dim == 1
                else ["delta", "post_level"])


class DirichletProcessGMM(BaseEstimator, DensityMixin):
    """Truncated variational DP Gaussian mixture as an estimator.

    ``fit`` replaces any previous state; ``update`` refits on a grown
    cumulative sample, warm-starting from the current posterior, which is
    the streaming regime the surprise pipeline uses.
    """

    def __init__(self, n_components=30, alpha=1.0, kappa=0.01, nu=None,
                 scale_watts=50.0, phi_mean=None, tol=1e-5, max_iter=500,
                 n_init=4, random_state=0):
        self.n_components = n_components
        self.alpha = alpha
        self.kappa = kappa
        self.nu = nu
        self.scale_watts = scale_watts
        self.phi_mean = phi_mean
        self.tol = tol
        self.max_iter = max_iter
        self.n_init = n_init
        self.random_state = random_state

    def _init_state(self, X):
        dim = X.shape[1]
        phi = ([self.phi_mean] * dim if self.phi_mean is not None
               else X.mean(axis=0))
        prior = dpgmm.NiwParams.default(
            dim=dim, phi_mean=phi, kappa=self.kappa, nu=self.nu,
            scale_watts=self.scale_watts)
        return dpgmm.init_model(self.n_components, self.alpha, prior,
                                seed=self.random_state)

    def fit(self, X, y=None):
        X = as_float_array(X, "X", ndim=2)
        state = self._init_state(X)
        self.state_ = dpgmm.fit_update(state, X, tol=self.tol,
                                       max_iter=self.max_iter,
                                       n_init=self.n_init)
        self._refresh()
        return self

    def update(self, X):
        """Warm-started refit on the cumulative sample."""
        check_is_fitted(self, "state_")
        X = as_float_array(X, "X", ndim=2)
        self.state_ = dpgmm.fit_update(self.state_, X, tol=self.tol,
                                       max_iter=self.max_iter,
                                       n_init=self.n_init)
        self._refresh()
        return self

    def _refresh(self):
        state = self.state_
        self.weights_ = dpgmm.expected_weights(state)
        self.means_ = state.mean
        self.covariances_ = state.scale / (state.dof - state.dim - 1.0)[:, None, None]
        self.elbo_trace_ = state.elbo_trace
        self.n_iter_ = len(state.elbo_trace)

    def predict(self, X):
        check_is_fitted(self, "state_")
        return dpgmm.assign_states(self.state_, as_float_array(X, "X", ndim=2))

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        return dpgmm.responsibilities(self.state_, as_float_array(X, "X", ndim=2))

    def score_samples(self, X):
        check_is_fitted(self, "state_")
        dens = dpgmm.predictive_density(self.state_,
                                        as_float_array(X, "X", ndim=2))
        return np.log(np.maximum(dens, 1e-300))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))


class SurpriseCutoff(BaseEstimator):
    """Fit-once analyzer: run the windowed surprise pipeline on a series.

    After ``fit``, the scan outcome is exposed as ``found_``,
    ``cutoff_window_``, ``cutoff_event_``, ``cutoff_timestamp_``, the
    full trace as ``trace_``, and the final mixture snapshot as
    ``model_``.
    """

    def __init__(self, window_events=50, patience=100,
                 thresh_postdictive=0.01, thresh_transitional=0.05,
                 divergence="js", grid_points=2048, smoothing=1.0,
                 relabel=True, filter_params=None, mixture=None,
                 random_state=0):
        self.window_events = window_events
        self.patience = patience
        self.thresh_postdictive = thresh_postdictive
        self.thresh_transitional = thresh_transitional
        self.divergence = divergence
        self.grid_points = grid_points
        self.smoothing = smoothing
        self.relabel = relabel
        self.filter_params = filter_params
        self.mixture = mixture
        self.random_state = random_state

    def _config(self):
        return cutoff_mod.CutoffConfig(
            window_events=self.window_events,
            seed=self.random_state,
            patience=self.patience,
            thresh_postdictive=self.thresh_postdictive,
            thresh_transitional=self.thresh_transitional,
            divergence=self.divergence,
            grid_points=self.grid_points,
            smoothing=self.smoothing,
            relabel=self.relabel,
            filter_params=self.filter_params or FilterParams(),
            mixture=self.mixture or cutoff_mod.DpgmmConfig(),
        )

    def fit(self, X, y=None):
        if not isinstance(X, PowerSeries):
            values = as_float_array(np.asarray(X).ravel(), "X", ndim=1)
            X = PowerSeries(np.arange(values.size, dtype=float), values, 1.0)
        result = cutoff_mod.run_pipeline(X, self._config())
        self.result_ = result
        self.trace_ = result.trace
        self.found_ = result.found
        self.cutoff_window_ = result.cutoff_window
        self.cutoff_event_ = result.cutoff_event
        self.cutoff_timestamp_ = result.cutoff_timestamp
        self.model_ = result.model
        return self
