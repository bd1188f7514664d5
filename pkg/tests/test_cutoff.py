import numpy as np
import pytest

from powersurprise import cutoff, dpgmm, markov, surprise, synth
from powersurprise.blockfilter import events_from_series, events_to_matrix
from powersurprise.cutoff import CutoffConfig, run_pipeline, scan, scan_online
from powersurprise.errors import ConfigError, InsufficientDataError
from powersurprise.synth import ApplianceSpec, SyntheticSpec


def cfg_for(patience=3, w=10, **kw):
    return CutoffConfig(window_events=w, seed=0, patience=patience, **kw)


def trace_from(so, st=None):
    so = np.asarray(so, float)
    st = np.zeros_like(so) if st is None else np.asarray(st, float)
    return surprise.make_trace(so, st, window_events=10)


class TestScanGoldens:

    def test_loud_then_quiet_forever(self):
        # norm values: window 0 is the max (1.0), others 0
        t = trace_from([5.0, 0.0, 0.0, 0.0, 0.0])
        res = scan(t, cfg_for(patience=3))
        assert res.found and not res.truncated_patience
        assert res.cutoff_window == 1
        assert res.cutoff_event == 2 * 10
        # every window of the patience run satisfies the joint threshold
        run = slice(res.cutoff_window, res.cutoff_window + 3)
        assert np.all(t.norm_postdictive[run] <= 0.01)
        assert np.all(t.norm_transitional[run] <= 0.05)

    def test_all_windows_loud(self):
        t = trace_from([5.0, 4.0, 3.0, 5.0])
        res = scan(t, cfg_for(patience=2))
        assert not res.found
        assert res.cutoff_window == -1

    def test_broken_run_resumes_later(self):
        # quiet at 1, spike at 2, quiet 3..5 completes patience 3
        t = trace_from([5.0, 0.0, 4.0, 0.0, 0.0, 0.0])
        res = scan(t, cfg_for(patience=3))
        assert res.found and res.cutoff_window == 3

    def test_truncated_patience_at_trace_end(self):
        t = trace_from([5.0, 4.0, 0.0, 0.0])
        res = scan(t, cfg_for(patience=5))
        assert res.found and res.truncated_patience
        assert res.cutoff_window == 2

    def test_exact_patience_run_not_truncated(self):
        t = trace_from([5.0, 0.0, 0.0, 0.0])
        res = scan(t, cfg_for(patience=3))
        assert res.found and not res.truncated_patience
        assert res.cutoff_window == 1

    def test_joint_threshold_requires_both_channels(self):
        so = [5.0, 0.0, 0.0, 0.0]
        st = [5.0, 0.0, 4.0, 0.0]  # transitional spike at window 2
        res = scan(trace_from(so, st), cfg_for(patience=2))
        assert res.found and res.cutoff_window == 3 and res.truncated_patience

    def test_empty_trace_rejected(self):
        with pytest.raises(InsufficientDataError):
            scan(trace_from([]), cfg_for())


class TestScanProperties:

    def test_stable_under_appending_sub_max_windows(self):
        rng = np.random.default_rng(0)
        base_so = np.concatenate([[5.0], rng.uniform(0, 0.002, 8)])
        t1 = trace_from(base_so)
        res1 = scan(t1, cfg_for(patience=4))
        assert res1.found and not res1.truncated_patience
        appended = np.concatenate([base_so, rng.uniform(0, 4.9, 6)])
        res2 = scan(trace_from(appended), cfg_for(patience=4))
        assert res2.found
        assert res2.cutoff_window == res1.cutoff_window
        assert res2.truncated_patience == res1.truncated_patience

    def test_new_maximum_never_delays_cutoff(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            so = rng.uniform(0, 1, 30)
            so[0] = 1.0
            res1 = scan(trace_from(so), cfg_for(patience=5,
                                                thresh_postdictive=0.3))
            so2 = np.concatenate([so, [50.0]])
            res2 = scan(trace_from(so2), cfg_for(patience=5,
                                                 thresh_postdictive=0.3))
            if res1.found and not res1.truncated_patience:
                assert res2.found
                assert res2.cutoff_window <= res1.cutoff_window

    def test_lowering_thresholds_never_earlier(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            so = rng.uniform(0, 1.0, 40)
            st = rng.uniform(0, 1.0, 40)
            hi = scan(trace_from(so, st), cfg_for(
                patience=4, thresh_postdictive=0.4, thresh_transitional=0.4))
            lo = scan(trace_from(so, st), cfg_for(
                patience=4, thresh_postdictive=0.2, thresh_transitional=0.2))
            if lo.found:
                assert hi.found
                assert lo.cutoff_window >= hi.cutoff_window


class TestScanOnline:

    def test_revision_log_records_invalidation(self):
        # provisional (truncated) cutoff at window 1, broken at window 3
        so = np.array([5.0, 0.0, 0.0, 4.0, 0.0])
        final, log = scan_online(trace_from(so), cfg_for(patience=4))
        assert final.found and final.truncated_patience
        assert final.cutoff_window == 4
        cuts = [e["cutoff_window"] for e in log]
        assert 1 in cuts          # declared provisionally
        assert None in cuts[1:]   # later invalidated by the spike
        assert cuts[-1] == 4

    def test_renormalization_can_move_cutoff_earlier(self):
        # window 1 is loud under max=1 but quiet once the max jumps to 50
        so = np.array([1.0, 0.02, 0.005, 50.0, 0.0, 0.0])
        final, log = scan_online(trace_from(so), cfg_for(patience=2))
        starts = [e["cutoff_window"] for e in log if e["cutoff_window"] is not None]
        assert 2 in starts  # before the new max, run could only start at 2
        assert final.cutoff_window == 1

    def test_final_matches_offline_scan(self):
        rng = np.random.default_rng(3)
        so = rng.uniform(0, 1, 25)
        st = rng.uniform(0, 1, 25)
        t = trace_from(so, st)
        cfg = cfg_for(patience=3, thresh_postdictive=0.3, thresh_transitional=0.5)
        final, _ = scan_online(t, cfg)
        off = scan(t, cfg)
        assert final.found == off.found
        assert final.cutoff_window == off.cutoff_window


def small_stream(n_samples=26_000, seed=5, novelty=()):
    spec = SyntheticSpec(
        appliances=(
            ApplianceSpec.on_off("washer", 700, 22, 26, min_dwell=8),
            ApplianceSpec.on_off("kettle", 1800, 24, 30, min_dwell=8),
        ),
        n_samples=n_samples, noise_std=2.0, novelty=novelty)
    series, _ = synth.generate(spec, seed=seed)
    return series


@pytest.fixture(scope="module")
def pipeline_run():
    series = small_stream()
    cfg = CutoffConfig(window_events=30, seed=11, patience=10)
    return series, cfg, run_pipeline(series, cfg)


class TestRunPipeline:

    def test_finds_cutoff_on_stationary_stream(self, pipeline_run):
        _, _, res = pipeline_run
        assert res.found
        assert res.cutoff_window < res.summary["n_windows"] - 1

    def test_summary_counts(self, pipeline_run):
        series, cfg, res = pipeline_run
        assert res.summary["n_samples"] == len(series)
        assert res.summary["n_windows"] == res.summary["n_events"] // 30
        assert res.summary["leftover_events"] == res.summary["n_events"] % 30

    def test_cutoff_event_and_timestamp(self, pipeline_run):
        series, cfg, res = pipeline_run
        assert res.cutoff_event == (res.cutoff_window + 1) * 30
        events = events_from_series(series, cfg.filter_params)
        assert res.cutoff_timestamp == events[res.cutoff_event - 1].time

    def test_deterministic_given_seed(self, pipeline_run):
        series, cfg, res = pipeline_run
        res2 = run_pipeline(series, cfg)
        assert np.array_equal(res2.trace.raw_postdictive, res.trace.raw_postdictive)
        assert np.array_equal(res2.trace.raw_transitional, res.trace.raw_transitional)
        assert res2.cutoff_window == res.cutoff_window
        assert dpgmm.to_dict(res2.model) == dpgmm.to_dict(res.model)

    def test_integration_equals_composition(self, pipeline_run):
        series, cfg, res = pipeline_run
        events = events_from_series(series, cfg.filter_params, cfg.feature_dim)
        X = events_to_matrix(events)
        w = cfg.window_events
        n_windows = len(events) // w
        prior = cfg.mixture.base_prior(1, X[:w].mean(axis=0))
        model = dpgmm.init_model(cfg.mixture.truncation, cfg.mixture.alpha,
                                 prior, cfg.seed)
        so, st = [], []
        for j in range(n_windows):
            hi = (j + 1) * w
            before = model
            model = dpgmm.fit_update(model, X[:hi], tol=cfg.mixture.tol,
                                     max_iter=cfg.mixture.max_iter,
                                     n_init=cfg.mixture.n_init)
            so.append(surprise.postdictive_surprise(
                before, model, kind=cfg.divergence, n_points=cfg.grid_points))
            labels = dpgmm.assign_states(model, X[:hi])
            st.append(markov.transitional_surprise_window(
                labels, j * w, w - 1, cfg.mixture.truncation,
                smoothing=cfg.smoothing, kind=cfg.divergence))
        assert np.allclose(so, res.trace.raw_postdictive, atol=1e-12, rtol=0)
        assert np.allclose(st, res.trace.raw_transitional, atol=1e-12, rtol=0)

    def test_insufficient_events_rejected(self):
        series = small_stream(n_samples=900)
        with pytest.raises(InsufficientDataError, match="windows"):
            run_pipeline(series, CutoffConfig(window_events=500, seed=0))

    def test_feature_dim_two_rejected_for_surprise(self):
        series = small_stream(n_samples=2000)
        cfg = CutoffConfig(window_events=10, seed=0, feature_dim=2)
        with pytest.raises(ConfigError, match="feature_dim"):
            run_pipeline(series, cfg)

    def test_frozen_label_mode_runs(self):
        series = small_stream(n_samples=8000)
        cfg = CutoffConfig(window_events=20, seed=1, patience=5, relabel=False)
        res = run_pipeline(series, cfg)
        assert len(res.trace) == res.summary["n_windows"]
        assert np.all(res.trace.raw_transitional >= 0)


def test_cutoff_config_validation():
    with pytest.raises(ConfigError):
        CutoffConfig(window_events=0, seed=0)
    with pytest.raises(ConfigError):
        CutoffConfig(window_events=10, seed=0, thresh_postdictive=0.0)
    with pytest.raises(ConfigError):
        CutoffConfig(window_events=10, seed=0, thresh_transitional=1.5)
    with pytest.raises(ConfigError):
        CutoffConfig(window_events=10, seed=0, divergence="cauchy")
    with pytest.raises(ConfigError):
        CutoffConfig(window_events=10, seed=0, patience=0)
