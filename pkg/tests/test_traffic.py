import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import constants
from slicing.traffic import (SliceTraffic, VideoSource, VonrSource, calibrate_truncated_pareto,
                             clamped_pareto_mean, create_source, load_trace, pareto_from_uniform,
                             sample_truncated_pareto, sample_user_count)
from slicing.types import CalibrationError, ConfigError, Trace, TraceError, TrafficKind, TrafficModel


class StubRng:
    """Hands out queued values for uniform and Poisson draws."""

    def __init__(self, uniforms=(), poissons=()):
        self.uniforms = list(uniforms)
        self.poissons = list(poissons)

    def uniform(self, low, high):
        return self.uniforms.pop(0)

    def poisson(self, mean, size=None):
        return self.poissons.pop(0)


def video_model(**kw):
    return TrafficModel(TrafficKind.VIDEO, kw.pop("user_mean", 20.0), kw.pop("user_max", 43), **kw)


class TestCalibration:
    def test_video_interarrival_mean_is_exact(self):
        scale = calibrate_truncated_pareto(1.2, 6.0, 12.5)
        assert abs(clamped_pareto_mean(1.2, scale, 12.5) - 6.0) < 1e-9

    def test_video_size_mean_is_exact(self):
        scale = calibrate_truncated_pareto(1.2, 100.0, 250.0)
        assert abs(clamped_pareto_mean(1.2, scale, 250.0) - 100.0) < 1e-9

    def test_mean_equal_to_max_is_infeasible(self):
        with pytest.raises(CalibrationError):
            calibrate_truncated_pareto(1.2, 12.5, 12.5)

    def test_shape_at_most_one_is_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_truncated_pareto(1.0, 6.0, 12.5)

    def test_closed_form_matches_monte_carlo(self):
        scale = calibrate_truncated_pareto(1.2, 6.0, 12.5)
        draws = sample_truncated_pareto(np.random.default_rng(3), 1.2, scale, 12.5, size=2_000_000)
        assert draws.mean() == pytest.approx(6.0, rel=5e-3)


class TestTruncatedPareto:
    def test_unit_uniform_gives_the_scale(self):
        assert pareto_from_uniform(1.0, 1.2, 3.0, 12.5) == 3.0

    def test_tiny_uniform_is_clamped(self):
        assert pareto_from_uniform(1e-300, 1.2, 3.0, 12.5) == 12.5

    @pytest.mark.parametrize("target,max_value", [(6.0, 12.5), (100.0, 250.0)])
    def test_million_draws_hit_the_target_mean(self, target, max_value):
        scale = calibrate_truncated_pareto(constants.PARETO_SHAPE, target, max_value)
        draws = sample_truncated_pareto(np.random.default_rng(11), constants.PARETO_SHAPE, scale,
                                        max_value, size=1_000_000)
        assert 0.98 * target <= draws.mean() <= 1.02 * target
        assert draws.min() >= scale
        assert draws.max() <= max_value


class TestUserCount:
    def test_below_cap(self):
        assert sample_user_count(StubRng(poissons=[18]), 20.0, 43) == 18

    def test_capped(self):
        assert sample_user_count(StubRng(poissons=[130]), 70.0, 104) == 104

    def test_clamped_mean_matches_exact_summation(self):
        mean, cap = 1.0, 7
        pmf = stats.poisson.pmf(np.arange(cap), mean)
        exact = float(np.dot(np.arange(cap), pmf) + cap * stats.poisson.sf(cap - 1, mean))
        draws = sample_user_count(np.random.default_rng(5), mean, cap, size=1_000_000)
        assert 0.97 * exact <= draws.mean() <= 1.03 * exact
        assert draws.max() <= cap


class TestVonr:
    def test_constant_size_packets_follow_the_draws(self):
        model = TrafficModel(TrafficKind.VONR, 1.0, 1)
        traffic = SliceTraffic(0, VonrSource(model), StubRng(uniforms=[40, 50, 60, 100]))
        packets = traffic.generate_window_arrivals(1, 0, 160)
        assert [p.arrival_slot for p in packets] == [40, 90, 150]
        assert [p.size for p in packets] == [40, 40, 40]
        assert all(p.remaining == p.size for p in packets)

    def test_interarrival_mean_and_range(self):
        source = VonrSource(TrafficModel(TrafficKind.VONR, 1.0, 1))
        rng = np.random.default_rng(8)
        draws = np.array([source.next_interarrival(rng) for _ in range(1_000_000)])
        assert 0.98 * 80.0 <= draws.mean() <= 1.02 * 80.0
        assert draws.min() >= 0.0 and draws.max() < 160.0


class TestVideo:
    def test_no_active_users_no_packets(self):
        traffic = SliceTraffic(2, VideoSource(video_model()), np.random.default_rng(0))
        assert traffic.generate_window_arrivals(0, 0, 100) == []

    def test_identical_seed_identical_packets(self):
        def packets(seed):
            traffic = SliceTraffic(2, VideoSource(video_model()), np.random.default_rng(seed))
            return [(p.arrival_slot, p.size, p.user_id)
                    for w in range(3) for p in traffic.generate_window_arrivals(20, 100 * w, 100)]
        assert packets(4) == packets(4)
        assert packets(4) != packets(5)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), active=st.integers(0, 43), start=st.integers(0, 10_000))
    def test_arrival_slots_stay_in_the_window(self, seed, active, start):
        traffic = SliceTraffic(2, VideoSource(video_model()), np.random.default_rng(seed))
        traffic.generate_window_arrivals(43, 0, start or 1)
        for packet in traffic.generate_window_arrivals(active, start, 100):
            assert start <= packet.arrival_slot < start + 100
            assert 1 <= packet.size <= 250
            assert packet.user_id < active

    def test_infeasible_mean_is_a_config_error(self):
        with pytest.raises(ConfigError):
            video_model(interarrival_mean_ms=20.0)


class TestVrSynthetic:
    def test_frame_sizes_are_clipped(self):
        model = TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 7, frame_size_std_b=5000.0)
        source = create_source(model)
        rng = np.random.default_rng(2)
        sizes = [source.frame_size(rng) for _ in range(5000)]
        assert min(sizes) == model.frame_size_min_b
        assert max(sizes) == model.frame_size_max_b

    def test_default_split_is_one_packet_per_whole_ms(self):
        assert TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 7).packets_per_frame == 13
        assert TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 7, frame_period_ms=11.11).packets_per_frame == 11
        assert TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 7, frame_packets=1).packets_per_frame == 1

    def test_frames_are_paced_over_the_period(self):
        model = TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 1, frame_size_std_b=0.0)
        traffic = SliceTraffic(1, create_source(model), np.random.default_rng(9))
        packets = traffic.generate_window_arrivals(1, 0, 1000)
        sizes = [p.size for p in packets]
        slots = [p.arrival_slot for p in packets]
        assert set(sizes) == {307, 308}
        whole = len(sizes) - len(sizes) % 13
        assert whole >= 13 * 60
        assert all(sum(sizes[i:i + 13]) == 4000 for i in range(0, whole, 13))
        assert all(a < b for a, b in zip(slots, slots[1:]))

    @pytest.mark.parametrize("kw", [{"frame_packets": 0}, {"frame_size_min_b": 5}])
    def test_bad_packet_split_is_rejected(self, kw):
        with pytest.raises(ConfigError):
            TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 7, **kw)

    def test_paused_stream_keeps_its_residual_time(self):
        model = TrafficModel(TrafficKind.VR_SYNTHETIC, 1.0, 2)
        traffic = SliceTraffic(1, create_source(model), np.random.default_rng(6))
        paused = traffic.streams[1]
        residual = paused.next_arrival_ms - 0
        traffic.generate_window_arrivals(1, 0, 100)
        traffic.generate_window_arrivals(1, 100, 100)
        assert paused.next_arrival_ms - 200 == pytest.approx(residual)


class TestTrace:
    def write(self, tmp_path, body):
        path = tmp_path / "trace.csv"
        path.write_text("time_ms,size_bytes\n" + body)
        return path

    def test_two_rows(self, tmp_path):
        trace = load_trace(self.write(tmp_path, "0.0,100\n5.0,200\n"))
        assert trace.times_ms == (0.0, 5.0)
        assert trace.sizes == (100, 200)

    def test_non_monotone_reports_line(self, tmp_path):
        with pytest.raises(TraceError) as err:
            load_trace(self.write(tmp_path, "5.0,100\n0.0,200\n"))
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_header_only_is_empty(self, tmp_path):
        assert len(load_trace(self.write(tmp_path, ""))) == 0

    @pytest.mark.parametrize("body", ["1.0\n", "x,10\n", "1.0,0\n", "-1.0,10\n", "nan,10\n"])
    def test_malformed_rows(self, tmp_path, body):
        with pytest.raises(TraceError) as err:
            load_trace(self.write(tmp_path, body))
        assert err.value.line == 2

    def test_bad_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("t,size\n1.0,10\n")
        with pytest.raises(TraceError):
            load_trace(path)

    def test_replay_floors_timestamps(self):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 1, trace_path="trace.csv")
        source = create_source(model, Trace((0.5, 17.2), (1200, 900)))
        traffic = SliceTraffic(1, source, np.random.default_rng(0))
        packets = traffic.generate_window_arrivals(1, 0, 100)
        assert [(p.arrival_slot, p.size) for p in packets] == [(0, 1200), (17, 900)]

    def test_exhausted_trace_wraps_at_the_window_boundary_and_warns_once(self, caplog):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 1, trace_path="trace.csv")
        traffic = SliceTraffic(1, create_source(model, Trace((0.5, 17.2), (1200, 900))),
                               np.random.default_rng(0))
        with caplog.at_level(logging.WARNING, logger="slicing.traffic"):
            traffic.generate_window_arrivals(1, 0, 100)
            second = traffic.generate_window_arrivals(1, 100, 100)
            traffic.generate_window_arrivals(1, 200, 100)
        assert [(p.arrival_slot, p.size) for p in second] == [(100, 1200), (117, 900)]
        assert sum("exhausted" in r.getMessage() for r in caplog.records) == 1

    def test_users_start_at_spread_rows(self):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 2, trace_path="trace.csv")
        traffic = SliceTraffic(1, create_source(model, Trace((1.0, 2.0, 3.0, 4.0), (10, 20, 30, 40))),
                               np.random.default_rng(0))
        assert [s.cursor for s in traffic.streams] == [0, 2]

    def test_empty_trace_produces_nothing(self):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 3, trace_path="trace.csv")
        traffic = SliceTraffic(1, create_source(model, Trace()), np.random.default_rng(0))
        assert traffic.generate_window_arrivals(3, 0, 100) == []

    def test_streams_exhausting_together_warn_once(self, caplog):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 2, trace_path="trace.csv")
        traffic = SliceTraffic(1, create_source(model, Trace((1.0, 2.0), (10, 20))),
                               np.random.default_rng(0))
        with caplog.at_level(logging.WARNING, logger="slicing.traffic"):
            traffic.generate_window_arrivals(2, 0, 100)
        assert sum("exhausted" in r.getMessage() for r in caplog.records) == 1

    def test_replay_has_no_renewal_draws(self):
        model = TrafficModel(TrafficKind.VR_TRACE, 1.0, 1, trace_path="trace.csv")
        source = create_source(model, Trace((1.0,), (10,)))
        assert not hasattr(source, "next_size")
        assert not hasattr(source, "next_interarrival")
