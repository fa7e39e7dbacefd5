import math

import numpy as np
import pytest

from evosched.drift import (
    Detection,
    DetectorConfig,
    DriftDetector,
    DriftType,
    FrameRecord,
    classify_drift,
    clc,
    distribution_distance,
    read_trace_csv,
    rod,
    write_trace_csv,
)


def frame(t, value, pixel=1000.0, dets=()):
    root = math.sqrt(value)
    return FrameRecord(t=t, cc=root, lc=root, pixel_diff=pixel, detections=dets)


def step_trace(n=400, step_at=200, hi=0.8, lo=0.3, pixel_hi=5000.0,
               pixel_lo=1000.0, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n):
        t = float(i + 1)
        v = hi if t < step_at else lo
        p = pixel_lo if t < step_at else pixel_hi
        if noise:
            v = min(1.0, max(1e-3, v + rng.normal(0, noise)))
        frames.append(frame(t, v, p))
    return frames


SMALL_CFG = DetectorConfig(window_frames=30, sub_windows=3, temp_window_frames=60,
                           rod_threshold=0.25, variance_threshold=1e-4, tau=90.0)


class TestPrimitives:
    def test_clc_product(self):
        f = FrameRecord(t=0.0, cc=0.9, lc=0.8, pixel_diff=0.0)
        assert clc(f) == pytest.approx(0.72)

    def test_clc_identity_and_zero(self):
        assert clc(FrameRecord(t=0, cc=1.0, lc=1.0, pixel_diff=0)) == 1.0
        assert clc(FrameRecord(t=0, cc=0.5, lc=0.0, pixel_diff=0)) == 0.0

    def test_rod(self):
        assert rod(0.8, 0.4) == pytest.approx(0.5)
        assert rod(0.8, 0.8) == 0.0
        with pytest.raises(ValueError):
            rod(0.0, 0.4)

    def test_distribution_distance(self):
        a = [frame(1, 0.5, 10.0), frame(2, 0.5, 10.0)]
        b = [frame(3, 0.5, 14.0), frame(4, 0.5, 14.0)]
        assert distribution_distance(a, a) == 0.0
        assert distribution_distance(a, b) == pytest.approx(4.0)
        assert distribution_distance(b, a) == pytest.approx(4.0)
        with pytest.raises(ValueError):
            distribution_distance([], a)


class TestClassifyDrift:
    def test_short_transition_is_sudden(self):
        assert classify_drift(0, 30, 0.5, 0.2, 90.0) is DriftType.SUDDEN

    def test_long_with_large_d_is_incremental(self):
        assert classify_drift(0, 120, 0.5, 0.2, 90.0) is DriftType.INCREMENTAL

    def test_long_with_small_d_is_gradual(self):
        assert classify_drift(0, 120, 0.1, 0.2, 90.0) is DriftType.GRADUAL

    def test_invalid(self):
        with pytest.raises(ValueError):
            classify_drift(10, 5, 0.1, 0.2, 90.0)
        with pytest.raises(ValueError):
            classify_drift(0, 5, -0.1, 0.2, 90.0)


class TestDetector:
    def test_constant_trace_no_event(self):
        det = DriftDetector(SMALL_CFG)
        for f in step_trace(n=500, step_at=10_000):
            assert det.update(f) is None

    def test_step_trace_sudden(self):
        det = DriftDetector(SMALL_CFG)
        events = [e for f in step_trace() if (e := det.update(f))]
        assert len(events) == 1
        ev = events[0]
        assert ev.drift_type is DriftType.SUDDEN
        assert abs(ev.t1 - 200.0) <= SMALL_CFG.window_frames
        assert ev.t1 <= ev.t2 <= ev.t3

    def test_temp_window_span(self):
        det = DriftDetector(SMALL_CFG)
        events = [e for f in step_trace() if (e := det.update(f))]
        # t3 - t2 covers temp_window_frames frames at 1 fps
        assert events[0].t3 - events[0].t2 == pytest.approx(
            SMALL_CFG.temp_window_frames - 1)

    def test_ramp_trace_not_sudden(self):
        frames = []
        for i in range(800):
            t = float(i + 1)
            if t < 100:
                v = 0.8
                p = 1000.0
            elif t < 400:
                v = 0.8 - 0.5 * (t - 100) / 300.0
                p = 1000.0 + 4000.0 * min(1.0, (t - 100) / 100.0)
            else:
                v = 0.3
                p = 5000.0
            frames.append(frame(t, v, p))
        det = DriftDetector(SMALL_CFG)
        events = [e for f in frames if (e := det.update(f))]
        assert len(events) == 1
        assert events[0].t2 - events[0].t1 >= SMALL_CFG.tau
        assert events[0].drift_type in (DriftType.INCREMENTAL, DriftType.GRADUAL)

    def test_determinism(self):
        trace = step_trace(noise=0.01, seed=3)
        runs = []
        for _ in range(2):
            det = DriftDetector(SMALL_CFG)
            runs.append([e for f in trace if (e := det.update(f))])
        assert runs[0] == runs[1]

    def test_reanchors_after_event(self):
        # Second drop must go below the re-anchored (post-drift) reference
        # level, since the rebuilt win1 freezes at the drifted distribution.
        frames = []
        for i in range(1200):
            t = float(i + 1)
            if t < 200:
                v, p = 0.8, 1000.0
            elif t < 700:
                v, p = 0.4, 5000.0
            else:
                v, p = 0.15, 9000.0
            frames.append(frame(t, v, p))
        det = DriftDetector(SMALL_CFG)
        events = [e for f in frames if (e := det.update(f))]
        assert len(events) == 2

    def test_out_of_order_rejected(self):
        det = DriftDetector(SMALL_CFG)
        det.update(frame(1.0, 0.8))
        with pytest.raises(ValueError):
            det.update(frame(1.0, 0.8))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(sub_windows=7, temp_window_frames=90)
        with pytest.raises(ValueError):
            DetectorConfig(rod_threshold=0.0)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        dets = (Detection(category=1, feature=(0.5, 1.5)),
                Detection(category=0, feature=(2.5, 3.5)))
        frames = [frame(1.0, 0.8, 1234.5, dets), frame(2.0, 0.7, 999.0)]
        path = tmp_path / "trace.csv"
        write_trace_csv(path, frames)
        back = read_trace_csv(path)
        assert back == frames

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        write_trace_csv(path, [frame(1.0, 0.8)])
        with open(path, "a") as fh:
            fh.write("not,a,valid,row,x\n")
        with pytest.raises(ValueError, match="line 3"):
            read_trace_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            read_trace_csv(path)
