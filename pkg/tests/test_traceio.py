import io
import json

import numpy as np
import pytest

from speedtrim.core import F_CUM_AVG, F_TPUT, STD_CHANNELS, ValidationError
from speedtrim.traceio import (
    CLASSIFIER_ARITY,
    REGRESSOR_ARITY,
    REGRESSOR_WINDOWS,
    ParseError,
    classifier_input,
    parse_trace,
    read_corpus,
    regressor_input,
    resample,
    write_corpus,
)

import util


def jsonl(objs) -> io.BytesIO:
    return io.BytesIO(("\n".join(json.dumps(o) for o in objs) + "\n").encode())


def snap_obj(t_us, bytes_acked, **kw):
    d = dict(t_us=t_us, bytes_acked=bytes_acked, cwnd_bytes=1000,
             bytes_in_flight=500, rtt_us=20000, retrans=0, dup_acks=0, pipe_full=0)
    d.update(kw)
    return d


class TestParseTrace:
    def test_three_line_file(self):
        tr = parse_trace(jsonl([snap_obj(0, 0), snap_obj(10000, 12500),
                                snap_obj(20000, 25000)]))
        assert len(tr) == 3
        assert tr.summarize().y_true_mbps == pytest.approx(10.0)

    def test_empty_file(self):
        with pytest.raises(ParseError, match="no snapshots"):
            parse_trace(io.BytesIO(b""))

    def test_decreasing_bytes_rejected(self):
        # a dip that never recovers is not a repairable glitch
        objs = [snap_obj(0, 0), snap_obj(10000, 5000), snap_obj(20000, 3000),
                snap_obj(30000, 4000)]
        with pytest.raises(ValidationError, match="bytes_acked decreases"):
            parse_trace(jsonl(objs))

    def test_single_glitch_repaired(self):
        objs = [snap_obj(0, 0), snap_obj(10000, 5000), snap_obj(20000, 4000),
                snap_obj(30000, 6000)]
        tr = parse_trace(jsonl(objs))
        np.testing.assert_array_equal(tr.bytes_acked, [0, 5000, 5000, 6000])

    def test_malformed_line_number(self):
        first = json.dumps(snap_obj(0, 0)).encode()
        data = io.BytesIO(first + b"\n{not json\n")
        with pytest.raises(ParseError, match="line 2"):
            parse_trace(data)

    def test_missing_keys(self):
        with pytest.raises(ParseError, match="missing keys"):
            parse_trace(jsonl([{"t_us": 0, "bytes_acked": 0}, snap_obj(1, 1)]))

    def test_header_line(self):
        objs = [{"id": "abc", "duration_us": 30000}, snap_obj(0, 0), snap_obj(10000, 100)]
        tr = parse_trace(jsonl(objs))
        assert tr.id == "abc"
        assert tr.duration_us == 30000

    def test_out_of_order_lines_sorted(self):
        tr = parse_trace(jsonl([snap_obj(10000, 100), snap_obj(0, 0)]))
        np.testing.assert_array_equal(tr.t_us, [0, 10000])

    def test_duplicate_timestamps_rejected(self):
        with pytest.raises(ValidationError, match="nonmonotonic"):
            parse_trace(jsonl([snap_obj(0, 0), snap_obj(0, 5), snap_obj(10, 9)]))


class TestResample:
    def test_constant_trace_100_frames(self):
        ws = resample(util.constant_rate_trace(100.0))
        assert len(ws) == 100
        np.testing.assert_allclose(ws.frames[:, F_TPUT], 100.0, rtol=1e-5)
        np.testing.assert_allclose(ws.frames[:, F_CUM_AVG], 100.0, rtol=1e-5)
        assert np.all(ws.frames[:, list(STD_CHANNELS)] == 0.0)

    def test_gap_carries_forward(self):
        # snapshots at 0..100 ms then nothing until 400 ms
        t = np.concatenate([np.arange(0, 110, 10), [400, 410, 420]]) * 1000
        b = (100.0 * t / 8).astype(np.int64)
        ws = resample(util.make_trace(t, b))
        # the 100 ms snapshot lands in window 1, so 2 and 3 are the gap
        assert ws.filled[2] and ws.filled[3]
        assert not ws.filled[1]
        expect = ws.frames[1].copy()
        expect[list(STD_CHANNELS)] = 0.0
        np.testing.assert_allclose(ws.frames[2], expect)
        np.testing.assert_allclose(ws.frames[3], expect)

    def test_two_rate_trace_final_cum_avg(self):
        tr = util.rate_profile_trace([50.0, 150.0], seg_s=5.0)
        ws = resample(tr)
        # brute force over raw snapshots
        expect = 8.0 * tr.bytes_acked[-1] / tr.t_us[-1]
        assert ws.frames[-1, F_CUM_AVG] == pytest.approx(expect, rel=1e-9)
        assert expect == pytest.approx(100.0, rel=1e-3)

    def test_pipe_full_is_window_max(self):
        tr = util.make_trace([0, 50000, 60000, 150000],
                             [0, 100, 200, 300], pipe_full=[0, 1, 2, 2])
        ws = resample(tr)
        assert ws.frames[0, 2] == 2.0
        assert ws.frames[1, 2] == 2.0

    def test_throughput_integral_close_to_y_true(self, small_corpus):
        # sum(inst mean * window) tracks total bytes within quantization
        for tid in small_corpus.ids[:6]:
            tr = small_corpus.load(tid)
            ws = resample(tr)
            total = np.sum(ws.frames[:, F_TPUT]) * ws.window_ms / 1000.0  # Mbit
            expect = 8.0 * tr.bytes_acked[-1] / 1e6
            assert total == pytest.approx(expect, rel=0.02)

    def test_deterministic(self, small_corpus):
        tr = small_corpus.load(small_corpus.ids[0])
        a, b = resample(tr), resample(tr)
        np.testing.assert_array_equal(a.frames, b.frames)


@pytest.fixture(scope="module")
def ramp_ws():
    return resample(util.rate_profile_trace([60, 80, 100, 120, 140], seg_s=2.0))


@pytest.fixture(scope="module")
def const_ws():
    return resample(util.constant_rate_trace(80.0))


class TestRegressorInput:

    def test_padding_at_500ms(self, ramp_ws):
        ri = regressor_input(ramp_ws, 500)
        assert ri.features.shape == (REGRESSOR_ARITY,)
        assert ri.n_padded == 15
        block = ri.features[:-1].reshape(REGRESSOR_WINDOWS, -1)
        for i in range(15):
            np.testing.assert_array_equal(block[i], ramp_ws.frames[0])
        np.testing.assert_array_equal(block[15:], ramp_ws.frames[0:5])
        assert ri.features[-1] == 500.0

    def test_exact_fit_at_2000ms(self, ramp_ws):
        ri = regressor_input(ramp_ws, 2000)
        assert ri.n_padded == 0
        np.testing.assert_array_equal(
            ri.features[:-1].reshape(REGRESSOR_WINDOWS, -1), ramp_ws.frames[0:20])

    def test_tail_window_at_10s(self, ramp_ws):
        ri = regressor_input(ramp_ws, 10000)
        np.testing.assert_array_equal(
            ri.features[:-1].reshape(REGRESSOR_WINDOWS, -1), ramp_ws.frames[80:100])

    def test_padded_frame_count_property(self, ramp_ws):
        for t in range(100, 2100, 100):
            assert regressor_input(ramp_ws, t).n_padded == max(0, 20 - t // 100)

    def test_beyond_end_rejected(self, ramp_ws):
        with pytest.raises(ValueError, match="beyond end"):
            regressor_input(ramp_ws, 10500)


class TestClassifierInput:

    def test_mask_at_1000ms(self, const_ws):
        ci = classifier_input(const_ws, 1000)
        assert ci.features.shape == (CLASSIFIER_ARITY,)
        np.testing.assert_array_equal(ci.mask[:10], 1)
        np.testing.assert_array_equal(ci.mask[10:], 0)

    def test_full_mask_at_10s(self, const_ws):
        assert classifier_input(const_ws, 10000).mask.sum() == 100

    def test_masked_region_zero(self, const_ws):
        ci = classifier_input(const_ws, 1500)
        block = ci.features[:-1].reshape(100, -1)
        assert np.all(block[ci.mask == 0] == 0.0)
        np.testing.assert_array_equal(block[:15], const_ws.frames[:15])


class TestCorpusRoundTrip:
    def test_write_read(self, tmp_path):
        traces = [util.constant_rate_trace(50, id="a"),
                  util.constant_rate_trace(150, id="b")]
        write_corpus(str(tmp_path / "c"), ((t, "test") for t in traces))
        corpus = read_corpus(str(tmp_path / "c"))
        assert corpus.ids == ["a", "b"]
        assert corpus.summary("a").y_true_mbps == pytest.approx(50.0, rel=1e-4)
        assert corpus.presets["b"] == "test"

    def test_missing_index(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_corpus(str(tmp_path / "nothing"))
