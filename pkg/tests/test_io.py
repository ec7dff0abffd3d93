import numpy as np
import pytest

from riskmon.estimators import LabeledLossPair, StepBatch
from riskmon.io import (
    ParseError,
    StreamRecord,
    calibration_to_json,
    monitor_summary_json,
    parse_calibration_json,
    parse_stream_text,
    parse_trace_csv,
    serialize_stream_record,
    stream_to_text,
    trace_to_csv,
)
from riskmon.monitors import BoundTrace, SourceCalibration, UrmCalibration


def record(t=1, labeled=((0.2, 0.3),), unlabeled=(0.1, 0.5), proxies=None):
    batch = StepBatch(
        t=t,
        labeled=tuple(LabeledLossPair(true_loss=a, synth_loss=b) for a, b in labeled),
        unlabeled_synth=tuple(unlabeled),
    )
    return StreamRecord(batch=batch, proxies=proxies)


class TestStreamFormat:
    def test_serialize_shape(self):
        line = serialize_stream_record(record())
        assert line == '{"t":1,"labeled":[{"true":0.2,"synth":0.3}],"unlabeled":[0.1,0.5]}'

    def test_round_trip_bytes(self):
        rng = np.random.default_rng(12)
        records = []
        for t in range(1, 40):
            labeled = tuple((float(a), float(b)) for a, b in rng.random((3, 2)))
            unlab = tuple(float(v) for v in rng.random(5))
            proxies = tuple(float(v) for v in rng.random(2)) if t % 2 else None
            records.append(record(t=t, labeled=labeled, unlabeled=unlab, proxies=proxies))
        text = stream_to_text(records)
        parsed = parse_stream_text(text)
        assert stream_to_text(parsed) == text

    def test_rejects_out_of_range_with_line_number(self):
        text = (
            serialize_stream_record(record(t=1))
            + "\n"
            + '{"t":2,"labeled":[{"true":1.5,"synth":0.3}],"unlabeled":[]}\n'
        )
        with pytest.raises(ParseError) as err:
            parse_stream_text(text)
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_rejects_bad_json(self):
        with pytest.raises(ParseError) as err:
            parse_stream_text('{"t":1,...\n')
        assert err.value.line == 1

    def test_rejects_t_regression(self):
        text = serialize_stream_record(record(t=2)) + "\n" + serialize_stream_record(record(t=2)) + "\n"
        with pytest.raises(ParseError) as err:
            parse_stream_text(text)
        assert err.value.line == 2

    def test_rejects_unknown_keys(self):
        with pytest.raises(ParseError) as err:
            parse_stream_text('{"t":1,"labeled":[{"true":0.5,"synth":0.5}],"unlabeled":[],"step":3}\n')
        assert "step" in str(err.value)

    def test_rejects_missing_labeled(self):
        with pytest.raises(ParseError):
            parse_stream_text('{"t":1,"labeled":[],"unlabeled":[]}\n')

    def test_blank_lines_skipped(self):
        text = serialize_stream_record(record(t=1)) + "\n\n" + serialize_stream_record(record(t=2)) + "\n"
        assert len(parse_stream_text(text)) == 2

    def test_proxies_preserved(self):
        rec = record(proxies=(0.4, 2.5))
        parsed = parse_stream_text(serialize_stream_record(rec) + "\n")[0]
        assert parsed.proxies == (0.4, 2.5)


class TestTraceCsv:
    def _rows(self, n=25, seed=4):
        rng = np.random.default_rng(seed)
        rows = []
        for t in range(1, n + 1):
            rows.append(
                BoundTrace(
                    t=t,
                    step_estimate=float(rng.normal()),
                    running_estimate=float(rng.normal()),
                    lower_bound=float(rng.normal()),
                    upper_bound_source=float(rng.normal()),
                    eta_t=float(rng.random()),
                    v_t=float(rng.random() * 10),
                    alarm=bool(t > n // 2),
                )
            )
        return rows

    def test_full_precision_round_trip(self):
        rows = self._rows()
        text = trace_to_csv(rows)
        parsed = parse_trace_csv(text)
        assert parsed == rows
        assert trace_to_csv(parsed) == text

    def test_header(self):
        text = trace_to_csv([])
        assert text.splitlines()[0] == (
            "t,step_estimate,running_estimate,lower_bound,upper_bound_source,eta_t,v_t,alarm"
        )

    def test_alarm_flag_encoding(self):
        text = trace_to_csv(self._rows(4))
        flags = [ln.split(",")[-1] for ln in text.splitlines()[1:]]
        assert flags == ["0", "0", "1", "1"]

    def test_bad_header_rejected(self):
        with pytest.raises(ParseError):
            parse_trace_csv("a,b,c\n1,2,3\n")

    def test_bad_row_rejected_with_line(self):
        text = trace_to_csv(self._rows(2)) + "3,nope\n"
        with pytest.raises(ParseError) as err:
            parse_trace_csv(text)
        assert err.value.line == 4


class TestCalibrationJson:
    def test_risk_round_trip(self):
        calib = SourceCalibration(
            estimate=0.2811, upper_bound=0.4012, n0=120, N0=600, eta0=1.0,
            method="betting_ppi",
        )
        text = calibration_to_json(calib)
        assert parse_calibration_json(text) == calib
        assert calibration_to_json(parse_calibration_json(text)) == text

    def test_urm_round_trip(self):
        calib = UrmCalibration(
            tau=0.5, beta0=0.5, pfp0_ucb=0.19, source_estimate=0.28,
            source_upper_bound=0.40, n0=120,
        )
        text = calibration_to_json(calib)
        assert parse_calibration_json(text) == calib

    def test_bad_kind(self):
        with pytest.raises(ParseError):
            parse_calibration_json('{"kind":"other"}')

    def test_missing_field(self):
        with pytest.raises(ParseError):
            parse_calibration_json('{"kind":"risk","estimate":0.1}')


class TestSummaryJson:
    def test_alarm(self):
        assert monitor_summary_json(7, 100) == '{"alarm_time":7,"censored":false,"steps":100}\n'

    def test_censored(self):
        assert monitor_summary_json(None, 50) == '{"alarm_time":null,"censored":true,"steps":50}\n'
