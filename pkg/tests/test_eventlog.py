import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eprcoinc.eventlog import (DetectionLog, LogFormatError, SinglesTable, guess_format,
                               load_log, read_log, save_log, singles_counts, validate_log,
                               write_log)


@st.composite
def logs(draw):
    times = sorted(draw(st.lists(st.integers(0, 2**62), max_size=50)))
    n = len(times)
    s = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    r = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    side = draw(st.sampled_from("AB"))
    dur = draw(st.integers(times[-1] if times else 0, 2**63 - 1))
    return DetectionLog(side, times, s, r, dur)


@settings(max_examples=60)
@given(logs(), st.sampled_from(["text", "binary"]))
def test_round_trip(log, fmt):
    back = read_log(write_log(log, fmt), fmt)
    assert back == log
    assert back.side == log.side and back.duration == log.duration


def test_text_without_header_defaults():
    log = read_log(b"0\t0\t1\n500\t1\t0\n")
    assert log.side == "A" and len(log) == 2 and log.duration == 500
    assert log.times.tolist() == [0, 500]
    assert log[1] == (500, 1, 0)


def test_text_record_layout():
    log = DetectionLog("A", [42], [1], [0], 100)
    text = write_log(log).decode()
    assert text.splitlines() == ["# eprlog v1 side=A duration_ps=100", "42\t1\t0"]
    empty = write_log(DetectionLog.empty("B")).decode()
    assert len(empty.splitlines()) == 1
    assert len(read_log(empty.encode())) == 0


@pytest.mark.parametrize("body, msg", [
    (b"5\t0\t0\n3\t0\t0\n", "line 2"),
    (b"# eprlog v1 side=B duration_ps=9\n5\t0\t0\n3\t0\t0\n", "line 3"),
    (b"1\t2\t0\n", "line 1"),
    (b"1\t0\n", "line 1"),
    (b"-4\t0\t0\n", "line 1"),
    (b"x\t0\t0\n", "line 1"),
])
def test_text_errors_name_line(body, msg):
    with pytest.raises(LogFormatError, match=msg):
        read_log(body)


def test_binary_truncated_and_trailing():
    log = DetectionLog("B", [1, 2, 3], [0, 1, 0], [1, 1, 0], 10)
    data = write_log(log, "binary")
    with pytest.raises(LogFormatError):
        read_log(data[:-3], "binary")
    with pytest.raises(LogFormatError):
        read_log(data + b"\0", "binary")
    with pytest.raises(LogFormatError):
        read_log(b"NOPE" + data[4:], "binary")


def test_file_io_and_guess(tmp_path):
    log = DetectionLog("B", [1, 2, 30], [0, 1, 0], [1, 1, 0], 100)
    for fmt in ("text", "binary"):
        p = tmp_path / f"log.{fmt}"
        save_log(log, p, fmt)
        assert guess_format(p) == fmt
        assert load_log(p) == log


def test_validate_reports_without_raising():
    log = DetectionLog("A", [5, 3, 3, -1, 50], [0, 1, 2, 0, 0], [0, 0, 0, 3, 0], 20)
    rep = validate_log(log)
    assert not rep.ok
    assert rep.monotonicity_violations == [1, 3]
    assert rep.out_of_range == [(2, "setting"), (3, "result")]
    assert rep.negative_times == [3]
    assert rep.beyond_duration == [4]
    assert rep.duplicate_timestamps == 1
    assert validate_log(DetectionLog("A", [1, 1, 2], [0, 0, 0], [0, 0, 0])).ok


def test_singles_counts():
    log = DetectionLog("A", [1, 2, 3, 4, 5], [0, 0, 1, 1, 1], [0, 1, 0, 0, 1])
    assert singles_counts(log).tolist() == [[1, 1], [2, 1]]
    tab = SinglesTable.from_logs(log, DetectionLog.empty("B"))
    assert tab.n_a == 5 and tab.n_b == 0
    assert tab.to_dict()["alice"]["1/0"] == 2


def test_empty_log():
    e = DetectionLog.empty("A")
    assert len(e) == 0 and validate_log(e).ok
    assert read_log(write_log(e, "binary"), "binary") == e
