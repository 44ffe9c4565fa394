"""Detection logs: data model, text/binary formats, validation and singles counts.

Times are integer picoseconds throughout. A log is stored column-wise as three
numpy arrays so that the joins in :mod:`eprcoinc.coincidence` stay vectorized.
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, NamedTuple

import numpy as np

SIDES = ("A", "B")

TEXT_HEADER = "# eprlog v1 side={side} duration_ps={duration}"
_HEADER_RE = re.compile(r"^# eprlog v1 side=([AB]) duration_ps=(\d+)\s*$")

MAGIC = b"EPRL"
VERSION = 1
_BIN_HEAD = struct.Struct("<4sBBQQ")
RECORD_DTYPE = np.dtype([("time", "<i8"), ("setting", "u1"), ("result", "u1")])
assert RECORD_DTYPE.itemsize == 10


class LogFormatError(ValueError):
    """Raised when a detection log cannot be parsed or fails validation."""


class Detection(NamedTuple):
    time: int
    setting: int
    result: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DetectionLog:
    """One station's time-ordered (time, setting, result) triples.

    Construction coerces dtypes but does not validate; use :func:`validate_log`
    or :func:`read_log` for checked input.
    """

    side: str
    times: np.ndarray
    settings: np.ndarray
    results: np.ndarray
    duration: int = field(default=-1)

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be 'A' or 'B', got {self.side!r}")
        t = np.array(self.times, dtype=np.int64).reshape(-1)
        s = np.array(self.settings, dtype=np.int64).reshape(-1)
        r = np.array(self.results, dtype=np.int64).reshape(-1)
        if not (t.size == s.size == r.size):
            raise ValueError("times, settings and results must have equal length")
        # keep out-of-range values visible to validate_log instead of wrapping them
        if s.size and (s.min() < 0 or s.max() > 255 or r.min() < 0 or r.max() > 255):
            raise ValueError("setting/result must fit in one byte")
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "settings", _frozen(s.astype(np.uint8)))
        object.__setattr__(self, "results", _frozen(r.astype(np.uint8)))
        duration = int(self.duration)
        if duration < 0:
            duration = int(t[-1]) if t.size else 0
        object.__setattr__(self, "duration", duration)

    @classmethod
    def empty(cls, side: str = "A", duration: int = 0) -> "DetectionLog":
        return cls(side, [], [], [], duration)

    def __len__(self) -> int:
        return int(self.times.size)

    def __getitem__(self, k: int) -> Detection:
        return Detection(int(self.times[k]), int(self.settings[k]), int(self.results[k]))

    def __eq__(self, other):
        if not isinstance(other, DetectionLog):
            return NotImplemented
        return (
            self.side == other.side
            and self.duration == other.duration
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.settings, other.settings)
            and np.array_equal(self.results, other.results)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def cell_index(self) -> np.ndarray:
        """2*setting + result for every detection."""
        return 2 * self.settings.astype(np.intp) + self.results


# --------------------------------------------------------------------------- I/O


def _check(log: DetectionLog, where: str = "", first_line: int | None = None) -> None:
    """Raise on the first structural problem; ``first_line`` switches positions to line numbers."""
    def pos(i: int) -> str:
        return f"line {first_line + i}" if first_line is not None else f"record {i}"

    t = log.times
    if t.size == 0:
        return
    neg = np.flatnonzero(t < 0)
    if neg.size:
        raise LogFormatError(f"{where}{pos(int(neg[0]))}: negative time {t[neg[0]]}")
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise LogFormatError(f"{where}{pos(i)}: non-monotone time {t[i]} < {t[i - 1]}")
    for name, arr in (("setting", log.settings), ("result", log.results)):
        bad = np.flatnonzero(arr > 1)
        if bad.size:
            i = int(bad[0])
            raise LogFormatError(f"{where}{name} outside {{0,1}} at record {i}: {arr[i]}")
    if int(t[-1]) > log.duration:
        raise LogFormatError(f"{where}time {t[-1]} exceeds duration {log.duration}")


def _read_text(data: bytes, side: str | None) -> DetectionLog:
    text = data.decode("utf-8")
    lines = text.splitlines()
    duration = -1
    start = 0
    if lines and lines[0].startswith("#"):
        m = _HEADER_RE.match(lines[0])
        if not m:
            raise LogFormatError(f"line 1: malformed header {lines[0]!r}")
        side = m.group(1)
        duration = int(m.group(2))
        start = 1
    body = lines[start:]
    if body and body[-1] == "":
        body = body[:-1]
    try:
        arr = np.array([ln.split("\t") for ln in body], dtype=np.int64)
        if body and arr.shape != (len(body), 3):
            raise ValueError
    except (ValueError, OverflowError):
        for i, ln in enumerate(body):
            parts = ln.split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError
                [int(p) for p in parts]
            except ValueError:
                raise LogFormatError(f"line {start + i + 1}: malformed record {ln!r}") from None
        raise LogFormatError("malformed text body")
    if not body:
        arr = np.zeros((0, 3), dtype=np.int64)
    s, r = arr[:, 1], arr[:, 2]
    for name, col in (("setting", s), ("result", r)):
        bad = np.flatnonzero((col < 0) | (col > 1))
        if bad.size:
            i = int(bad[0])
            raise LogFormatError(f"line {start + i + 1}: {name} outside {{0,1}}: {col[i]}")
    log = DetectionLog(side or "A", arr[:, 0], s, r, duration)
    _check(log, "text log ", first_line=start + 1)
    return log


def _read_binary(data: bytes) -> DetectionLog:
    if len(data) < _BIN_HEAD.size:
        raise LogFormatError(f"truncated binary header: {len(data)} bytes")
    magic, version, side_b, duration, count = _BIN_HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise LogFormatError(f"offset 0: bad magic {magic!r}")
    if version != VERSION:
        raise LogFormatError(f"offset 4: unsupported version {version}")
    if side_b not in (0, 1):
        raise LogFormatError(f"offset 5: bad side byte {side_b}")
    need = _BIN_HEAD.size + count * RECORD_DTYPE.itemsize
    if len(data) < need:
        got = (len(data) - _BIN_HEAD.size) // RECORD_DTYPE.itemsize
        raise LogFormatError(
            f"truncated binary stream: header declares {count} records, "
            f"{got} complete records present (offset {len(data)})"
        )
    if len(data) > need:
        raise LogFormatError(f"offset {need}: trailing bytes after {count} records")
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=_BIN_HEAD.size)
    for name in ("setting", "result"):
        bad = np.flatnonzero(rec[name] > 1)
        if bad.size:
            i = int(bad[0])
            off = _BIN_HEAD.size + i * RECORD_DTYPE.itemsize
            raise LogFormatError(f"record {i} (offset {off}): {name} outside {{0,1}}")
    log = DetectionLog(SIDES[side_b], rec["time"], rec["setting"], rec["result"], duration)
    _check(log, "binary log: ")
    return log


def read_log(source: BinaryIO | bytes, format: str = "text", side: str | None = None) -> DetectionLog:
    """Parse and validate a log from a byte stream.

    ``side`` is only consulted for headerless text input.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    if format == "text":
        return _read_text(bytes(data), side)
    if format == "binary":
        return _read_binary(bytes(data))
    raise ValueError(f"unknown format {format!r}")


def write_log(log: DetectionLog, format: str = "text") -> bytes:
    if format == "text":
        buf = io.StringIO()
        buf.write(TEXT_HEADER.format(side=log.side, duration=log.duration) + "\n")
        if len(log):
            rows = np.column_stack([log.times, log.settings, log.results])
            np.savetxt(buf, rows, fmt="%d", delimiter="\t")
        return buf.getvalue().encode("utf-8")
    if format == "binary":
        head = _BIN_HEAD.pack(MAGIC, VERSION, SIDES.index(log.side), log.duration, len(log))
        rec = np.empty(len(log), dtype=RECORD_DTYPE)
        rec["time"] = log.times
        rec["setting"] = log.settings
        rec["result"] = log.results
        return head + rec.tobytes()
    raise ValueError(f"unknown format {format!r}")


def guess_format(path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "text"


def load_log(path, format: str | None = None, side: str | None = None) -> DetectionLog:
    fmt = format or guess_format(path)
    with open(path, "rb") as fh:
        return read_log(fh, fmt, side=side)


def save_log(log: DetectionLog, path, format: str = "text") -> None:
    with open(path, "wb") as fh:
        fh.write(write_log(log, format))


# ------------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    count: int
    monotonicity_violations: list[int]
    out_of_range: list[tuple[int, str]]
    negative_times: list[int]
    beyond_duration: list[int]
    duplicate_timestamps: int
    mean_gap_ps: float | None

    @property
    def ok(self) -> bool:
        return not (self.monotonicity_violations or self.out_of_range
                    or self.negative_times or self.beyond_duration)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "count": self.count,
            "monotonicity_violations": self.monotonicity_violations,
            "out_of_range": [list(x) for x in self.out_of_range],
            "negative_times": self.negative_times,
            "beyond_duration": self.beyond_duration,
            "duplicate_timestamps": self.duplicate_timestamps,
            "mean_gap_ns": None if self.mean_gap_ps is None else self.mean_gap_ps / 1000.0,
        }


def validate_log(log: DetectionLog, limit: int = 100) -> ValidationReport:
    """Report problems in ``log`` without raising.

    Duplicate timestamps are counted but are not violations. At most ``limit``
    indices are listed per category.
    """
    t = log.times
    d = np.diff(t)
    mono = (np.flatnonzero(d < 0) + 1)[:limit].tolist()
    oor: list[tuple[int, str]] = []
    for name, arr in (("setting", log.settings), ("result", log.results)):
        oor += [(int(i), name) for i in np.flatnonzero(arr > 1)[:limit]]
    oor.sort()
    mean_gap = float(d.mean()) if d.size else None
    return ValidationReport(
        count=len(log),
        monotonicity_violations=[int(i) for i in mono],
        out_of_range=oor[:limit],
        negative_times=np.flatnonzero(t < 0)[:limit].tolist(),
        beyond_duration=np.flatnonzero(t > log.duration)[:limit].tolist(),
        duplicate_timestamps=int(np.count_nonzero(d == 0)),
        mean_gap_ps=mean_gap,
    )


# ---------------------------------------------------------------------- singles


@dataclass(frozen=True)
class SinglesTable:
    """Detection counts by (setting, result) for each side, shape (2, 2)."""

    alice: np.ndarray
    bob: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alice", np.asarray(self.alice, dtype=np.int64).reshape(2, 2))
        object.__setattr__(self, "bob", np.asarray(self.bob, dtype=np.int64).reshape(2, 2))

    @classmethod
    def from_logs(cls, log_a: DetectionLog, log_b: DetectionLog) -> "SinglesTable":
        return cls(singles_counts(log_a), singles_counts(log_b))

    @property
    def n_a(self) -> int:
        return int(self.alice.sum())

    @property
    def n_b(self) -> int:
        return int(self.bob.sum())

    def to_dict(self) -> dict:
        return {
            "alice": {f"{s}/{r}": int(self.alice[s, r]) for s in (0, 1) for r in (0, 1)},
            "bob": {f"{s}/{r}": int(self.bob[s, r]) for s in (0, 1) for r in (0, 1)},
        }


def singles_counts(log: DetectionLog) -> np.ndarray:
    """Counts indexed ``[setting, result]``."""
    return np.bincount(log.cell_index, minlength=4)[:4].reshape(2, 2).astype(np.int64)
