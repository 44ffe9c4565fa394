"""Coincidence identification under the allpr / inseq / unamb rules.

All three rules are evaluated with vectorized sorted-merge queries
(``np.searchsorted`` on the already sorted Bob times), so the cost is linear
in the log sizes plus the output size up to a log factor. Indices are 0-based.

Rule conditions, with ``a = t_A[k] + shift`` and ``b = t_B[l]``:

* allpr: ``|b - a| <= w``
* inseq: allpr and ``a > t_B[l-1]``, ``t_A[k+1] + shift > b``,
  ``t_A[k-1] + shift < b``, ``a < t_B[l+1]``
* unamb: allpr and neither neighbour of ``l`` is within ``w`` of ``a`` and
  neither neighbour of ``k`` is within ``w`` of ``b``

A condition that mentions a neighbour beyond either end of a log holds
vacuously.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .eventlog import DetectionLog
from .units import ns_to_ps

RULES = ("allpr", "inseq", "unamb")

BRUTE_FORCE_LIMIT = 10**8


@dataclass(frozen=True)
class WindowSpec:
    """Coincidence window ``|t_B - (t_A + shift)| <= half_width`` in ps.

    Equivalently ``u <= t_B - t_A <= v`` with ``u = shift - half_width`` and
    ``v = shift + half_width``.
    """

    shift: int
    half_width: int

    def __post_init__(self):
        object.__setattr__(self, "shift", int(self.shift))
        object.__setattr__(self, "half_width", int(self.half_width))
        if self.half_width < 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")

    @classmethod
    def from_edges(cls, u: int, v: int) -> "WindowSpec":
        u, v = int(u), int(v)
        if v < u:
            raise ValueError(f"window edges out of order: u={u} > v={v}")
        if (v - u) % 2:
            raise ValueError(f"v - u = {v - u} ps is odd; shift/half-width would not be whole ps")
        return cls((u + v) // 2, (v - u) // 2)

    @classmethod
    def from_ns(cls, u_ns, v_ns) -> "WindowSpec":
        return cls.from_edges(ns_to_ps(u_ns), ns_to_ps(v_ns))

    @property
    def u(self) -> int:
        return self.shift - self.half_width

    @property
    def v(self) -> int:
        return self.shift + self.half_width

    @property
    def width(self) -> int:
        return 2 * self.half_width

    def to_dict(self) -> dict:
        return {
            "u_ns": self.u / 1000, "v_ns": self.v / 1000,
            "shift_ns": self.shift / 1000, "half_width_ns": self.half_width / 1000,
        }


# Named presets from the longdist35 analysis.
PRESETS = {
    "wjswz": WindowSpec.from_edges(1800, 5800),
    "wide": WindowSpec.from_edges(-20500, 25000),
}


@dataclass(frozen=True, eq=False)
class CoincidenceSet:
    k: np.ndarray
    l: np.ndarray
    rule: str
    window: WindowSpec

    def __len__(self) -> int:
        return int(self.k.size)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.k.tolist(), self.l.tolist()))

    def __eq__(self, other):
        if not isinstance(other, CoincidenceSet):
            return NotImplemented
        return np.array_equal(self.k, other.k) and np.array_equal(self.l, other.l)

    __hash__ = None  # type: ignore[assignment]

    def to_csv(self, log_a: DetectionLog, log_b: DetectionLog) -> str:
        buf = io.StringIO()
        buf.write("k,l,tA_ps,tB_ps,sA,rA,sB,rB\n")
        if len(self):
            rows = np.column_stack([
                self.k, self.l, log_a.times[self.k], log_b.times[self.l],
                log_a.settings[self.k], log_a.results[self.k],
                log_b.settings[self.l], log_b.results[self.l],
            ])
            np.savetxt(buf, rows, fmt="%d", delimiter=",")
        return buf.getvalue()


def _check_rule(rule: str) -> None:
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


def _expand(start: np.ndarray, count: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand per-k index ranges [start, start+count) into (k, l) arrays."""
    count = np.maximum(count, 0)
    total = int(count.sum())
    k = np.repeat(np.arange(count.size, dtype=np.int64), count)
    if total == 0:
        return k, np.zeros(0, dtype=np.int64)
    first = np.cumsum(count) - count
    l = start[k] + (np.arange(total, dtype=np.int64) - first[k])
    return k, l.astype(np.int64)


def _window_bounds(ta: np.ndarray, tb: np.ndarray, window: WindowSpec):
    a = ta + window.shift
    lo = np.searchsorted(tb, a - window.half_width, side="left")
    hi = np.searchsorted(tb, a + window.half_width, side="right")
    return lo.astype(np.int64), hi.astype(np.int64)


def _inseq_candidates(ta: np.ndarray, tb: np.ndarray, shift: int):
    """Pairs meeting the four neighbour conditions of inseq (window-independent)."""
    nb = tb.size
    if ta.size == 0 or nb == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    a = ta + shift
    p = np.searchsorted(tb, a, side="left")  # number of Bob times < a
    q = np.searchsorted(tb, a, side="right")  # number of Bob times <= a
    first = np.maximum(q - 1, 0)
    last = np.minimum(p, nb - 1)
    k, l = _expand(first.astype(np.int64), (last - first + 1).astype(np.int64))
    b = tb[l]
    ok = np.ones(k.size, dtype=bool)
    nxt = k + 1 < ta.size
    ok[nxt] &= ta[k[nxt] + 1] + shift > b[nxt]
    prv = k > 0
    ok[prv] &= ta[k[prv] - 1] + shift < b[prv]
    return k[ok], l[ok]


def find_coincidences(log_a: DetectionLog, log_b: DetectionLog, window: WindowSpec,
                      rule: str = "allpr") -> CoincidenceSet:
    _check_rule(rule)
    ta, tb = log_a.times, log_b.times
    w = window.half_width
    if rule == "allpr":
        lo, hi = _window_bounds(ta, tb, window)
        k, l = _expand(lo, hi - lo)
    elif rule == "inseq":
        k, l = _inseq_candidates(ta, tb, window.shift)
        keep = np.abs(tb[l] - (ta[k] + window.shift)) <= w
        k, l = k[keep], l[keep]
    else:
        lo, hi = _window_bounds(ta, tb, window)
        # mirror query: Alice detections within the window of each Bob detection
        a = ta + window.shift
        lo_b = np.searchsorted(a, tb - w, side="left")
        hi_b = np.searchsorted(a, tb + w, side="right")
        k = np.flatnonzero(hi - lo == 1).astype(np.int64)
        l = lo[k]
        keep = (hi_b[l] - lo_b[l]) == 1
        k, l = k[keep], l[keep]
    return CoincidenceSet(k, l, rule, window)


def count_coincidences(log_a: DetectionLog, log_b: DetectionLog, window: WindowSpec,
                       rule: str = "allpr") -> int:
    """Size of the coincidence set; allpr is counted without materializing pairs."""
    _check_rule(rule)
    if rule == "allpr":
        lo, hi = _window_bounds(log_a.times, log_b.times, window)
        return int((hi - lo).sum())
    return len(find_coincidences(log_a, log_b, window, rule))


@njit(cache=True)
def _brute_force_mask(ta, tb, d, w, rule):
    na, nb = ta.size, tb.size
    m = np.zeros((na, nb), dtype=np.bool_)
    for k in range(na):
        a = ta[k] + d
        for l in range(nb):
            b = tb[l]
            ok = abs(b - a) <= w
            if ok and rule == 1:
                if l > 0 and not a > tb[l - 1]:
                    ok = False
                elif k < na - 1 and not ta[k + 1] + d > b:
                    ok = False
                elif k > 0 and not ta[k - 1] + d < b:
                    ok = False
                elif l < nb - 1 and not a < tb[l + 1]:
                    ok = False
            elif ok and rule == 2:
                if l > 0 and not abs(tb[l - 1] - a) > w:
                    ok = False
                elif l < nb - 1 and not abs(tb[l + 1] - a) > w:
                    ok = False
                elif k > 0 and not abs(b - (ta[k - 1] + d)) > w:
                    ok = False
                elif k < na - 1 and not abs(b - (ta[k + 1] + d)) > w:
                    ok = False
            m[k, l] = ok
    return m


def brute_force_coincidences(log_a: DetectionLog, log_b: DetectionLog, window: WindowSpec,
                             rule: str = "allpr") -> CoincidenceSet:
    """Evaluate the rule's defining conditions literally over every (k, l) pair.

    Test oracle, independent of the searchsorted machinery above.
    """
    _check_rule(rule)
    na, nb = len(log_a), len(log_b)
    if na * nb > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{na} x {nb} pairs exceeds brute-force limit {BRUTE_FORCE_LIMIT}")
    m = _brute_force_mask(log_a.times, log_b.times, np.int64(window.shift),
                          np.int64(window.half_width), RULES.index(rule))
    k, l = np.nonzero(m)
    return CoincidenceSet(k.astype(np.int64), l.astype(np.int64), rule, window)


def sweep_widths(log_a: DetectionLog, log_b: DetectionLog, shift: int, widths,
                 rule: str = "allpr") -> list[tuple[int, int]]:
    """Coincidence counts for each half-width in ``widths`` (ascending, ps)."""
    _check_rule(rule)
    widths = [int(w) for w in widths]
    if any(b < a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be sorted ascending")
    if rule == "inseq":
        # the neighbour conditions do not depend on w, so one candidate pass suffices
        k, l = _inseq_candidates(log_a.times, log_b.times, shift)
        dist = np.sort(np.abs(log_b.times[l] - (log_a.times[k] + shift)))
        counts = np.searchsorted(dist, widths, side="right")
        return [(w, int(c)) for w, c in zip(widths, counts)]
    return [(w, count_coincidences(log_a, log_b, WindowSpec(shift, w), rule)) for w in widths]


# --------------------------------------------------------------------- tables


def _cell_key(sa, sb, ra, rb) -> str:
    return f"{sa}_{sb}_{ra}_{rb}"


CELLS = [(sa, sb, ra, rb) for sa in (0, 1) for sb in (0, 1) for ra in (0, 1) for rb in (0, 1)]


@dataclass(frozen=True, eq=False)
class CellTable:
    """Coincidence counts indexed ``counts[s_A, s_B, r_A, r_B]``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts).reshape(2, 2, 2, 2)
        if np.issubdtype(c.dtype, np.integer):
            c = c.astype(np.int64)
        else:
            c = c.astype(np.float64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self):
        return self.counts.sum().item()

    def __getitem__(self, cell):
        return self.counts[cell].item()

    def __eq__(self, other):
        if not isinstance(other, CellTable):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    __hash__ = None  # type: ignore[assignment]

    def __add__(self, other: "CellTable") -> "CellTable":
        return CellTable(self.counts + other.counts)

    def to_dict(self) -> dict:
        return {_cell_key(*c): self.counts[c].item() for c in CELLS}

    @classmethod
    def from_dict(cls, d: dict) -> "CellTable":
        return cls([d[_cell_key(*c)] for c in CELLS])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def tabulate_cells(cs: CoincidenceSet, log_a: DetectionLog, log_b: DetectionLog) -> CellTable:
    idx = (8 * log_a.settings[cs.k].astype(np.intp) + 4 * log_b.settings[cs.l]
           + 2 * log_a.results[cs.k] + log_b.results[cs.l])
    return CellTable(np.bincount(idx, minlength=16)[:16])
