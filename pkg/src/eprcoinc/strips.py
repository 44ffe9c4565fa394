"""Histogram of detection-time differences in diagonal strips and the
Poisson model of accidental (false-positive) coincidences.

Strips are half-open ``[lo + i*h, lo + (i+1)*h)`` except the last, which also
includes ``hi``; with that convention the strips partition ``[lo, hi]`` and
the histogram total equals the allpr count for the window ``u=lo, v=hi``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .coincidence import WindowSpec
from .eventlog import DetectionLog

DEFAULT_STRIP_PS = 500
DEFAULT_RANGE_PS = 75_000_000
DEFAULT_Z = 5.0
DEFAULT_MIN_RUN = 2


class NoExcessRangeError(ValueError):
    """Raised when no excess range surrounds the histogram peak."""


@dataclass(frozen=True, eq=False)
class StripHistogram:
    strip_width: int
    lo: int
    hi: int
    counts: np.ndarray

    @property
    def n_strips(self) -> int:
        return int(self.counts.size)

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.strip_width * np.arange(self.n_strips + 1, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def strip_of(self, diff_ps: int) -> int:
        i = (int(diff_ps) - self.lo) // self.strip_width
        return min(i, self.n_strips - 1)

    def to_csv(self, model: "FalsePositiveModel | None" = None) -> str:
        buf = io.StringIO()
        buf.write("diff_ns,count,expected\n")
        exp = model.expected(self.strip_width) if model is not None else float("nan")
        for edge, c in zip(self.edges[:-1].tolist(), self.counts.tolist()):
            buf.write(f"{edge / 1000:g},{c},{exp:.6f}\n")
        return buf.getvalue()


def _strip_count(lo: int, hi: int, h: int) -> int:
    if h <= 0:
        raise ValueError("strip width must be positive")
    if hi <= lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if (hi - lo) % h:
        raise ValueError(f"range {hi - lo} ps is not a multiple of strip width {h} ps")
    return (hi - lo) // h


def build_strip_histogram(log_a: DetectionLog, log_b: DetectionLog, h: int = DEFAULT_STRIP_PS,
                          lo: int = -DEFAULT_RANGE_PS, hi: int = DEFAULT_RANGE_PS,
                          block: int = 1 << 16) -> StripHistogram:
    """Count pairs by ``t_B - t_A`` in strips of width ``h`` over ``[lo, hi]``.

    Alice is processed in blocks of ``block`` detections so memory stays
    bounded by the pairs of one block.
    """
    n = _strip_count(lo, hi, h)
    ta, tb = log_a.times, log_b.times
    counts = np.zeros(n, dtype=np.int64)
    for k0 in range(0, ta.size, block):
        a = ta[k0:k0 + block]
        first = np.searchsorted(tb, a + lo, side="left")
        last = np.searchsorted(tb, a + hi, side="right")
        cnt = last - first
        total = int(cnt.sum())
        if total == 0:
            continue
        rep = np.repeat(np.arange(a.size), cnt)
        offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        diff = tb[first[rep] + offs] - a[rep]
        idx = np.minimum((diff - lo) // h, n - 1)
        counts += np.bincount(idx, minlength=n)
    return StripHistogram(h, lo, hi, counts)


def brute_force_strip_histogram(log_a: DetectionLog, log_b: DetectionLog, h: int,
                                lo: int, hi: int) -> StripHistogram:
    """O(N_A * N_B) reference binning."""
    n = _strip_count(lo, hi, h)
    counts = np.zeros(n, dtype=np.int64)
    for ta in log_a.times.tolist():
        for tb in log_b.times.tolist():
            d = tb - ta
            if lo <= d <= hi:
                counts[min((d - lo) // h, n - 1)] += 1
    return StripHistogram(h, lo, hi, counts)


@dataclass(frozen=True)
class FalsePositiveModel:
    """Uniform accidental-pair density ``N_A * N_B / T`` per unit of window width."""

    n_a: int
    n_b: int
    span: int  # ps
    strip_width: int = DEFAULT_STRIP_PS

    @property
    def rate_per_ns(self) -> float:
        return self.n_a * self.n_b * 1000 / self.span

    @property
    def per_strip_mean(self) -> float:
        return self.expected(self.strip_width)

    def expected(self, width_ps: int) -> float:
        """Expected accidental pairs in a difference range ``width_ps`` wide."""
        return self.n_a * self.n_b * int(width_ps) / self.span

    def to_dict(self) -> dict:
        return {
            "n_a": self.n_a, "n_b": self.n_b, "span_ns": self.span / 1000,
            "rate_per_ns": self.rate_per_ns, "strip_width_ns": self.strip_width / 1000,
            "per_strip_mean": self.per_strip_mean,
        }


def default_span(log_a: DetectionLog, log_b: DetectionLog) -> int:
    return max(log_a.duration, log_b.duration)


def fit_false_positive_model(log_a: DetectionLog, log_b: DetectionLog, span: int | None = None,
                             strip_width: int = DEFAULT_STRIP_PS) -> FalsePositiveModel:
    span = default_span(log_a, log_b) if span is None else int(span)
    if span <= 0:
        raise ValueError("experiment span must be positive")
    return FalsePositiveModel(len(log_a), len(log_b), span, strip_width)


# ----------------------------------------------------------- dispersion test


@dataclass
class DispersionReport:
    n_strips: int
    mean_expected: float
    mean_observed: float
    chi2: float
    dof: int
    p_value: float
    dispersion_index: float
    dispersion_z: float
    lag1_autocorr: float
    lag1_z: float
    alpha: float
    underpowered: bool
    over_dispersed: bool = field(init=False)
    under_dispersed: bool = field(init=False)

    def __post_init__(self):
        crit = stats.norm.isf(self.alpha / 2)
        self.over_dispersed = self.dispersion_z > crit
        self.under_dispersed = self.dispersion_z < -crit

    @property
    def passed(self) -> bool:
        return self.p_value >= self.alpha

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _included_strips(hist: StripHistogram, exclude) -> np.ndarray:
    keep = np.ones(hist.n_strips, dtype=bool)
    edges = hist.edges
    for a, b in exclude:
        keep &= ~((edges[1:] > a) & (edges[:-1] <= b))
    return keep


def _pooled_poisson_bins(counts: np.ndarray, mean: float, min_expected: float = 5.0):
    """Observed/expected frequencies of count values, tails pooled to >= min_expected."""
    n = counts.size
    top = int(max(counts.max(initial=0), stats.poisson.isf(1e-12, mean))) + 1
    values = np.arange(top + 1)
    pmf = stats.poisson.pmf(values, mean)
    pmf[-1] = stats.poisson.sf(top - 1, mean)
    obs = np.bincount(np.minimum(counts, top), minlength=top + 1).astype(float)
    exp = pmf * n
    # pool from the left, then fold an undersized remainder into the last bin
    o_bins, e_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if e_bins:
            o_bins[-1] += o_acc
            e_bins[-1] += e_acc
        else:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
    return np.array(o_bins), np.array(e_bins)


def poisson_dispersion_test(hist: StripHistogram, exclude, model: FalsePositiveModel,
                            alpha: float = 0.01) -> DispersionReport:
    """Test strip counts outside ``exclude`` against Poisson(expected per strip).

    ``exclude`` is a list of ``(lo_ps, hi_ps)`` difference ranges; any strip
    overlapping one is dropped. Fewer than 30 remaining strips is reported as
    underpowered rather than raised.
    """
    counts = hist.counts[_included_strips(hist, exclude)]
    n = counts.size
    mean = model.expected(hist.strip_width)
    if n == 0:
        return DispersionReport(0, mean, float("nan"), float("nan"), 0, float("nan"),
                                float("nan"), float("nan"), float("nan"), float("nan"),
                                alpha, True)
    o, e = _pooled_poisson_bins(counts, mean)
    dof = max(o.size - 1, 1)
    chi2 = float(((o - e) ** 2 / e).sum())
    p = float(stats.chi2.sf(chi2, dof))
    c = counts.astype(float)
    var = c.var(ddof=1) if n > 1 else 0.0
    m_obs = float(c.mean())
    disp = var / m_obs if m_obs > 0 else float("nan")
    disp_z = (disp - 1.0) * math.sqrt((n - 1) / 2.0)
    if n > 2 and c.std() > 0:
        x = c - m_obs
        r1 = float((x[:-1] * x[1:]).sum() / (x * x).sum())
    else:
        r1 = 0.0
    return DispersionReport(
        n_strips=int(n), mean_expected=mean, mean_observed=m_obs, chi2=chi2, dof=dof,
        p_value=p, dispersion_index=float(disp), dispersion_z=float(disp_z),
        lag1_autocorr=r1, lag1_z=r1 * math.sqrt(n), alpha=alpha, underpowered=n < 30,
    )


# -------------------------------------------------------------- excess ranges


@dataclass(frozen=True)
class ExcessRange:
    low_edge: int
    high_edge: int
    observed: int
    expected_fp: float
    z_score: float

    def to_dict(self) -> dict:
        return {
            "low_edge_ns": self.low_edge / 1000, "high_edge_ns": self.high_edge / 1000,
            "observed": self.observed, "expected_fp": self.expected_fp,
            "z_score": self.z_score,
        }


def z_score(observed: float, expected: float) -> float:
    """Excess over a Poisson expectation in units of its standard deviation."""
    return (observed - expected) / math.sqrt(expected)


def excess_range(hist: StripHistogram, model: FalsePositiveModel, i0: int, i1: int) -> ExcessRange:
    """Aggregate strips ``i0..i1`` inclusive."""
    edges = hist.edges
    obs = int(hist.counts[i0:i1 + 1].sum())
    exp = model.expected(int(edges[i1 + 1] - edges[i0]))
    z = z_score(obs, exp) if exp > 0 else math.inf
    return ExcessRange(int(edges[i0]), int(edges[i1 + 1]), obs, exp, z)


def _runs_above(hist: StripHistogram, model: FalsePositiveModel) -> list[tuple[int, int]]:
    above = hist.counts > model.expected(hist.strip_width)
    padded = np.concatenate([[False], above, [False]]).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _significant(obs, exp, n_trials: int, z_threshold: float) -> np.ndarray:
    """Exact Poisson tail of each count, Bonferroni-corrected over ``n_trials``, beyond ``z_threshold``."""
    obs = np.asarray(obs, dtype=float)
    exp = np.asarray(exp, dtype=float)
    with np.errstate(divide="ignore"):
        log_tail = np.where(exp > 0, stats.poisson.logsf(obs - 1, np.where(exp > 0, exp, 1.0)),
                            np.where(obs > 0, -np.inf, 0.0))
    return log_tail + math.log(max(n_trials, 1)) < stats.norm.logsf(z_threshold)


def find_excess_ranges(hist: StripHistogram, model: FalsePositiveModel,
                       z_threshold: float = DEFAULT_Z,
                       min_run: int = DEFAULT_MIN_RUN) -> list[ExcessRange]:
    """Maximal runs of above-expectation strips with a significant pooled excess.

    A run of at least ``min_run`` strips is reported when its pooled z exceeds
    ``z_threshold`` and, in addition, its exact Poisson tail probability times
    the number of candidate runs is below the one-sided normal tail at
    ``z_threshold``. The second condition corrects for scanning many runs;
    without it pure background yields spurious ranges in most histograms.
    """
    if z_threshold <= 0:
        raise ValueError("z_threshold must be positive")
    runs = np.array(_runs_above(hist, model), dtype=np.int64).reshape(-1, 2)
    runs = runs[runs[:, 1] - runs[:, 0] + 1 >= min_run]
    if runs.size == 0:
        return []
    csum = np.concatenate([[0], np.cumsum(hist.counts, dtype=np.int64)])
    obs = csum[runs[:, 1] + 1] - csum[runs[:, 0]]
    exp = model.expected(hist.strip_width) * (runs[:, 1] - runs[:, 0] + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(exp > 0, (obs - exp) / np.sqrt(exp), np.inf)
    keep = (z > z_threshold) & _significant(obs, exp, len(runs), z_threshold)
    out = []
    for i0, i1 in runs[keep].tolist():
        r = excess_range(hist, model, i0, i1)
        if r.z_score > z_threshold:
            out.append(r)
    return out


@dataclass(frozen=True)
class WindowSuggestion:
    window: WindowSpec
    centroid: int  # ps, suggested shift
    excess: ExcessRange

    def to_dict(self) -> dict:
        return {
            **self.window.to_dict(),
            "centroid_ns": self.centroid / 1000,
            "excess": self.excess.to_dict(),
        }


def suggest_window(hist: StripHistogram, model: FalsePositiveModel,
                   z_threshold: float = DEFAULT_Z) -> WindowSuggestion:
    """The run of above-expectation strips containing the highest strip, as a window.

    The run must pass the same significance test as :func:`find_excess_ranges`
    (with every above-expectation run counted as a candidate), otherwise
    :class:`NoExcessRangeError` is raised. An odd-width range is widened by
    1 ps at the top so the window has a whole-ps half width.
    """
    if hist.total == 0:
        raise NoExcessRangeError("no excess range: histogram is empty")
    peak = int(np.argmax(hist.counts))
    e = model.expected(hist.strip_width)
    runs = _runs_above(hist, model)
    for i0, i1 in runs:
        if i0 <= peak <= i1:
            r = excess_range(hist, model, i0, i1)
            if r.z_score <= z_threshold or not _significant(r.observed, r.expected_fp, len(runs), z_threshold):
                break
            u, v = r.low_edge, r.high_edge
            if (v - u) % 2:
                v += 1
            edges = hist.edges
            centers = (edges[i0:i1 + 1] + edges[i0 + 1:i1 + 2]) / 2
            wts = np.maximum(hist.counts[i0:i1 + 1] - e, 0)
            centroid = int(round(float((centers * wts).sum() / wts.sum())))
            return WindowSuggestion(WindowSpec.from_edges(u, v), centroid, r)
    raise NoExcessRangeError("no excess range around the coincidence peak (background-only data?)")


def ranges_to_json(ranges: list[ExcessRange]) -> str:
    return json.dumps([r.to_dict() for r in ranges], indent=2)
