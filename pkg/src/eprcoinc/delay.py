"""Local detection-delay model fitted by alternating L1 linear programs.

Each side's delay from pair emission to detection has a distribution that
depends only on that side's (setting, result). Distributions live on a shared
grid: bin ``j`` covers ``(origin + j*width, origin + (j+1)*width]`` and is
represented by its right edge, so the difference of two delays is an integer
number of bins ("lag"). For a cell (sA, sB, rA, rB) the predicted density of
``t_B - t_A`` at lag ``m`` is ``sum_j gA[j] * gB[j + m]``.

Given one side's distributions the absolute error between estimated and
observed densities is linear in the other side's, so each half-step is an LP
(positive/negative slack split) solved with HiGHS.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .coincidence import CELLS, WindowSpec, find_coincidences
from .eventlog import DetectionLog

log = logging.getLogger(__name__)

DEFAULT_BIN_PS = 500
DEFAULT_BINS = 256
SUM_TOL = 1e-9
MASS_FLOOR = 1e-12
LP_METHODS = ("highs", "highs-ds", "highs-ipm")


class LPError(RuntimeError):
    """The LP solver failed on a subproblem that is always feasible."""


def cell_index(sa: int, sb: int, ra: int, rb: int) -> int:
    return 8 * sa + 4 * sb + 2 * ra + rb


@dataclass(frozen=True)
class DelayGrid:
    width: int = DEFAULT_BIN_PS
    n_bins: int = DEFAULT_BINS
    origin: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.n_bins <= 0:
            raise ValueError("grid needs positive bin width and count")
        if self.allowed.sum() == 0:
            raise ValueError("grid has no bins at positive times")

    @property
    def allowed(self) -> np.ndarray:
        """Bins lying entirely at t > 0."""
        return self.origin + self.width * np.arange(self.n_bins) >= 0

    @property
    def first_allowed(self) -> int:
        return int(np.argmax(self.allowed))

    def times(self) -> np.ndarray:
        """Representative (right-edge) time of each bin, ps."""
        return self.origin + self.width * (np.arange(self.n_bins) + 1)

    def starts(self) -> np.ndarray:
        return self.origin + self.width * np.arange(self.n_bins)


@dataclass(frozen=True, eq=False)
class DelayModel:
    """``g_a[s, r]`` and ``g_b[s, r]`` are probability vectors over grid bins."""

    grid: DelayGrid
    g_a: np.ndarray
    g_b: np.ndarray

    def __post_init__(self):
        n = self.grid.n_bins
        ga = np.array(self.g_a, dtype=float).reshape(2, 2, n)
        gb = np.array(self.g_b, dtype=float).reshape(2, 2, n)
        object.__setattr__(self, "g_a", ga)
        object.__setattr__(self, "g_b", gb)

    def distributions(self):
        for side, g in (("A", self.g_a), ("B", self.g_b)):
            for s in (0, 1):
                for r in (0, 1):
                    yield side, s, r, g[s, r]

    def check(self, tol: float = SUM_TOL) -> None:
        bad = ~self.grid.allowed
        for side, s, r, g in self.distributions():
            if np.any(g < -tol):
                raise ValueError(f"g_{side}({s},{r}) has negative mass")
            if abs(g.sum() - 1) > tol:
                raise ValueError(f"g_{side}({s},{r}) sums to {g.sum()}")
            if np.any(g[bad] > tol):
                raise ValueError(f"g_{side}({s},{r}) has mass at t <= 0")

    @classmethod
    def point_masses(cls, grid: DelayGrid, bin_a: int, bin_b: int) -> "DelayModel":
        ga = np.zeros((2, 2, grid.n_bins))
        gb = np.zeros((2, 2, grid.n_bins))
        ga[..., bin_a] = 1
        gb[..., bin_b] = 1
        return cls(grid, ga, gb)

    def shifted(self, k: int, mass_tol: float = 1e-12) -> "DelayModel":
        """Move every distribution ``k`` bins later.

        Raises ValueError if mass above ``mass_tol`` would leave the grid or
        land at t <= 0; smaller specks are dropped.
        """
        n = self.grid.n_bins
        both = np.stack([self.g_a, self.g_b])
        both = np.where(both > mass_tol, both, 0.0)
        out = np.zeros_like(both)
        if k >= 0:
            lost = both[..., n - k:] if k else both[..., :0]
            out[..., k:] = both[..., :n - k]
        else:
            lost = both[..., :-k]
            out[..., :n + k] = both[..., -k:]
        if np.any(lost > 0) or np.any(out[..., ~self.grid.allowed] > 0):
            raise ValueError("shift pushes mass off the grid")
        return DelayModel(self.grid, out[0], out[1])

    def canonical(self, mass_tol: float = 1e-12) -> "DelayModel":
        """Fix the common-shift gauge: the peak of g_A(.|0,0) sits on the first allowed bin.

        If that shift would push other mass off the grid, the earliest occupied
        bin (over all eight distributions) goes to the first allowed bin
        instead; if that fails too the model is returned unshifted.
        """
        stacked = np.concatenate([self.g_a, self.g_b]).reshape(-1, self.grid.n_bins)
        occupied = np.flatnonzero((stacked > mass_tol).any(axis=0))
        for target in (int(np.argmax(self.g_a[0, 0])), int(occupied[0])):
            try:
                return self.shifted(self.grid.first_allowed - target, mass_tol)
            except ValueError:
                continue
        return self

    def to_csv(self) -> dict[str, str]:
        """One CSV text per distribution, keyed like ``gA_0_1``."""
        out = {}
        starts = self.grid.starts() / 1000
        for side, s, r, g in self.distributions():
            buf = io.StringIO()
            buf.write("bin_start_ns,mass\n")
            for t, m in zip(starts.tolist(), g.tolist()):
                buf.write(f"{t:g},{m:.12g}\n")
            out[f"g{side}_{s}_{r}"] = buf.getvalue()
        return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _shift_truncate(g: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(g)
    n = g.shape[-1]
    if k >= 0:
        out[..., k:] = g[..., :n - k]
    else:
        out[..., :n + k] = g[..., -k:]
    return out


def align_to(model: DelayModel, reference: DelayModel) -> tuple[DelayModel, int]:
    """Common shift of ``model`` minimizing the summed TV distance to ``reference``.

    Mass shifted off the grid is dropped, so it counts fully against the
    distance. Returns the shifted model (not renormalized) and the shift.
    """
    n = model.grid.n_bins
    best = (np.inf, 0)
    for k in range(-(n - 1), n):
        cost = (np.abs(_shift_truncate(model.g_a, k) - reference.g_a).sum()
                + np.abs(_shift_truncate(model.g_b, k) - reference.g_b).sum())
        best = min(best, (cost, k))
    k = best[1]
    return DelayModel(model.grid, _shift_truncate(model.g_a, k), _shift_truncate(model.g_b, k)), k


def tv_distances(model: DelayModel, reference: DelayModel) -> list[float]:
    """Per-distribution TV distance after common-shift alignment, A(0,0) .. B(1,1)."""
    aligned, _ = align_to(model, reference)
    return [total_variation(a, b) for (*_, a), (*_, b)
            in zip(aligned.distributions(), reference.distributions())]


# ------------------------------------------------------------------ densities


@dataclass(frozen=True, eq=False)
class DtDensitySet:
    """Per-cell densities of ``t_B - t_A`` over window bins, shape (16, n_bins).

    Row index is ``8*sA + 4*sB + 2*rA + rB``. Bins are half-open except the
    last, which also includes the window's upper edge.
    """

    window: WindowSpec
    bin_width: int
    values: np.ndarray
    provenance: str = "observed"

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def edges(self) -> np.ndarray:
        return self.window.u + self.bin_width * np.arange(self.n_bins + 1)

    def cell_totals(self) -> np.ndarray:
        return self.values.sum(axis=1).reshape(2, 2, 2, 2)


def _n_window_bins(window: WindowSpec, bin_width: int) -> int:
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    if window.width == 0 or window.width % bin_width:
        raise ValueError(f"window width {window.width} ps is not a positive multiple of bin {bin_width} ps")
    return window.width // bin_width


def _bin_of(diff: np.ndarray, window: WindowSpec, bin_width: int, nb: int) -> np.ndarray:
    return np.minimum((diff - window.u) // bin_width, nb - 1)


def observed_dt_densities(log_a: DetectionLog, log_b: DetectionLog, window: WindowSpec,
                          bin_width: int = DEFAULT_BIN_PS) -> DtDensitySet:
    nb = _n_window_bins(window, bin_width)
    cs = find_coincidences(log_a, log_b, window, "allpr")
    diff = log_b.times[cs.l] - log_a.times[cs.k]
    cell = (8 * log_a.settings[cs.k].astype(np.intp) + 4 * log_b.settings[cs.l]
            + 2 * log_a.results[cs.k] + log_b.results[cs.l])
    flat = cell * nb + _bin_of(diff, window, bin_width, nb)
    vals = np.bincount(flat, minlength=16 * nb).reshape(16, nb).astype(float)
    return DtDensitySet(window, bin_width, vals, "observed")


def brute_force_dt_densities(log_a: DetectionLog, log_b: DetectionLog, window: WindowSpec,
                             bin_width: int = DEFAULT_BIN_PS) -> DtDensitySet:
    nb = _n_window_bins(window, bin_width)
    vals = np.zeros((16, nb))
    for k in range(len(log_a)):
        ta, sa, ra = log_a[k]
        for l in range(len(log_b)):
            tb, sb, rb = log_b[l]
            d = tb - ta
            if window.u <= d <= window.v:
                vals[cell_index(sa, sb, ra, rb), min((d - window.u) // bin_width, nb - 1)] += 1
    return DtDensitySet(window, bin_width, vals, "observed")


def predict_dt_density(model: DelayModel, cell) -> np.ndarray:
    """Lag density ``f[m]`` for ``m = -(n-1) .. n-1`` (index ``m + n - 1``)."""
    sa, sb, ra, rb = cell
    ga = model.g_a[sa, ra]
    gb = model.g_b[sb, rb]
    return np.convolve(gb, ga[::-1])


def brute_force_dt_density(model: DelayModel, cell) -> np.ndarray:
    sa, sb, ra, rb = cell
    ga, gb = model.g_a[sa, ra], model.g_b[sb, rb]
    n = ga.size
    f = np.zeros(2 * n - 1)
    for j in range(n):
        for t in range(n):
            f[t - j + n - 1] += ga[j] * gb[t]
    return f


def lag_to_bin_matrix(n_grid: int, grid_width: int, window: WindowSpec, bin_width: int) -> sparse.csr_matrix:
    """Sparse (n_window_bins x n_lags) 0/1 matrix summing lag masses into window bins."""
    nb = _n_window_bins(window, bin_width)
    lags = np.arange(-(n_grid - 1), n_grid)
    dt = lags * grid_width
    inside = (dt >= window.u) & (dt <= window.v)
    rows = _bin_of(dt[inside], window, bin_width, nb)
    cols = np.flatnonzero(inside)
    return sparse.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(nb, lags.size))


def binned_prediction(model: DelayModel, window: WindowSpec, bin_width: int) -> np.ndarray:
    """(16, n_window_bins) predicted probability mass per window bin."""
    M = lag_to_bin_matrix(model.grid.n_bins, model.grid.width, window, bin_width)
    out = np.empty((16, M.shape[0]))
    for c in CELLS:
        out[cell_index(*c)] = M @ predict_dt_density(model, c)
    return out


def estimate_density(f_binned: np.ndarray, w_true: float, w_false: float) -> np.ndarray:
    """Estimated counts per window bin: true pairs times ``f`` plus flat accidentals."""
    f_binned = np.asarray(f_binned, dtype=float)
    return w_true * f_binned + w_false / f_binned.size


def estimated_densities(model: DelayModel, window: WindowSpec, bin_width: int,
                        w_true, w_false) -> DtDensitySet:
    wt = np.asarray(w_true, dtype=float).reshape(16)
    wf = np.asarray(w_false, dtype=float).reshape(16)
    pred = binned_prediction(model, window, bin_width)
    vals = np.stack([estimate_density(pred[i], wt[i], wf[i]) for i in range(16)])
    return DtDensitySet(window, bin_width, vals, "estimated")


# -------------------------------------------------------------------- fitting


def _kernel(fixed: np.ndarray, M: sparse.csr_matrix, fixed_is_a: bool) -> np.ndarray:
    """Matrix K with ``binned f = K @ free`` for the free side's distribution."""
    n = fixed.size
    lag_idx = np.arange(2 * n - 1)[:, None]  # lag m = idx - (n-1)
    t = np.arange(n)[None, :]
    if fixed_is_a:
        src = t - (lag_idx - (n - 1))  # gA[t - m]
    else:
        src = t + (lag_idx - (n - 1))  # gB[j + m]
    ok = (src >= 0) & (src < n)
    toe = np.where(ok, fixed[np.clip(src, 0, n - 1)], 0.0)
    return np.asarray(M @ toe)


@dataclass
class FitReport:
    objective: float
    iterations: int
    converged: bool
    reason: str
    history: list[float] = field(default_factory=list)
    cell_l1: list[float] = field(default_factory=list)
    start: str = "given"

    def to_dict(self) -> dict:
        return {
            "objective": self.objective, "iterations": self.iterations, "start": self.start,
            "converged": self.converged, "reason": self.reason,
            "objective_history": self.history,
            "cell_l1_error": {"{}_{}_{}_{}".format(*c): e for c, e in zip(CELLS, self.cell_l1)},
        }


def _solve_half(obs: np.ndarray, wt: np.ndarray, wf: np.ndarray, fixed: np.ndarray,
                M: sparse.csr_matrix, grid: DelayGrid, free_side: str,
                smooth: float = 0.0, only: tuple | None = None):
    """Optimal free-side distributions given the fixed side; returns (g_free, objective)."""
    n = grid.n_bins
    nb = obs.shape[1]
    allowed = grid.allowed
    targets = [(s, r) for s in (0, 1) for r in (0, 1)] if only is None else [only]
    tpos = {sr: i for i, sr in enumerate(targets)}
    cells = [c for c in CELLS if ((c[1], c[3]) if free_side == "B" else (c[0], c[2])) in tpos]
    ng = len(targets) * n
    ne = len(cells) * nb
    nd = len(targets) * (n - 1) if smooth > 0 else 0
    nvar = ng + 2 * ne + 2 * nd
    kernels = {}
    blocks, rhs = [], []
    for ci, c in enumerate(cells):
        sa, sb, ra, rb = c
        if free_side == "B":
            key, fix = (sb, rb), fixed[sa, ra]
        else:
            key, fix = (sa, ra), fixed[sb, rb]
        kk = (key, (sa, ra) if free_side == "B" else (sb, rb))
        if kk not in kernels:
            kernels[kk] = _kernel(fix, M, fixed_is_a=(free_side == "B"))
        i = cell_index(*c)
        row = sparse.lil_matrix((nb, nvar))
        gi = tpos[key] * n
        row[:, gi:gi + n] = wt[i] * kernels[kk]
        row[:, ng + ci * nb:ng + (ci + 1) * nb] = -sparse.eye(nb)
        row[:, ng + ne + ci * nb:ng + ne + (ci + 1) * nb] = sparse.eye(nb)
        blocks.append(row.tocsr())
        rhs.append(obs[i] - wf[i] / nb)
    # unit mass per distribution
    norm = sparse.lil_matrix((len(targets), nvar))
    for ti in range(len(targets)):
        norm[ti, ti * n:(ti + 1) * n] = 1.0
    blocks.append(norm.tocsr())
    rhs.append(np.ones(len(targets)))
    if nd:
        # g[t+1] - g[t] = d+ - d-
        diff = sparse.lil_matrix((nd, nvar))
        for ti in range(len(targets)):
            for t in range(n - 1):
                r = ti * (n - 1) + t
                diff[r, ti * n + t + 1] = 1
                diff[r, ti * n + t] = -1
                diff[r, ng + 2 * ne + r] = -1
                diff[r, ng + 2 * ne + nd + r] = 1
        blocks.append(diff.tocsr())
        rhs.append(np.zeros(nd))
    A = sparse.vstack(blocks).tocsc()
    b = np.concatenate(rhs)
    cost = np.concatenate([np.zeros(ng), np.ones(2 * ne), np.full(2 * nd, smooth)])
    ub = np.concatenate([np.tile(np.where(allowed, 1.0, 0.0), len(targets)),
                         np.full(2 * ne + 2 * nd, np.inf)])
    bounds = np.column_stack([np.zeros(nvar), ub])
    res = None
    for method in LP_METHODS:
        res = linprog(cost, A_eq=A, b_eq=b, bounds=bounds, method=method,
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-10})
        if res.status == 0:
            break
        log.debug("LP method %s failed (%s); trying next", method, res.message)
    else:
        raise LPError(f"LP for side {free_side} failed: {res.message}")
    g = np.clip(res.x[:ng], 0, None).reshape(len(targets), n)
    g /= g.sum(axis=1, keepdims=True)
    out = {sr: g[i] for sr, i in tpos.items()}
    return out, float(res.fun)


def roughness(model: DelayModel) -> float:
    """Summed total variation of all eight distributions (the smoothness penalty's base)."""
    return float(np.abs(np.diff(model.g_a, axis=-1)).sum() + np.abs(np.diff(model.g_b, axis=-1)).sum())


def fit_objective(model: DelayModel, observed: DtDensitySet, w_true, w_false) -> tuple[float, np.ndarray]:
    """Summed absolute error between estimated and observed densities, and its per-cell parts."""
    est = estimated_densities(model, observed.window, observed.bin_width, w_true, w_false)
    per_cell = np.abs(est.values - observed.values).sum(axis=1)
    return float(per_cell.sum()), per_cell


def solve_side(observed: DtDensitySet, w_true, w_false, model: DelayModel, free_side: str,
               coupled: bool = True, smooth: float = 0.0) -> tuple[DelayModel, float]:
    """Optimal distributions for ``free_side`` with the other side held at ``model``'s."""
    grid = model.grid
    M = lag_to_bin_matrix(grid.n_bins, grid.width, observed.window, observed.bin_width)
    wt = np.asarray(w_true, dtype=float).reshape(16)
    wf = np.asarray(w_false, dtype=float).reshape(16)
    fixed = model.g_a if free_side == "B" else model.g_b
    # round-off specks in the fixed side only add dense near-zero kernel entries
    fixed = np.where(fixed < MASS_FLOOR, 0.0, fixed)
    if coupled:
        sols, obj = _solve_half(observed.values, wt, wf, fixed, M, grid, free_side, smooth)
    else:
        sols, obj = {}, 0.0
        for sr in [(s, r) for s in (0, 1) for r in (0, 1)]:
            part, o = _solve_half(observed.values, wt, wf, fixed, M, grid, free_side, smooth, only=sr)
            sols.update(part)
            obj += o
    if smooth > 0:
        # the fixed side's penalty is constant in this half-step but part of the objective
        obj += smooth * float(np.abs(np.diff(fixed, axis=-1)).sum())
    g = np.stack([sols[s, r] for s in (0, 1) for r in (0, 1)]).reshape(2, 2, grid.n_bins)
    if free_side == "B":
        return DelayModel(grid, model.g_a, g), obj
    return DelayModel(grid, g, model.g_b), obj


def _lag_of_bins(observed: DtDensitySet, grid_width: int) -> np.ndarray:
    return (observed.edges[:-1] // grid_width).astype(np.int64)


def _peak_bin(observed: DtDensitySet, grid: DelayGrid, coverage: float = 0.99) -> int:
    """Alice peak bin that keeps the central ``coverage`` of observed lags on Bob's grid."""
    lag = _lag_of_bins(observed, grid.width)
    tot = observed.values.sum(axis=0)
    if tot.sum() <= 0:
        lo, hi = int(lag[0]), int(lag[-1])
    else:
        c = np.cumsum(tot) / tot.sum()
        tail = (1 - coverage) / 2
        lo = int(lag[min(np.searchsorted(c, tail), lag.size - 1)])
        hi = int(lag[min(np.searchsorted(c, 1 - tail), lag.size - 1)])
    p_lo = grid.first_allowed - min(lo, 0)
    p_hi = grid.n_bins - 1 - max(hi, 0)
    p = (p_lo + p_hi) // 2 if p_lo <= p_hi else p_lo
    return int(np.clip(p, grid.first_allowed, grid.n_bins - 1))


def narrow_peak_init(observed: DtDensitySet, grid: DelayGrid) -> DelayModel:
    """Every Alice distribution a single-bin peak at a common bin (Bob's are solved first)."""
    p = _peak_bin(observed, grid)
    return DelayModel.point_masses(grid, p, p)


def reference_init(observed: DtDensitySet, w_false, grid: DelayGrid, ref: tuple[int, int]) -> DelayModel:
    """Treat Alice's ``ref = (s, r)`` delay as a single-bin peak and read Bob's off the data.

    Each Bob distribution is the background-subtracted observed density of the
    cell pairing it with ``ref``, placed relative to the peak. Alice's side is
    then solved first.
    """
    n = grid.n_bins
    p = _peak_bin(observed, grid)
    lag = _lag_of_bins(observed, grid.width)
    idx = p + lag
    ok = (idx >= grid.first_allowed) & (idx < n)
    wf = np.asarray(w_false, dtype=float).reshape(16)
    ga = np.zeros((2, 2, n))
    ga[..., p] = 1
    gb = np.zeros((2, 2, n))
    for sb in (0, 1):
        for rb in (0, 1):
            i = cell_index(ref[0], sb, ref[1], rb)
            f = np.clip(observed.values[i] - wf[i] / observed.n_bins, 0, None)
            np.add.at(gb[sb, rb], idx[ok], f[ok])
            if gb[sb, rb].sum() > 0:
                gb[sb, rb] /= gb[sb, rb].sum()
            else:
                gb[sb, rb, p] = 1
    return DelayModel(grid, ga, gb)


def _alternate(observed, w_true, w_false, model, first, max_iter, tol, stall_iters,
               stall_rtol, smooth, coupled):
    order = (first, "A" if first == "B" else "B")
    history: list[float] = []
    prev_obj = np.inf
    stalled = 0
    reason, converged, it = "max_iter", False, 0
    for it in range(1, max_iter + 1):
        old = model
        obj = prev_obj
        for side in order:
            model, new_obj = solve_side(observed, w_true, w_false, model, side, coupled, smooth)
            _check_monotone(obj, new_obj)
            obj = new_obj
        history.append(obj)
        change = max(np.abs(model.g_a - old.g_a).max(), np.abs(model.g_b - old.g_b).max())
        log.debug("iteration %d objective %.6f change %.3g", it, obj, change)
        if change < tol:
            reason, converged = "distributions", True
            break
        if np.isfinite(prev_obj) and prev_obj - obj <= stall_rtol * max(prev_obj, 1.0):
            stalled += 1
            if stalled >= stall_iters:
                reason, converged = "objective", True
                break
        else:
            stalled = 0
        prev_obj = obj
    return model, history, it, converged, reason


def fit_delay_model(observed: DtDensitySet, w_true, w_false, grid: DelayGrid,
                    init: DelayModel | None = None, max_iter: int = 200, tol: float = 1e-6,
                    stall_iters: int = 3, stall_rtol: float = 1e-9, smooth: float = 0.0,
                    coupled: bool = True) -> tuple[DelayModel, FitReport]:
    """Alternate the two sides' LPs until the distributions settle.

    With ``init`` given, Bob's side is solved first from it. Otherwise five
    starts are tried and the lowest final objective kept: all Alice
    distributions as one narrow peak, and for each Alice (s, r) the
    reference start of :func:`reference_init`.

    A run stops when no entry moves by more than ``tol`` in a full iteration,
    when the objective improves by less than ``stall_rtol`` (relative) for
    ``stall_iters`` consecutive iterations, or at ``max_iter``. The objective
    is asserted non-increasing across half-steps. The returned model is in the
    gauge of :meth:`DelayModel.canonical`.
    """
    if init is not None:
        starts = [("given", init, "B")]
    else:
        starts = [("narrow_peak", narrow_peak_init(observed, grid), "B")]
        starts += [(f"reference_A_{s}_{r}", reference_init(observed, w_false, grid, (s, r)), "A")
                   for s in (0, 1) for r in (0, 1)]
    best = None
    for name, m0, first in starts:
        model, history, it, converged, reason = _alternate(
            observed, w_true, w_false, m0, first, max_iter, tol, stall_iters, stall_rtol, smooth, coupled)
        log.info("start %s: objective %.6f after %d iterations (%s)", name, history[-1], it, reason)
        if best is None or history[-1] < best[2][-1]:
            best = (name, model, history, it, converged, reason)
    name, model, history, it, converged, reason = best
    model = model.canonical()
    _, per_cell = fit_objective(model, observed, w_true, w_false)
    report = FitReport(history[-1], it, converged, reason, history, per_cell.tolist(), start=name)
    return model, report


def _check_monotone(before: float, after: float) -> None:
    if np.isfinite(before) and after > before + 1e-7 * max(1.0, abs(before)):
        raise AssertionError(f"objective increased from {before} to {after}")


def plot_data_csv(observed: DtDensitySet, estimated: DtDensitySet) -> str:
    buf = io.StringIO()
    buf.write("sA,sB,rA,rB,dt_ns,observed,calculated\n")
    edges = observed.edges
    for c in CELLS:
        i = cell_index(*c)
        for j in range(observed.n_bins):
            buf.write("{},{},{},{},{:g},{:g},{:.6f}\n".format(
                *c, edges[j] / 1000, observed.values[i, j], estimated.values[i, j]))
    return buf.getvalue()


def report_json(model: DelayModel, report: FitReport) -> str:
    return json.dumps({"grid": model.grid.__dict__, **report.to_dict()}, indent=2)
