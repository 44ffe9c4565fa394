"""True/false-positive decomposition and detection-efficiency ratios that
restore no-signaling.

With ``C = W_T / (lambda_A * lambda_B)`` and the gauge ``lambda(s, 0) = 1``,
the four no-signaling conditions split into two independent 2x2 systems:
the two Alice-marginal conditions involve only Bob's ratios ``b0, b1`` and
the two Bob-marginal conditions only Alice's ``a0, a1``. Writing ``x, y`` for
the reciprocals of one side's ratios, each condition is

    (p0 + p1 x) / (p2 + p3 x) = (q0 + q1 y) / (q2 + q3 y)

which cross-multiplies to a bilinear equation ``A + B x + C y + D x y = 0``.
Eliminating ``y`` between the two equations leaves a quadratic in ``x``,
so all solutions are enumerated and uniqueness is checked, not assumed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bell import no_signaling
from .coincidence import CELLS, CellTable
from .eventlog import SinglesTable

RESIDUAL_TOL = 1e-10
MAX_COND = 1e8
DEGENERATE_RTOL = 1e-12


class InfeasibleError(ValueError):
    """No positive efficiency ratios bring the counts into no-signaling."""


class ClampWarning(UserWarning):
    pass


def _arr(table) -> np.ndarray:
    if isinstance(table, CellTable):
        table = table.counts
    return np.asarray(table, dtype=float).reshape(2, 2, 2, 2)


def per_cell_false_positives(singles: SinglesTable, width_ps: int, span_ps: int) -> np.ndarray:
    """Expected accidentals per cell: ``D_A(sA,rA) * D_B(sB,rB) * width / T``."""
    if span_ps <= 0:
        raise ValueError("span must be positive")
    da = singles.alice.astype(float)
    db = singles.bob.astype(float)
    # indices: a=sA, r=rA, b=sB, q=rB
    return np.einsum("ar,bq->abrq", da, db) * (int(width_ps) / int(span_ps))


@dataclass(frozen=True, eq=False)
class TrueFalseDecomposition:
    w_tot: np.ndarray
    w_true: np.ndarray
    w_false: np.ndarray
    clamped: tuple = ()

    def to_dict(self) -> dict:
        key = "{}_{}_{}_{}".format
        return {
            "W_tot": {key(*c): float(self.w_tot[c]) for c in CELLS},
            "W_T": {key(*c): float(self.w_true[c]) for c in CELLS},
            "W_F": {key(*c): float(self.w_false[c]) for c in CELLS},
            "clamped_cells": [key(*c) for c in self.clamped],
        }


def decompose(w_tot, w_false) -> TrueFalseDecomposition:
    """``W_T = max(W_tot - W_F, 0)`` cell-wise; clamped cells raise a ClampWarning."""
    tot = _arr(w_tot)
    wf = _arr(w_false)
    raw = tot - wf
    neg = raw < 0
    clamped = tuple(tuple(int(i) for i in idx) for idx in np.argwhere(neg))
    if clamped:
        warnings.warn(f"W_T clamped to 0 in cells {clamped}", ClampWarning, stacklevel=2)
    return TrueFalseDecomposition(tot, np.where(neg, 0.0, raw), wf, clamped)


# ---------------------------------------------------------------- ratio solver


def _bilinear(p, q):
    """Coefficients (A, B, C, D) of (p0+p1x)(q2+q3y) - (q0+q1y)(p2+p3x)."""
    return (p[0] * q[2] - q[0] * p[2],
            p[1] * q[2] - q[0] * p[3],
            p[0] * q[3] - q[1] * p[2],
            p[1] * q[3] - q[1] * p[3])


def _solve_side(eq1, eq2, newton_steps: int = 20):
    """All positive (x, y) solving both bilinear equations."""
    A, B, C, D = eq1
    E, F, G, H = eq2

    def f(x, y):
        return np.array([A + B * x + C * y + D * x * y, E + F * x + G * y + H * x * y])

    def jac(x, y):
        return np.array([[B + D * y, C + D * x], [F + H * y, G + H * x]])

    # y = -(A + Bx)/(C + Dx), substituted into eq2 and multiplied through
    poly = np.array([F * D - H * B, E * D + F * C - G * B - H * A, E * C - G * A])
    scale = np.abs(poly).max()
    # poly is quadratic in the coefficients, so compare against their square
    if scale <= DEGENERATE_RTOL * max(abs(v) for v in (*eq1, *eq2)) ** 2:
        raise InfeasibleError("efficiency ratios are not identifiable "
                              "(no-signaling equations not independent)")
    roots = np.roots(poly / scale)
    sols = []
    for r in roots:
        if abs(r.imag) > 1e-9 * max(1.0, abs(r.real)):
            continue
        x = r.real
        den = C + D * x
        if x <= 0 or den == 0:
            continue
        y = -(A + B * x) / den
        if y <= 0:
            continue
        z = np.array([x, y])
        for _ in range(newton_steps):
            fz = f(*z)
            try:
                step = np.linalg.solve(jac(*z), fz)
            except np.linalg.LinAlgError:
                break
            # damp so the iterate stays in the positive quadrant
            t = 1.0
            while np.any(z - t * step <= 0) and t > 1e-6:
                t /= 2
            z = z - t * step
            if np.all(np.abs(step) <= 1e-15 * np.abs(z)):
                break
        # dependent equations leave a curve of solutions, not isolated points
        if np.linalg.cond(jac(*z) / max(abs(v) for v in (*eq1, *eq2))) > MAX_COND:
            raise InfeasibleError("efficiency ratios are not identifiable "
                                  "(no-signaling equations nearly dependent)")
        if not any(np.allclose(z, s, rtol=1e-9) for s in sols):
            sols.append(z)
    return sols


@dataclass(frozen=True)
class EfficiencyRatios:
    """``a_s = lambda_A(s,1)/lambda_A(s,0)`` and ``b_s = lambda_B(s,1)/lambda_B(s,0)``."""

    a0: float
    a1: float
    b0: float
    b1: float
    residuals: tuple = ()
    unique: bool = True
    alternatives: tuple = field(default=(), compare=False)

    @property
    def alice(self) -> np.ndarray:
        return np.array([[1.0, self.a0], [1.0, self.a1]])

    @property
    def bob(self) -> np.ndarray:
        return np.array([[1.0, self.b0], [1.0, self.b1]])

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a0, self.a1, self.b0, self.b1)

    def to_dict(self) -> dict:
        return {
            "a0": self.a0, "a1": self.a1, "b0": self.b0, "b1": self.b1,
            "residuals": list(self.residuals), "unique": self.unique,
            "alternatives": [list(a) for a in self.alternatives],
        }


def apply_ratios(w_true, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``C = W_T / (lambda_A(sA,rA) * lambda_B(sB,rB))``."""
    return _arr(w_true) / np.einsum("ar,bq->abrq", a, b)


def no_signaling_residuals(c) -> tuple[float, float, float, float]:
    """Relative residuals of the four ratio conditions on counts ``c``."""
    c = _arr(c)

    def alice_ratio(sa, sb):
        return c[sa, sb, 0, :].sum() / c[sa, sb, 1, :].sum()

    def bob_ratio(sa, sb):
        return c[sa, sb, :, 0].sum() / c[sa, sb, :, 1].sum()

    pairs = [
        (alice_ratio(0, 0), alice_ratio(0, 1)),
        (alice_ratio(1, 0), alice_ratio(1, 1)),
        (bob_ratio(0, 0), bob_ratio(1, 0)),
        (bob_ratio(0, 1), bob_ratio(1, 1)),
    ]
    return tuple(abs(l - r) / abs(r) for l, r in pairs)


def _pick(sols):
    # closest to unit efficiency ratios in log space
    return min(sols, key=lambda s: float(np.abs(np.log(s)).sum()))


def solve_efficiency_ratios(w_true) -> EfficiencyRatios:
    w = _arr(w_true)
    if np.any(w <= 0):
        bad = [tuple(int(i) for i in idx) for idx in np.argwhere(w <= 0)]
        raise InfeasibleError(f"W_T must be positive in every cell; non-positive at {bad}")
    # Bob's ratios from the Alice-marginal conditions: x = 1/b0, y = 1/b1
    bob_sols = _solve_side(_bilinear(w[0, 0].ravel(), w[0, 1].ravel()),
                           _bilinear(w[1, 0].ravel(), w[1, 1].ravel()))
    # Alice's ratios from the Bob-marginal conditions: x = 1/a0, y = 1/a1
    t = w.transpose(1, 0, 3, 2)  # [sB, sA, rB, rA]
    alice_sols = _solve_side(_bilinear(t[0, 0].ravel(), t[0, 1].ravel()),
                             _bilinear(t[1, 0].ravel(), t[1, 1].ravel()))
    if not bob_sols or not alice_sols:
        side = "Bob" if not bob_sols else "Alice"
        raise InfeasibleError(f"no positive efficiency ratios exist for {side}")
    xa, ya = _pick(alice_sols)
    xb, yb = _pick(bob_sols)
    a0, a1, b0, b1 = (float(1 / v) for v in (xa, ya, xb, yb))
    res = no_signaling_residuals(apply_ratios(w, np.array([[1, a0], [1, a1]]),
                                              np.array([[1, b0], [1, b1]])))
    alts = []
    for sa in alice_sols:
        for sb in bob_sols:
            alts.append((1 / sa[0], 1 / sa[1], 1 / sb[0], 1 / sb[1]))
    unique = len(alice_sols) == 1 and len(bob_sols) == 1
    return EfficiencyRatios(a0, a1, b0, b1, tuple(float(r) for r in res), unique,
                            tuple(alts) if not unique else ())


# ------------------------------------------------------- probabilities, checks


@dataclass(frozen=True, eq=False)
class ProbabilityTable:
    probs: np.ndarray  # [sA, sB, rA, rB], each setting block sums to 1

    def marginals(self) -> dict:
        p = self.probs
        return {
            "P(rA=0|sA=0)": float(p[0, :, 0, :].sum(axis=-1).mean()),
            "P(rA=0|sA=1)": float(p[1, :, 0, :].sum(axis=-1).mean()),
            "P(rB=0|sB=0)": float(p[:, 0, :, 0].sum(axis=-1).mean()),
            "P(rB=0|sB=1)": float(p[:, 1, :, 0].sum(axis=-1).mean()),
        }

    def correlations(self) -> tuple[float, float, float, float]:
        """E(0,0), E(0,1), E(1,0), E(1,1)."""
        p = self.probs
        return tuple(float(p[a, b, 0, 0] + p[a, b, 1, 1] - p[a, b, 0, 1] - p[a, b, 1, 0])
                     for a in (0, 1) for b in (0, 1))

    def grid(self) -> np.ndarray:
        """4x4 layout with rows (sA, rA) and columns (sB, rB)."""
        return self.probs.transpose(0, 2, 1, 3).reshape(4, 4)

    def to_dict(self) -> dict:
        key = "{}_{}_{}_{}".format
        return {"probabilities": {key(*c): float(self.probs[c]) for c in CELLS},
                "marginals": self.marginals()}


def normalized_probabilities(w_true, ratios: EfficiencyRatios) -> ProbabilityTable:
    c = apply_ratios(w_true, ratios.alice, ratios.bob)
    sums = c.sum(axis=(2, 3), keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("a setting block has zero total")
    return ProbabilityTable(c / sums)


@dataclass(frozen=True)
class MasanesResult:
    passed: bool
    margin: float  # pi minus the largest arcsine combination; negative means violated
    worst: tuple  # signs of the worst combination

    def to_dict(self) -> dict:
        return {"passed": self.passed, "margin": self.margin, "worst_signs": list(self.worst)}


def masanes_check(correlations, tol: float = 1e-12) -> MasanesResult:
    """Arcsine criterion for quantum-realizable correlations.

    ``|asin E00 + asin E01 + asin E10 + asin E11 - 2 asin E_ij| <= pi`` for
    each choice of the negated term. Sign patterns with three minus signs are
    the negatives of these and give the same absolute values.
    """
    e = np.asarray(correlations, dtype=float)
    if e.shape != (4,) or np.any(np.abs(e) > 1):
        raise ValueError("need four correlations with |E| <= 1")
    s = np.arcsin(e)
    worst, worst_signs = -math.inf, ()
    for i in range(4):
        signs = tuple(-1 if j == i else 1 for j in range(4))
        v = abs(float(np.dot(signs, s)))
        if v > worst:
            worst, worst_signs = v, signs
    margin = math.pi - worst
    return MasanesResult(margin >= -tol, margin, worst_signs)


@dataclass(frozen=True)
class AkCheck:
    side: str
    setting: int
    singles_ratio: float
    efficiency_ratio: float
    relative_discrepancy: float
    z: float
    violated: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ak_fair_sampling_check(singles: SinglesTable, ratios: EfficiencyRatios,
                           z_threshold: float = 3.0) -> list[AkCheck]:
    """Compare singles ratios ``D(s,1)/D(s,0)`` with the solved efficiency ratios.

    ``z`` is the log-ratio discrepancy over its Poisson standard error
    ``sqrt(1/D(s,0) + 1/D(s,1))``.
    """
    out = []
    for side, d, lam in (("A", singles.alice, (ratios.a0, ratios.a1)),
                         ("B", singles.bob, (ratios.b0, ratios.b1))):
        for s in (0, 1):
            d0, d1 = float(d[s, 0]), float(d[s, 1])
            if d0 <= 0 or d1 <= 0:
                raise ValueError(f"singles for side {side} setting {s} must be positive")
            sr = d1 / d0
            se = math.sqrt(1 / d0 + 1 / d1)
            z = math.log(sr / lam[s]) / se
            out.append(AkCheck(side, s, sr, lam[s], sr / lam[s] - 1, z, abs(z) > z_threshold))
    return out


def fair_sampling_analysis(w_tot, singles: SinglesTable, width_ps: int, span_ps: int) -> dict:
    """Full pipeline: decomposition, ratios, probabilities and both checks, as a dict."""
    wf = per_cell_false_positives(singles, width_ps, span_ps)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampWarning)
        dec = decompose(w_tot, wf)
    report = {"decomposition": dec.to_dict(),
              "warnings": [str(w.message) for w in caught]}
    ratios = solve_efficiency_ratios(dec.w_true)
    probs = normalized_probabilities(dec.w_true, ratios)
    ns = no_signaling(probs.probs)
    report.update({
        "ratios": ratios.to_dict(),
        "probability_table": probs.to_dict(),
        "probability_grid": probs.grid().tolist(),
        "max_no_signaling_delta": max(abs(d.value) for d in ns.deltas()),
        "correlations": list(probs.correlations()),
        "masanes": masanes_check(probs.correlations()).to_dict(),
        "ak_check": [c.to_dict() for c in ak_fair_sampling_check(singles, ratios)],
    })
    return report


__all__ = [
    "AkCheck", "ClampWarning", "EfficiencyRatios", "InfeasibleError", "MasanesResult",
    "ProbabilityTable", "TrueFalseDecomposition", "ak_fair_sampling_check", "apply_ratios",
    "decompose", "fair_sampling_analysis", "masanes_check",
    "no_signaling_residuals", "normalized_probabilities", "per_cell_false_positives",
    "solve_efficiency_ratios",
]
