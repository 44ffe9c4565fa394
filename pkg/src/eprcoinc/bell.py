"""Correlations, CHSH values and no-signaling deltas from a cell table.

Standard errors follow the binomial formula ``sqrt(p (1 - p) / N)`` for an
estimated probability; a correlation ``E = 2p - 1`` (``p`` = agreement
frequency) therefore has ``SE = 2 sqrt(p (1 - p) / N)``. Combined errors are
root-sum-squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .coincidence import CellTable

CLASSICAL_BOUND = 2.0


class EmptySettingError(ValueError):
    """A setting pair has no coincidences, so its statistics are undefined."""


def _block(cells, sa: int, sb: int) -> np.ndarray:
    counts = cells.counts if isinstance(cells, CellTable) else np.asarray(cells).reshape(2, 2, 2, 2)
    blk = np.asarray(counts[sa, sb], dtype=float)
    if blk.sum() <= 0:
        raise EmptySettingError(f"setting pair ({sa},{sb}) has no coincidences")
    return blk


def binomial_se(p: float, n: float) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def correlation(cells, sa: int, sb: int) -> tuple[float, float]:
    """Agree-minus-disagree frequency for one setting pair, with its standard error."""
    blk = _block(cells, sa, sb)
    n = blk.sum()
    agree = blk[0, 0] + blk[1, 1]
    p = agree / n
    return (2.0 * agree - n) / n, 2.0 * binomial_se(p, n)


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    @property
    def z(self) -> float:
        if self.se > 0:
            return float(self.value / self.se)
        return math.copysign(math.inf, self.value) if self.value else 0.0


@dataclass(frozen=True)
class ChshReport:
    correlations: dict  # (sa, sb) -> Estimate
    value_2a: Estimate
    value_2b: Estimate

    @staticmethod
    def _z(est: Estimate) -> float:
        if est.se == 0:
            return math.inf if est.value > CLASSICAL_BOUND else (0.0 if est.value == CLASSICAL_BOUND else -math.inf)
        return (est.value - CLASSICAL_BOUND) / est.se

    @property
    def z_2a(self) -> float:
        return self._z(self.value_2a)

    @property
    def z_2b(self) -> float:
        return self._z(self.value_2b)

    @property
    def violated_2a(self) -> bool:
        return bool(self.value_2a.value > CLASSICAL_BOUND)

    @property
    def violated_2b(self) -> bool:
        return bool(self.value_2b.value > CLASSICAL_BOUND)

    def to_dict(self) -> dict:
        out = {f"E({sa},{sb})": _fmt(e) for (sa, sb), e in sorted(self.correlations.items())}
        out["inequality_2a"] = {**_fmt(self.value_2a), "z_vs_2": _r(self.z_2a),
                                "violated": self.violated_2a}
        out["inequality_2b"] = {**_fmt(self.value_2b), "z_vs_2": _r(self.z_2b),
                                "violated": self.violated_2b}
        return out


def _r(x: float) -> float:
    x = float(x)
    return round(x, 6) if math.isfinite(x) else x


def _fmt(e: Estimate) -> dict:
    return {"value": _r(e.value), "se": _r(e.se)}


def chsh(cells) -> ChshReport:
    """Both setting permutations of the CHSH expression.

    2a: ``|E(0,0) - E(1,0)| + |E(0,1) + E(1,1)|``
    2b: ``|E(0,1) - E(1,1)| + |E(0,0) + E(1,0)|``
    """
    es = {(sa, sb): Estimate(*correlation(cells, sa, sb)) for sa in (0, 1) for sb in (0, 1)}
    se = math.sqrt(sum(e.se ** 2 for e in es.values()))
    v2a = abs(es[0, 0].value - es[1, 0].value) + abs(es[0, 1].value + es[1, 1].value)
    v2b = abs(es[0, 1].value - es[1, 1].value) + abs(es[0, 0].value + es[1, 0].value)
    return ChshReport(es, Estimate(v2a, se), Estimate(v2b, se))


@dataclass(frozen=True)
class NoSignalReport:
    """Marginal probabilities of result 0 and their differences across the remote setting.

    ``alice[(sa, sb)]`` is P(r_A=0 | sa, sb); ``alice_delta[sa]`` is
    P(r_A=0 | sa, 0) - P(r_A=0 | sa, 1). Bob's entries mirror this with the
    roles of the settings swapped: ``bob_delta[sb]`` = P(r_B=0 | 0, sb) - P(r_B=0 | 1, sb).
    """

    alice: dict
    bob: dict
    alice_delta: dict
    bob_delta: dict

    def deltas(self) -> list[Estimate]:
        return [self.alice_delta[0], self.alice_delta[1], self.bob_delta[0], self.bob_delta[1]]

    def max_abs_z(self) -> float:
        return max(abs(d.z) for d in self.deltas())

    def p_values(self) -> list[float]:
        """One-tailed Normal tail probability of each |delta| under no-signaling."""
        return [float(stats.norm.sf(abs(d.z))) for d in self.deltas()]

    def to_dict(self) -> dict:
        out = {}
        for sa in (0, 1):
            out[f"P(rA=0|sA={sa},sB=0)"] = _fmt(self.alice[sa, 0])
            out[f"P(rA=0|sA={sa},sB=1)"] = _fmt(self.alice[sa, 1])
            d = self.alice_delta[sa]
            out[f"delta_A(sA={sa})"] = {**_fmt(d), "z": _r(d.z)}
        for sb in (0, 1):
            out[f"P(rB=0|sA=0,sB={sb})"] = _fmt(self.bob[0, sb])
            out[f"P(rB=0|sA=1,sB={sb})"] = _fmt(self.bob[1, sb])
            d = self.bob_delta[sb]
            out[f"delta_B(sB={sb})"] = {**_fmt(d), "z": _r(d.z)}
        return out


def _diff(x: Estimate, y: Estimate) -> Estimate:
    return Estimate(x.value - y.value, math.hypot(x.se, y.se))


def no_signaling(cells) -> NoSignalReport:
    alice, bob = {}, {}
    for sa in (0, 1):
        for sb in (0, 1):
            blk = _block(cells, sa, sb)
            n = blk.sum()
            pa = blk[0, :].sum() / n
            pb = blk[:, 0].sum() / n
            alice[sa, sb] = Estimate(pa, binomial_se(pa, n))
            bob[sa, sb] = Estimate(pb, binomial_se(pb, n))
    alice_delta = {sa: _diff(alice[sa, 0], alice[sa, 1]) for sa in (0, 1)}
    bob_delta = {sb: _diff(bob[0, sb], bob[1, sb]) for sb in (0, 1)}
    return NoSignalReport(alice, bob, alice_delta, bob_delta)
