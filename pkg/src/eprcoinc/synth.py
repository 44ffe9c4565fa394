"""Synthetic two-station detection logs with planted ground truth.

Pairs are emitted as a homogeneous Poisson process. Each station switches its
setting every ``switching_period`` ps; the setting of slot ``n`` is a pure
function of ``(seed, side, n)`` (a SplitMix64 hash), so pair and background
detections in the same slot see the same setting. A pair's settings are the
ones current at its emission time. Everything else is drawn from numpy's
Philox4x64 counter-based generator seeded through ``SeedSequence``.

Bob's switching clock runs ``clock_detune_ps`` slower per period than Alice's
by default. Two free-running station clocks are never phase locked, and a
locked pair of gates would imprint a periodic pattern on the accidental
time-difference histogram.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .delay import DelayGrid, DelayModel
from .eventlog import DetectionLog

RNG_ALGORITHM = f"numpy {np.__version__} Philox4x64-10 via SeedSequence; settings SplitMix64"
OUTCOME_KINDS = ("quantum", "lhv", "table")
PS_PER_S = 10**12

_SIDE_SALT = {"A": 0x41, "B": 0x42}


def splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to uint64 input."""
    z = np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def slot_settings(seed: int, side: str, slots: np.ndarray) -> np.ndarray:
    key = splitmix64(np.uint64(seed % 2**64) ^ np.uint64(_SIDE_SALT[side] << 56))
    return (splitmix64(np.asarray(slots, dtype=np.uint64) ^ key) >> np.uint64(63)).astype(np.uint8)


# ------------------------------------------------------------- outcome models


def singlet_probabilities(angles_a, angles_b) -> np.ndarray:
    """(2,2,2,2) [sA,sB,rA,rB] joint probabilities of the polarization singlet.

    Angles are analyzer orientations in degrees; the correlation is
    ``-cos(2 (a - b))``.
    """
    p = np.empty((2, 2, 2, 2))
    for sa in (0, 1):
        for sb in (0, 1):
            e = -math.cos(2 * math.radians(angles_a[sa] - angles_b[sb]))
            for ra in (0, 1):
                for rb in (0, 1):
                    p[sa, sb, ra, rb] = (1 + (1 if ra == rb else -1) * e) / 4
    return p


def lhv_probabilities(response_a, response_b, weights=None) -> np.ndarray:
    """Joint probabilities of a local model with a discrete hidden variable.

    ``response_a[s][k]`` is Alice's result for setting ``s`` and hidden value
    ``k``; ``weights[k]`` its probability (uniform by default).
    """
    ra_tab = np.asarray(response_a, dtype=int)
    rb_tab = np.asarray(response_b, dtype=int)
    n = ra_tab.shape[1]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    p = np.zeros((2, 2, 2, 2))
    for sa in (0, 1):
        for sb in (0, 1):
            np.add.at(p[sa, sb], (ra_tab[sa], rb_tab[sb]), w)
    return p


def outcome_probabilities(model: dict) -> np.ndarray:
    kind = model.get("kind")
    if kind == "quantum":
        p = singlet_probabilities(model.get("angles_a", (0.0, 45.0)), model.get("angles_b", (-22.5, 22.5)))
    elif kind == "lhv":
        p = lhv_probabilities(model["response_a"], model["response_b"], model.get("weights"))
    elif kind == "table":
        p = np.asarray(model["probs"], dtype=float).reshape(2, 2, 2, 2)
    else:
        raise ValueError(f"outcome model kind must be one of {OUTCOME_KINDS}, got {kind!r}")
    if np.any(p < 0) or not np.allclose(p.sum(axis=(2, 3)), 1.0, atol=1e-12):
        raise ValueError("outcome probabilities must be non-negative and sum to 1 per setting pair")
    return p


# --------------------------------------------------------------------- config


def _model_to_dict(m: DelayModel) -> dict:
    return {"grid": asdict(m.grid), "g_a": m.g_a.tolist(), "g_b": m.g_b.tolist()}


def _model_from_dict(d: dict) -> DelayModel:
    grid = DelayGrid(**d["grid"])
    if "point" in d:
        return DelayModel.point_masses(grid, d["point"]["bin_a"], d["point"]["bin_b"])
    return DelayModel(grid, d["g_a"], d["g_b"])


def default_delay_model() -> DelayModel:
    """Point-mass delays: Alice 10 ns, Bob 13.5 ns (difference inside the WJSWZ window)."""
    return DelayModel.point_masses(DelayGrid(500, 64), 19, 26)


@dataclass
class SyntheticConfig:
    duration: int = 10**10  # ps
    pair_rate: float = 0.0  # pairs / s
    outcome_model: dict = field(default_factory=lambda: {"kind": "quantum"})
    delay_model: DelayModel = field(default_factory=default_delay_model)
    efficiency_a: list = field(default_factory=lambda: [[1.0, 1.0], [1.0, 1.0]])
    efficiency_b: list = field(default_factory=lambda: [[1.0, 1.0], [1.0, 1.0]])
    background_rate_a: float = 0.0  # singles / s
    background_rate_b: float = 0.0
    switching_period: int = 100_000
    suppression: int = 14_000
    seed: int = 0
    n_pairs: int | None = None  # exact pair count instead of a Poisson draw
    delay_jitter: bool = False  # uniform within the delay bin instead of its right edge
    clock_detune_ps: int = 1

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for name in ("pair_rate", "background_rate_a", "background_rate_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("efficiency_a", "efficiency_b"):
            e = np.asarray(getattr(self, name), dtype=float)
            if e.shape != (2, 2) or np.any(e <= 0) or np.any(e > 1):
                raise ValueError(f"{name} must be a 2x2 table in (0, 1]")
        if self.switching_period <= 0 or not 0 <= self.suppression < self.switching_period:
            raise ValueError("need 0 <= suppression < switching_period")
        if self.switching_period + self.clock_detune_ps <= self.suppression:
            raise ValueError("detuned period must exceed suppression")
        if self.n_pairs is not None and self.n_pairs < 0:
            raise ValueError("n_pairs must be non-negative")
        self.delay_model.check()
        outcome_probabilities(self.outcome_model)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "delay_model"}
        d["delay_model"] = _model_to_dict(self.delay_model)
        d["efficiency_a"] = np.asarray(self.efficiency_a, dtype=float).tolist()
        d["efficiency_b"] = np.asarray(self.efficiency_b, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "delay_model" in d:
            d["delay_model"] = _model_from_dict(d["delay_model"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ generator


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Every emitted pair with its detection indices (-1 when not recorded)."""

    emit_times: np.ndarray
    k_a: np.ndarray
    l_b: np.ndarray
    settings: np.ndarray  # (n, 2) sA, sB
    results: np.ndarray  # (n, 2) rA, rB

    def __len__(self) -> int:
        return self.emit_times.size

    def detected_pairs(self) -> set[tuple[int, int]]:
        both = (self.k_a >= 0) & (self.l_b >= 0)
        return set(zip(self.k_a[both].tolist(), self.l_b[both].tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("pair_id,emit_time_ps,kA,lB\n")
        for i, (t, k, l) in enumerate(zip(self.emit_times.tolist(), self.k_a.tolist(), self.l_b.tolist())):
            buf.write(f"{i},{t},{k},{l}\n")
        return buf.getvalue()


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**64, stream])))


def _period(cfg: SyntheticConfig, side: str) -> int:
    return cfg.switching_period + (cfg.clock_detune_ps if side == "B" else 0)


def _settings_at(cfg: SyntheticConfig, side: str, t: np.ndarray) -> np.ndarray:
    return slot_settings(cfg.seed, side, t // _period(cfg, side))


def _draw_delays(rng, model: DelayModel, g: np.ndarray, s, r, jitter: bool) -> np.ndarray:
    grid = model.grid
    cdf = np.cumsum(g.reshape(4, -1), axis=1)
    cdf[:, -1] = np.inf
    u = rng.random(s.size)
    idx = 2 * s.astype(np.intp) + r
    j = np.empty(s.size, dtype=np.int64)
    for c in range(4):
        m = idx == c
        j[m] = np.searchsorted(cdf[c], u[m], side="right")
    t = grid.origin + grid.width * (j + 1)
    if jitter:
        t -= rng.integers(0, grid.width, size=s.size)
    return t


def generate(cfg: SyntheticConfig) -> tuple[DetectionLog, DetectionLog, GroundTruth]:
    cfg.validate()
    probs = outcome_probabilities(cfg.outcome_model)
    rng_pairs = make_rng(cfg.seed, 1)
    if cfg.n_pairs is not None:
        n = cfg.n_pairs
    else:
        n = int(rng_pairs.poisson(cfg.pair_rate * cfg.duration / PS_PER_S))
    emit = np.sort(rng_pairs.integers(0, cfg.duration, size=n, dtype=np.int64))
    sa = _settings_at(cfg, "A", emit)
    sb = _settings_at(cfg, "B", emit)
    cdf = np.cumsum(probs.reshape(4, 4), axis=1)
    cdf[:, -1] = np.inf
    u = rng_pairs.random(n)
    outcome = np.empty(n, dtype=np.intp)
    block = 2 * sa.astype(np.intp) + sb
    for b in range(4):
        m = block == b
        outcome[m] = np.searchsorted(cdf[b], u[m], side="right")
    ra = (outcome >> 1).astype(np.uint8)
    rb = (outcome & 1).astype(np.uint8)

    sides = {}
    for side, s, r, eff, g, rate, stream in (
        ("A", sa, ra, cfg.efficiency_a, cfg.delay_model.g_a, cfg.background_rate_a, 2),
        ("B", sb, rb, cfg.efficiency_b, cfg.delay_model.g_b, cfg.background_rate_b, 3),
    ):
        rng = make_rng(cfg.seed, stream)
        e = np.asarray(eff, dtype=float)
        kept = rng.random(n) < e[s, r]
        t = emit + _draw_delays(rng, cfg.delay_model, g, s, r, cfg.delay_jitter)
        n_bg = int(rng.poisson(rate * cfg.duration / PS_PER_S))
        bg_t = rng.integers(0, cfg.duration, size=n_bg, dtype=np.int64)
        bg_r = rng.integers(0, 2, size=n_bg).astype(np.uint8)
        times = np.concatenate([t, bg_t])
        setting = np.concatenate([s, _settings_at(cfg, side, bg_t)])
        result = np.concatenate([r, bg_r])
        origin = np.concatenate([np.arange(n), np.full(n_bg, -1)])
        keep = np.concatenate([kept, np.ones(n_bg, dtype=bool)])
        keep &= (times % _period(cfg, side)) >= cfg.suppression
        keep &= (times >= 0) & (times <= cfg.duration)
        times, setting, result, origin = times[keep], setting[keep], result[keep], origin[keep]
        order = np.argsort(times, kind="stable")
        idx = np.full(n, -1, dtype=np.int64)
        pos = np.arange(order.size)
        from_pair = origin[order] >= 0
        idx[origin[order][from_pair]] = pos[from_pair]
        sides[side] = (DetectionLog(side, times[order], setting[order], result[order], cfg.duration), idx)

    truth = GroundTruth(emit, sides["A"][1], sides["B"][1],
                        np.column_stack([sa, sb]), np.column_stack([ra, rb]))
    return sides["A"][0], sides["B"][0], truth


def expected_singles(cfg: SyntheticConfig, side: str) -> np.ndarray:
    """Analytic mean singles per (setting, result), ignoring edge effects of the log end."""
    probs = outcome_probabilities(cfg.outcome_model)
    n = cfg.n_pairs if cfg.n_pairs is not None else cfg.pair_rate * cfg.duration / PS_PER_S
    live = 1 - cfg.suppression / _period(cfg, side)
    if side == "A":
        marg = probs.sum(axis=3).mean(axis=1)  # [sA, rA] given sA uniform
        eff, rate = np.asarray(cfg.efficiency_a, float), cfg.background_rate_a
    else:
        marg = probs.sum(axis=2).mean(axis=0)
        eff, rate = np.asarray(cfg.efficiency_b, float), cfg.background_rate_b
    pairs = n * 0.5 * marg * eff
    bg = rate * cfg.duration / PS_PER_S / 4
    return (pairs + bg) * live
