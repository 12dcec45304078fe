"""Closed-form reliability bounds for PARA and refresh-rate mitigation, with Monte Carlo checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .controller import MitigationPolicy, ParaRng, Request, Simulator, TimingParams, read
from .disturbance import DisturbanceProfile, PatternGate, VulnerableCell
from .dram import Geometry
from .errors import DomainError


class Survival(NamedTuple):
    probability: float
    log10: float


def para_survival(p: float, n: int) -> Survival:
    """Probability that a victim sees no PARA refresh across ``n`` adjacent closes: (1-p)**n."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0 or p == 0.0:
        return Survival(1.0, 0.0)
    if p == 1.0:
        return Survival(0.0, -math.inf)
    log10 = n * math.log1p(-p) / math.log(10)
    return Survival(10.0**log10, log10)


@dataclass(frozen=True)
class WindowModel:
    t_refw: int
    t_rc: int
    k: int = 1

    def __post_init__(self):
        TimingParams(self.t_rc, self.t_refw, self.k)  # same invariants

    @classmethod
    def from_timing(cls, timing: TimingParams) -> "WindowModel":
        return cls(timing.t_refw, timing.t_rc, timing.refresh_multiplier_k)


def max_hammers_per_window(w: WindowModel) -> int:
    """Most same-bank activations that fit between two refreshes of one row."""
    return w.t_refw // (w.k * w.t_rc)


def min_safe_multiplier(w: WindowModel, t_min: int) -> int:
    """Smallest refresh multiplier whose window admits fewer than ``t_min`` activations.

    ``w.k`` is ignored; the result is an absolute multiplier.
    """
    if t_min < 1:
        raise DomainError("no refresh multiplier protects a cell with threshold < 1")
    # max_hammers(k) < t_min  <=>  t_refw < k * t_rc * t_min
    return w.t_refw // (w.t_rc * t_min) + 1


@dataclass
class ParaValidation:
    p: float
    n: int
    trials: int
    analytic: float
    log10_analytic: float
    empirical: float
    zero_refresh_runs: int

    @property
    def abs_error(self) -> float:
        return abs(self.empirical - self.analytic)

    @property
    def sigma(self) -> float:
        q = self.analytic
        return math.sqrt(q * (1.0 - q) / self.trials)

    def within(self, n_sigma: float = 3.0) -> bool:
        return self.abs_error <= n_sigma * self.sigma

    def to_row(self) -> dict:
        return {
            "p": self.p,
            "N": self.n,
            "analytic": self.analytic,
            "empirical": self.empirical,
            "abs_error": self.abs_error,
            "trials": self.trials,
            "log10_analytic": self.log10_analytic,
            "sigma3": 3.0 * self.sigma,
            "within_3sigma": int(self.within(3.0)),
        }


_MICRO_GEOMETRY = Geometry(banks=1, rows_per_bank=4, row_size_bits=64)
_MICRO_TIMING = TimingParams(t_rc=1, t_refw=2**62)


def _micro_run(p: float, n: int, rng: ParaRng, seed: int) -> bool:
    """One victim (row 2), ``n`` closes of its neighbour (row 1); True if PARA never refreshed it."""
    sim = Simulator(_MICRO_GEOMETRY, _MICRO_TIMING, MitigationPolicy.para(p, seed), DisturbanceProfile(), rng=rng)
    sim.run([read(_MICRO_GEOMETRY.row_base_address(0, 1))] * n)
    return sim.para_refreshes == 0


def validate_para_model(p: float, n: int, trials: int, seed: int, method: str = "vectorized") -> ParaValidation:
    """Compare the closed form against the zero-refresh frequency over ``trials`` micro-runs.

    All micro-runs share one seeded uniform stream, each consuming exactly
    ``n`` draws. ``method="simulator"`` drives the controller; ``"vectorized"``
    evaluates the same draws in numpy blocks and gives identical counts.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    survival = para_survival(p, n)
    if method == "simulator":
        rng = ParaRng(seed)
        zero = sum(_micro_run(p, n, rng, seed) for _ in range(trials))
    elif method == "vectorized":
        zero = _vectorized_zero_refresh(p, n, trials, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ParaValidation(p, n, trials, survival.probability, survival.log10, zero / trials, zero)


def _vectorized_zero_refresh(p: float, n: int, trials: int, seed: int) -> int:
    if n == 0:
        return trials
    gen = np.random.default_rng(seed)
    chunk = max(1, 4_000_000 // n)
    zero = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        u = gen.random((m, n))
        # PARA fires when u < p; survivors never fired
        zero += int(np.count_nonzero((u >= p).all(axis=1)))
        done += m
    return zero


def para_table(ps: Sequence[float], ns: Sequence[int], trials: int, seed: int) -> list[ParaValidation]:
    return [validate_para_model(p, n, trials, seed) for p in ps for n in ns]


def max_rate_trace(geometry: Geometry, victim_row: int, activations: int, bank: int = 0) -> list[Request]:
    """Double-sided trace hammering ``victim_row`` on every available bank cycle."""
    a = read(geometry.row_base_address(bank, victim_row - 1))
    b = read(geometry.row_base_address(bank, victim_row + 1))
    pair = [a, b]
    return pair * (activations // 2) + pair[: activations % 2]


def activations_to_cover_window(w: WindowModel, rows_per_bank: int, victim_row: int) -> int:
    """Trace length (at one activation per t_rc) spanning the victim's first full refresh window."""
    window = w.t_refw / w.k
    last = window * (victim_row + rows_per_bank) / rows_per_bank
    return math.ceil(last / w.t_rc) + 2


@dataclass
class RefreshSweepRow:
    k: int
    max_hammers: int
    activations: int
    flips: int
    periodic_refreshes: int


def refresh_multiplier_sweep(
    w: WindowModel,
    t_min: int,
    ks: Iterable[int],
    rows_per_bank: int = 8,
    victim_row: int = 1,
    activations: int | None = None,
) -> list[RefreshSweepRow]:
    """Hammer a single-cell chip (threshold ``t_min``) at the maximum rate under each multiplier.

    The cell is one-shot (needs a stored one, memory starts all ones), so
    ``flips`` is 0 or 1 per run. One trace is reused for every ``k``; by
    default it is long enough to cover a full victim window at ``k=1``.
    """
    geometry = Geometry(banks=1, rows_per_bank=rows_per_bank, row_size_bits=64)
    cell = VulnerableCell(0, victim_row, 0, t_min, pattern_gate=PatternGate.REQUIRES_STORED_ONE)
    profile = DisturbanceProfile([cell])
    if activations is None:
        activations = activations_to_cover_window(WindowModel(w.t_refw, w.t_rc, 1), rows_per_bank, victim_row)
    trace = max_rate_trace(geometry, victim_row, activations)
    out = []
    for k in ks:
        policy = MitigationPolicy.increased_refresh(k)
        sim = Simulator(geometry, TimingParams(w.t_rc, w.t_refw), policy, profile, fill=b"\xff")
        sim.run(trace)
        rep = sim.report()
        out.append(
            RefreshSweepRow(
                k=k,
                max_hammers=max_hammers_per_window(WindowModel(w.t_refw, w.t_rc, k)),
                activations=rep.activations,
                flips=len(rep.flips),
                periodic_refreshes=rep.periodic_refreshes,
            )
        )
    return out
