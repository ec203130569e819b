"""Synthetic CDR stream generator with calibratable temporal-edge statistics.

The generator simulates a pool of pair relationships. Each relationship is
born active; afterwards its monthly activity follows a two-state Markov
process (active -> active with probability ``tie_persistence``, dormant ->
active with a fixed reactivation probability) with a small fixed permanent
death rate. New relationships are born each month at ``novel_tie_rate`` per
node. An active relationship in a month emits at least one event, with
call/SMS counts drawn from an overdispersed negative binomial whose mean
comes from the endpoints' demographic activity profiles, boosted in
December.

Partner choice is degree biased and prefers geographically close nodes so
that multi-hop subgraphs are nontrivial.

Calibration tunes (tie_persistence, novel_tie_rate) by coordinate bisection
until the tie process hits the target (novelty, reoccurrence, surprise)
indices. The activity transitions consume one uniform per relationship per
month regardless of state, so comparisons across persistence values use
common random numbers and reoccurrence is monotone in persistence.
"""

from __future__ import annotations

import calendar
import datetime as _dt
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeding
from .graphstore import EventRecord, NodeAttr

# Fixed process constants; only persistence and novelty rate are calibrated.
REACTIVATION_RATE = 0.08
DEATH_RATE = 0.006
NB_DISPERSION = 1.5
INITIAL_CITY_PREFERENCE = 0.8

CITY_CENTERS = ((60.2, 24.9), (61.5, 23.8), (65.0, 25.5))


def default_profiles() -> dict:
    """Mean monthly (call, sms) rates per pair, by gender and age band.

    Younger groups communicate more, and SMS volume falls off with age
    faster than calls.
    """
    bands = {
        (18, 24): (8.0, 6.0),
        (25, 44): (6.0, 3.0),
        (45, 65): (4.0, 1.5),
    }
    profiles = {}
    for (lo, hi), (c, s) in bands.items():
        profiles[f"A:{lo}-{hi}"] = (c, s)
        profiles[f"B:{lo}-{hi}"] = (c * 1.1, s * 0.9)
    return profiles


@dataclass
class GenConfig:
    n_nodes: int = 2000
    n_months: int = 36
    mean_degree: float = 3.5
    tie_persistence: float = 0.988
    novel_tie_rate: float = 0.009
    december_boost: float = 1.5
    profiles: dict = field(default_factory=default_profiles)
    start_year: int = 2007
    start_month: int = 1
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_months < 2:
            raise ValueError("n_months must be >= 2")
        if not (0.0 <= self.tie_persistence <= 1.0):
            raise ValueError("tie_persistence must be in [0, 1]")
        if self.novel_tie_rate < 0.0:
            raise ValueError("novel_tie_rate must be >= 0")
        if self.mean_degree < 0.0 or self.december_boost < 0.0:
            raise ValueError("rates must be >= 0")
        for key, (c, s) in self.profiles.items():
            if c < 0 or s < 0:
                raise ValueError(f"profile {key} has a negative rate")


@dataclass(frozen=True)
class CalibrationTarget:
    novelty: float = 0.05
    reoccurrence: float = 0.78
    surprise: float = 0.03
    novelty_tol: float = 0.02
    reoccurrence_tol: float = 0.05
    surprise_tol: float = 0.02


@dataclass
class CalibrationResult:
    config: GenConfig
    achieved: tuple  # (novelty, reoccurrence, surprise)
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# Node and relationship structure
# ---------------------------------------------------------------------------


def _sample_nodes(config: GenConfig, rng: np.random.Generator) -> dict:
    n = config.n_nodes
    # young-skewed age mixture covering every stratification group
    young = rng.integers(18, 31, size=n)
    anyage = rng.integers(18, 66, size=n)
    ages = np.where(rng.random(n) < 0.35, young, anyage)
    genders = np.where(rng.random(n) < 0.5, "A", "B")
    city = rng.integers(0, len(CITY_CENTERS), size=n)
    lat = np.array([CITY_CENTERS[c][0] for c in city]) + rng.normal(0, 0.15, n)
    lon = np.array([CITY_CENTERS[c][1] for c in city]) + rng.normal(0, 0.25, n)
    attrs = {
        i: NodeAttr(int(ages[i]), str(genders[i]), round(float(lat[i]), 5), round(float(lon[i]), 5))
        for i in range(n)
    }
    return attrs, city


def _profile_key(attr: NodeAttr) -> str:
    for lo, hi in ((18, 24), (25, 44), (45, 65)):
        if lo <= attr.age <= hi:
            return f"{attr.gender}:{lo}-{hi}"
    return f"{attr.gender}:45-65"


class _PairSampler:
    """Degree-biased attachment among (mostly) same-city nodes."""

    def __init__(self, n: int, city, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.degree = np.zeros(n, dtype=np.int64)
        self.existing: set = set()
        self.by_city: dict = {}
        for i, c in enumerate(city):
            self.by_city.setdefault(int(c), []).append(i)
        self.city = city

    def _pick(self, pool) -> int:
        pool = np.asarray(pool)
        w = self.degree[pool] + 1.0
        return int(self.rng.choice(pool, p=w / w.sum()))

    def sample_new(self, first: int | None = None):
        for _ in range(64):
            a = self._pick(np.arange(self.n)) if first is None else first
            if self.rng.random() < INITIAL_CITY_PREFERENCE:
                pool = self.by_city[int(self.city[a])]
            else:
                pool = np.arange(self.n)
            b = self._pick(pool)
            if a == b:
                continue
            pair = (min(a, b), max(a, b))
            if pair in self.existing:
                continue
            self.existing.add(pair)
            self.degree[a] += 1
            self.degree[b] += 1
            return pair
        return None


@dataclass
class _TieProcess:
    """Birth months and per-month active pair indices for the relationship pool."""

    pairs: list  # (i, j) per relationship
    born: np.ndarray  # birth month per relationship
    active_by_month: list  # per month: array of relationship indices


def _simulate_ties(config: GenConfig, city, structure_rng, state_rng) -> _TieProcess:
    n, T = config.n_nodes, config.n_months
    sampler = _PairSampler(n, city, structure_rng)
    pairs = []
    n_initial = max(n // 2, round(n * config.mean_degree / 2.0))
    for _ in range(n_initial):
        p = sampler.sample_new()
        if p is not None:
            pairs.append(p)
    # guarantee everyone has at least one relationship
    lonely = [i for i in range(n) if sampler.degree[i] == 0]
    for i in lonely:
        p = sampler.sample_new(first=i)
        if p is not None:
            pairs.append(p)

    # pre-draw monthly birth counts so state draws stay aligned across
    # persistence values (common random numbers)
    births = structure_rng.binomial(n, min(1.0, config.novel_tie_rate), size=T)
    births[0] = 0
    born = [1] * len(pairs)
    active = np.ones(len(pairs), dtype=bool)
    dead = np.zeros(len(pairs), dtype=bool)
    active_by_month = []
    p_stay, r_back, p_die = config.tie_persistence, REACTIVATION_RATE, DEATH_RATE
    for t in range(1, T + 1):
        if t > 1:
            u_die = state_rng.random(len(pairs))
            u_move = state_rng.random(len(pairs))
            dead |= u_die < p_die
            nxt = np.where(active, u_move < p_stay, u_move < r_back)
            active = nxt & ~dead
            for _ in range(births[t - 1]):
                p = sampler.sample_new()
                if p is None:
                    continue
                pairs.append(p)
                born.append(t)
                dead = np.append(dead, False)
                active = np.append(active, True)
        active_by_month.append(np.flatnonzero(active).copy())
    return _TieProcess(
        pairs=pairs, born=np.asarray(born), active_by_month=active_by_month
    )


def _tie_indices(ties: _TieProcess, n_months: int, cutoff: int):
    """(novelty, reoccurrence, surprise) of the presence process.

    Matches the tempometrics definitions: since both directed mirrors of a
    pair appear together, undirected set algebra gives identical ratios.
    """
    first_seen: dict = {}
    terms = []
    dev, test = set(), set()
    for t, idx in enumerate(ties.active_by_month, start=1):
        if len(idx) == 0:
            continue
        novel = sum(1 for i in idx if i not in first_seen)
        terms.append(novel / len(idx))
        for i in idx:
            first_seen.setdefault(i, t)
        (dev if t <= cutoff else test).update(int(i) for i in idx)
    nov = sum(terms) / len(terms) if terms else 0.0
    reocc = len(dev & test) / len(dev) if dev else 0.0
    surp = len(test - dev) / len(test) if test else 0.0
    return nov, reocc, surp


def measure_tie_indices(config: GenConfig, cutoff: int | None = None):
    """Simulate only the tie process and report its three indices."""
    config.validate()
    structure_rng = seeding.stream(config.rng_seed, "synth-structure")
    state_rng = seeding.stream(config.rng_seed, "synth-state")
    node_rng = seeding.stream(config.rng_seed, "synth-nodes")
    _, city = _sample_nodes(config, node_rng)
    ties = _simulate_ties(config, city, structure_rng, state_rng)
    if cutoff is None:
        cutoff = round(config.n_months * 30 / 36)
    return _tie_indices(ties, config.n_months, cutoff)


# ---------------------------------------------------------------------------
# Event emission
# ---------------------------------------------------------------------------


def _month_epoch_bounds(config: GenConfig, t: int):
    total = config.start_year * 12 + (config.start_month - 1) + (t - 1)
    year, month = total // 12, total % 12 + 1
    start = _dt.datetime(year, month, 1, tzinfo=_dt.timezone.utc).timestamp()
    days = calendar.monthrange(year, month)[1]
    return int(start), days * 86400, month


def _nb_counts(rng, mean, size):
    mean = np.maximum(mean, 1e-9)
    k = NB_DISPERSION
    return rng.negative_binomial(k, k / (k + mean), size=size)


def generate(config: GenConfig):
    """Generate the synthetic event stream and node attribute table.

    Deterministic given ``config.rng_seed``. Returns (events, attrs) where
    events is a list of EventRecord and attrs maps node id to NodeAttr.
    """
    config.validate()
    structure_rng = seeding.stream(config.rng_seed, "synth-structure")
    state_rng = seeding.stream(config.rng_seed, "synth-state")
    node_rng = seeding.stream(config.rng_seed, "synth-nodes")
    event_rng = seeding.stream(config.rng_seed, "synth-events")

    attrs, city = _sample_nodes(config, node_rng)
    ties = _simulate_ties(config, city, structure_rng, state_rng)

    pair_rates = []
    pair_split = []
    for i, j in ties.pairs:
        ci, si = config.profiles[_profile_key(attrs[i])]
        cj, sj = config.profiles[_profile_key(attrs[j])]
        pair_rates.append(((ci + cj) / 2.0, (si + sj) / 2.0))
        pair_split.append(event_rng.beta(5.0, 5.0))
    pair_rates = np.asarray(pair_rates)
    pair_split = np.asarray(pair_split)

    events = []
    for t in range(1, config.n_months + 1):
        idx = ties.active_by_month[t - 1]
        if len(idx) == 0:
            continue
        start, span, cal_month = _month_epoch_bounds(config, t)
        boost = config.december_boost if cal_month == 12 else 1.0
        calls = _nb_counts(event_rng, pair_rates[idx, 0] * boost, len(idx))
        sms = _nb_counts(event_rng, pair_rates[idx, 1] * boost, len(idx))
        # an active tie must leave a trace this month
        silent = (calls + sms) == 0
        calls = calls + silent.astype(np.int64)
        calls_fwd = event_rng.binomial(calls, pair_split[idx])
        sms_fwd = event_rng.binomial(sms, pair_split[idx])
        for pos, rel in enumerate(idx):
            i, j = ties.pairs[rel]
            for kind, fwd, total in (
                ("call", int(calls_fwd[pos]), int(calls[pos])),
                ("sms", int(sms_fwd[pos]), int(sms[pos])),
            ):
                if total == 0:
                    continue
                stamps = start + event_rng.integers(0, span, size=total)
                for e in range(total):
                    ego, alter = (i, j) if e < fwd else (j, i)
                    events.append(
                        EventRecord(ego, alter, int(stamps[e]), kind, "out")
                    )
    return events, attrs


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def _within(achieved, target: CalibrationTarget) -> bool:
    nov, reocc, surp = achieved
    return (
        abs(nov - target.novelty) <= target.novelty_tol
        and abs(reocc - target.reoccurrence) <= target.reoccurrence_tol
        and abs(surp - target.surprise) <= target.surprise_tol
    )


def calibrate(config: GenConfig, target: CalibrationTarget, budget: int = 24,
              cutoff: int | None = None) -> CalibrationResult:
    """Coordinate bisection over (tie_persistence, novel_tie_rate).

    Reoccurrence is monotone increasing in persistence and novelty is
    monotone increasing in the novel-tie rate, so each knob is bisected
    against its own index in alternating rounds; surprise is checked
    against the joint result. Returns the best configuration found with a
    converged flag; an exhausted budget yields the best-so-far flagged
    not converged.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    config.validate()

    def score(cfg):
        return measure_tie_indices(cfg, cutoff=cutoff)

    current = config
    achieved = score(current)
    iterations = 1
    if _within(achieved, target):
        return CalibrationResult(current, achieved, True, iterations)

    best, best_ach = current, achieved

    def gap(ach):
        return (
            abs(ach[0] - target.novelty) / max(target.novelty_tol, 1e-9)
            + abs(ach[1] - target.reoccurrence) / max(target.reoccurrence_tol, 1e-9)
            + abs(ach[2] - target.surprise) / max(target.surprise_tol, 1e-9)
        )

    p_lo, p_hi = 0.5, 0.9999
    r_lo, r_hi = 1e-4, 0.2
    while iterations < budget:
        # fix reoccurrence with persistence
        p_mid = (p_lo + p_hi) / 2.0
        trial = replace(current, tie_persistence=p_mid)
        ach = score(trial)
        iterations += 1
        if ach[1] < target.reoccurrence:
            p_lo = p_mid
        else:
            p_hi = p_mid
        current = trial
        if gap(ach) < gap(best_ach):
            best, best_ach = trial, ach
        if _within(ach, target):
            return CalibrationResult(trial, ach, True, iterations)
        if iterations >= budget:
            break
        # fix novelty and surprise with the novel-tie rate; both indices
        # rise with the rate, so steer into the band between novelty's
        # lower tolerance and surprise's upper tolerance
        r_mid = (r_lo + r_hi) / 2.0
        trial = replace(current, novel_tie_rate=r_mid)
        ach = score(trial)
        iterations += 1
        if ach[2] > target.surprise + target.surprise_tol:
            r_hi = r_mid
        elif ach[0] < target.novelty - target.novelty_tol:
            r_lo = r_mid
        elif ach[0] > target.novelty + target.novelty_tol:
            r_hi = r_mid
        else:
            r_lo = max(r_lo, r_mid * 0.9)
            r_hi = min(r_hi, r_mid * 1.1)
        current = trial
        if gap(ach) < gap(best_ach):
            best, best_ach = trial, ach
        if _within(ach, target):
            return CalibrationResult(trial, ach, True, iterations)
    return CalibrationResult(best, best_ach, False, iterations)
