"""TrueSkill ratings, match scheduling and the local ranked tournament."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .engine import run_game
from .mapgen import TILINGS, MapGenParams, generate_map
from .protocol import (DEFAULT_INIT_DEADLINE_MS, DEFAULT_TURN_DEADLINE_MS, BotSession,
                       log_path_for, play_sessions)
from .replay import EXTENSION, Replay, write_replay

log = logging.getLogger(__name__)

MU = 25.0
SIGMA = MU / 3
BETA = SIGMA / 2
TAU = SIGMA / 100
DRAW_PROBABILITY = 0.0

DIAMOND_FRACTION = 1 / 32
GOLD_FRACTION = 0.25
SILVER_FRACTION = 0.25


@dataclass(frozen=True)
class Rating:
    mu: float = MU
    sigma: float = SIGMA

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def conservative(self) -> float:
        return self.mu - 3 * self.sigma


def initial_rating() -> Rating:
    return Rating(MU, SIGMA)


def conservative_score(r: Rating) -> float:
    return r.conservative


def win_probability(a: Rating, b: Rating, beta: float = BETA) -> float:
    """P(a finishes ahead of b) under the performance model."""
    denom = math.sqrt(2 * beta**2 + a.sigma**2 + b.sigma**2)
    return float(ndtr((a.mu - b.mu) / denom))


class _Gaussian:
    """Gaussian in natural parameters: precision ``pi`` and precision-mean ``tau``."""

    __slots__ = ("pi", "tau")

    def __init__(self, pi: float = 0.0, tau: float = 0.0):
        self.pi = pi
        self.tau = tau

    @classmethod
    def from_moments(cls, mu: float, var: float) -> "_Gaussian":
        return cls(1 / var, mu / var)

    @property
    def mu(self) -> float:
        return self.tau / self.pi

    @property
    def var(self) -> float:
        return 1 / self.pi

    def __mul__(self, o):
        return _Gaussian(self.pi + o.pi, self.tau + o.tau)

    def __truediv__(self, o):
        return _Gaussian(self.pi - o.pi, self.tau - o.tau)


def _v_w(t: float) -> tuple[float, float]:
    """Mean and variance corrections for a Gaussian truncated to x > 0."""
    v = math.exp(-0.5 * t * t - 0.5 * math.log(2 * math.pi) - float(log_ndtr(t)))
    w = v * (v + t)
    return v, min(w, 1 - 1e-12)


def update_ratings(ratings: Sequence[Rating], ranks: Sequence[int], *,
                   beta: float = BETA, tau: float = TAU,
                   tol: float = 1e-9, max_iter: int = 100) -> list[Rating]:
    """Free-for-all TrueSkill update, one player per team, no draws.

    Expectation propagation on the chain of pairwise performance differences
    between consecutive finishers.  ``ranks`` are finishing positions (lower
    is better) and must be distinct.
    """
    n = len(ratings)
    if n != len(ranks):
        raise ValueError("ratings and ranks differ in length")
    if not 2 <= n <= 6:
        raise ValueError(f"need 2..6 participants, got {n}")
    if len(set(ranks)) != n:
        raise ValueError("ranks must be distinct (draws are not modelled)")

    order = sorted(range(n), key=lambda i: ranks[i])
    prior = [_Gaussian.from_moments(ratings[i].mu, ratings[i].sigma**2 + tau**2) for i in order]
    lik = [_Gaussian.from_moments(g.mu, g.var + beta**2) for g in prior]
    up_left = [_Gaussian() for _ in range(n - 1)]   # sum factor k -> perf k
    up_right = [_Gaussian() for _ in range(n - 1)]  # sum factor k -> perf k+1
    down = [_Gaussian() for _ in range(n - 1)]      # sum factor k -> diff k
    trunc = [_Gaussian() for _ in range(n - 1)]     # truncation k -> diff k

    def perf(i):
        g = lik[i]
        if i < n - 1:
            g = g * up_left[i]
        if i > 0:
            g = g * up_right[i - 1]
        return g

    def visit(k) -> float:
        a = perf(k) / up_left[k]
        b = perf(k + 1) / up_right[k]
        down[k] = _Gaussian.from_moments(a.mu - b.mu, a.var + b.var)
        c = down[k]
        sqrt_c = math.sqrt(c.pi)
        v, w = _v_w(c.tau / sqrt_c)
        marginal = _Gaussian(c.pi / (1 - w), (c.tau + sqrt_c * v) / (1 - w))
        old = trunc[k]
        trunc[k] = marginal / c
        d = trunc[k]
        up_left[k] = _Gaussian.from_moments(d.mu + b.mu, d.var + b.var)
        up_right[k] = _Gaussian.from_moments(a.mu - d.mu, a.var + d.var)
        return max(abs(d.pi - old.pi), abs(d.tau - old.tau))

    for _ in range(max_iter):
        delta = 0.0
        for k in range(n - 1):
            delta = max(delta, visit(k))
        for k in range(n - 2, -1, -1):
            delta = max(delta, visit(k))
        if delta < tol:
            break

    out = [None] * n
    for pos, i in enumerate(order):
        cavity = perf(pos) / lik[pos]
        msg = _Gaussian.from_moments(cavity.mu, cavity.var + beta**2)
        post = prior[pos] * msg
        out[i] = Rating(post.mu, math.sqrt(post.var))
    return out


def assign_tiers(n: int, diamond: float = DIAMOND_FRACTION, gold: float = GOLD_FRACTION,
                 silver: float = SILVER_FRACTION) -> list[str]:
    """Tier labels for positions 1..n: the top ``diamond`` share (at least one
    entrant), then gold and silver shares of the rest, bronze below."""
    if n <= 0:
        return []
    n_diamond = min(n, max(1, math.ceil(n * diamond)))
    rest = n - n_diamond
    n_gold = math.ceil(rest * gold)
    n_silver = math.ceil(rest * silver)
    tiers = (["diamond"] * n_diamond + ["gold"] * n_gold + ["silver"] * n_silver)
    return (tiers + ["bronze"] * n)[:n]


@dataclass
class LeaderboardEntry:
    name: str
    rating: Rating = field(default_factory=initial_rating)
    games: int = 0
    tier: str = ""

    @property
    def score(self) -> float:
        return self.rating.conservative


class Leaderboard:
    COLUMNS = ("rank", "name", "mu", "sigma", "score", "games", "tier")

    def __init__(self, names: Sequence[str] = ()):
        self.entries: dict[str, LeaderboardEntry] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> LeaderboardEntry:
        if name in self.entries:
            raise ValueError(f"duplicate entrant {name!r}")
        self.entries[name] = LeaderboardEntry(name)
        return self.entries[name]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, name):
        return self.entries[name]

    def record(self, names: Sequence[str], ranks: Sequence[int]) -> None:
        old = [self.entries[n].rating for n in names]
        for name, new in zip(names, update_ratings(old, ranks)):
            e = self.entries[name]
            e.rating = new
            e.games += 1

    def ranked(self) -> list[LeaderboardEntry]:
        rows = sorted(self.entries.values(), key=lambda e: (-e.score, -e.games, e.name))
        for e, tier in zip(rows, assign_tiers(len(rows))):
            e.tier = tier
        return rows

    def rows(self) -> list[dict]:
        return [{"rank": i, "name": e.name, "mu": round(e.rating.mu, 6),
                 "sigma": round(e.rating.sigma, 6), "score": round(e.score, 6),
                 "games": e.games, "tier": e.tier}
                for i, e in enumerate(self.ranked(), start=1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.rows(), indent=2) + "\n"

    def write(self, directory: str) -> tuple[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = (os.path.join(directory, "leaderboard.csv"),
                 os.path.join(directory, "leaderboard.json"))
        for path, text in zip(paths, (self.to_csv(), self.to_json())):
            with open(path, "w") as f:
                f.write(text)
        return paths


@dataclass(frozen=True)
class MatchSpec:
    participants: tuple
    map_params: MapGenParams

    def __post_init__(self):
        if len(set(self.participants)) != len(self.participants):
            raise ValueError("participants must be distinct")
        if not 2 <= len(self.participants) <= 6:
            raise ValueError("a match seats 2..6 bots")


def seat_counts(dims: Optional[tuple[int, int]], max_players: int = 6) -> list[int]:
    counts = []
    for k, (cols, rows) in TILINGS.items():
        if k > max_players:
            continue
        if dims is None or (dims[0] % cols == 0 and dims[1] % rows == 0):
            counts.append(k)
    return counts


def schedule_match(pool: Leaderboard, rng: np.random.Generator, *,
                   dims: Optional[tuple[int, int]] = None, max_players: int = 6) -> MatchSpec:
    """Pick a focal bot with probability proportional to sigma, seat the bots
    rated closest to it, and draw a fresh map."""
    if len(pool) < 2:
        raise ValueError("need at least two entrants to schedule a match")
    entries = sorted(pool.entries.values(), key=lambda e: e.name)
    sigmas = np.array([e.rating.sigma for e in entries])
    focal = entries[int(rng.choice(len(entries), p=sigmas / sigmas.sum()))]
    options = [k for k in seat_counts(dims, max_players) if k <= len(entries)]
    if not options:
        raise ValueError(f"no seat count fits map dimensions {dims}")
    k = int(rng.choice(options))
    others = sorted((e for e in entries if e is not focal),
                    key=lambda e: (abs(e.score - focal.score), e.name))
    seated = [focal.name] + [e.name for e in others[:k - 1]]
    seated = [seated[i] for i in rng.permutation(k)]
    seed = int(rng.integers(0, 2**63))
    width, height = dims if dims else (None, None)
    return MatchSpec(tuple(seated), MapGenParams(k, seed, width, height))


@dataclass
class Entrant:
    """A tournament bot: an external command, or an in-process policy factory."""

    name: str
    command: Optional[Sequence[str]] = None
    policy: Optional[Callable] = None


class TournamentError(RuntimeError):
    pass


@dataclass
class MatchResult:
    index: int
    spec: MatchSpec
    replay: Replay
    path: Optional[str]


def play_match(index: int, spec: MatchSpec, entrants: dict, *, replay_dir: Optional[str] = None,
               init_deadline_ms: int = DEFAULT_INIT_DEADLINE_MS,
               turn_deadline_ms: int = DEFAULT_TURN_DEADLINE_MS,
               turn_limit: Optional[int] = None) -> MatchResult:
    params = spec.map_params.resolve()
    gm = generate_map(params)
    bots = [entrants[name] for name in spec.participants]
    if all(b.policy is not None for b in bots):
        policies = [b.policy(params.seed + i) for i, b in enumerate(bots)]
        replay = run_game(gm, policies, turn_limit, names=list(spec.participants),
                          seed=params.seed, generator=params.to_dict())
    else:
        tag = f"game-{index:04d}"
        sessions = [BotSession(b.command, init_deadline_ms=init_deadline_ms,
                               turn_deadline_ms=turn_deadline_ms,
                               log_path=log_path_for(tag, i))
                    for i, b in enumerate(bots, start=1)]
        replay = play_sessions(gm, sessions, turn_limit=turn_limit, seed=params.seed,
                               generator=params.to_dict())
        replay.player_names = list(spec.participants)
    path = None
    if replay_dir:
        path = os.path.join(replay_dir, f"game-{index:04d}-{params.seed}{EXTENSION}")
        write_replay(replay, path)
    return MatchResult(index, spec, replay, path)


def run_tournament(entrants: Sequence[Entrant], n_games: int, *, workers: int = 1, seed: int = 0,
                   out_dir: Optional[str] = None, dims: Optional[tuple[int, int]] = None,
                   max_players: int = 6, round_size: int = 8,
                   init_deadline_ms: int = DEFAULT_INIT_DEADLINE_MS,
                   turn_deadline_ms: int = DEFAULT_TURN_DEADLINE_MS,
                   turn_limit: Optional[int] = None,
                   on_result: Optional[Callable[[MatchResult], None]] = None) -> Leaderboard:
    """Play ``n_games`` rated matches and return the final leaderboard.

    Matches are scheduled in rounds of ``round_size`` from the ratings at the
    start of the round; the round's rating updates are applied in schedule
    order once it finishes, so the games played and the final ratings do not
    depend on ``workers``.
    """
    if len(entrants) < 2:
        raise ValueError("a tournament needs at least two bots")
    by_name = {e.name: e for e in entrants}
    if len(by_name) != len(entrants):
        raise ValueError("entrant names must be unique")
    board = Leaderboard([e.name for e in entrants])
    rng = np.random.default_rng(seed)
    replay_dir = None
    if out_dir:
        replay_dir = os.path.join(out_dir, "replays")
        os.makedirs(replay_dir, exist_ok=True)
    kwargs = dict(replay_dir=replay_dir, init_deadline_ms=init_deadline_ms,
                  turn_deadline_ms=turn_deadline_ms, turn_limit=turn_limit)

    done = 0
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        while done < n_games:
            batch = min(round_size, n_games - done)
            specs = [schedule_match(board, rng, dims=dims, max_players=max_players)
                     for _ in range(batch)]
            if workers <= 1:
                results = [play_match(done + i, s, by_name, **kwargs) for i, s in enumerate(specs)]
            else:
                futures = [pool.submit(play_match, done + i, s, by_name, **kwargs)
                           for i, s in enumerate(specs)]
                results = [f.result() for f in futures]
            if all(_all_failed(r.replay) for r in results):
                reasons = sorted({(r.replay.player_names[e.player - 1], e.reason)
                                  for r in results for e in r.replay.ejections})
                raise TournamentError(f"every bot failed in games {done}..{done + batch - 1}: "
                                      + ", ".join(f"{n} ({why})" for n, why in reasons))
            for r in results:
                board.record(list(r.spec.participants), r.replay.ranks)
                if on_result:
                    on_result(r)
            done += batch
    if out_dir:
        board.write(out_dir)
    return board


def _all_failed(r: Replay) -> bool:
    at_start = {e.player for e in r.ejections if e.turn == 0}
    return len(at_start) == r.num_players
