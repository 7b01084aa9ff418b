"""Replay files (``.hltr``) and the analytics computed from them.

A replay stores every frame in full, so any transition can be re-executed
through :func:`torus_arena.engine.step` and compared byte for byte.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import engine
from .mapgen import gini_coefficient

VERSION = 1
EXTENSION = ".hltr"
EJECT_REASONS = ("timeout", "closed", "malformed", "error")


class ReplayError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class Ejection(NamedTuple):
    player: int
    turn: int
    reason: str


@dataclass(eq=False)
class Replay:
    width: int
    height: int
    num_players: int
    player_names: list
    productions: np.ndarray
    owners: np.ndarray      # (frames, height, width)
    strengths: np.ndarray   # (frames, height, width)
    moves: list             # [turn][player - 1] -> [[x, y, dir], ...]
    ranks: list             # ranks[player - 1]
    ejections: list = field(default_factory=list)
    seed: Optional[int] = None
    generator: Optional[dict] = None
    version: int = VERSION

    @property
    def num_frames(self) -> int:
        return len(self.owners)

    @property
    def num_turns(self) -> int:
        return len(self.moves)

    def game_map(self) -> engine.GameMap:
        return engine.GameMap(self.width, self.height, self.productions,
                              self.owners[0], self.strengths[0], self.num_players)

    def state_at(self, t: int) -> engine.GameState:
        if not 0 <= t < self.num_frames:
            raise IndexError(f"frame {t} out of range 0..{self.num_frames - 1}")
        gm = engine.GameMap(self.width, self.height, self.productions,
                            self.owners[t], self.strengths[t], self.num_players)
        counts = np.bincount(gm.owner.ravel(), minlength=self.num_players + 1)
        alive = frozenset(p for p in range(1, self.num_players + 1) if counts[p])
        return engine.GameState(gm, t, alive, {})

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "width": self.width,
            "height": self.height,
            "num_players": self.num_players,
            "player_names": list(self.player_names),
            "seed": self.seed,
            "generator": self.generator,
            "productions": self.productions.ravel().tolist(),
            "frames": [{"owners": o.ravel().tolist(), "strengths": s.ravel().tolist()}
                       for o, s in zip(self.owners, self.strengths)],
            "moves": self.moves,
            "ranks": list(self.ranks),
            "ejections": [{"player": e.player, "turn": e.turn, "reason": e.reason}
                          for e in self.ejections],
        }

    def __eq__(self, other):
        if not isinstance(other, Replay):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def write_replay(r: Replay, path) -> None:
    text = json.dumps(r.to_dict(), separators=(",", ":"))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
        f.write("\n")
    os.replace(tmp, path)


def _require(doc, key, kind, path="$"):
    if key not in doc:
        raise ReplayError(f"{path}.{key}", "missing field")
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ReplayError(f"{path}.{key}", f"expected integer, got {type(value).__name__}")
    if kind is not int and not isinstance(value, kind):
        raise ReplayError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _int_grid(values, n, path, lo, hi):
    if not isinstance(values, list) or len(values) != n:
        raise ReplayError(path, f"expected list of {n} integers")
    try:
        a = np.array(values)
    except (TypeError, ValueError, OverflowError):
        raise ReplayError(path, "non-integer entry") from None
    if a.shape != (n,) or (n and a.dtype.kind not in "iu"):
        raise ReplayError(path, "non-integer entry")
    if len(a) and (a.min() < lo or a.max() > hi):
        raise ReplayError(path, f"value outside {lo}..{hi}")
    return a.astype(np.int32)


def replay_from_dict(doc) -> Replay:
    if not isinstance(doc, dict):
        raise ReplayError("$", "expected an object")
    version = _require(doc, "version", int)
    if version != VERSION:
        raise ReplayError("$.version", f"unsupported version {version}")
    w = _require(doc, "width", int)
    h = _require(doc, "height", int)
    p = _require(doc, "num_players", int)
    if w < 1 or h < 1:
        raise ReplayError("$.width", "dimensions must be positive")
    if not engine.MIN_PLAYERS <= p <= engine.MAX_PLAYERS:
        raise ReplayError("$.num_players", f"must be {engine.MIN_PLAYERS}..{engine.MAX_PLAYERS}")
    names = _require(doc, "player_names", list)
    if len(names) != p or not all(isinstance(s, str) for s in names):
        raise ReplayError("$.player_names", f"expected {p} strings")
    if "seed" not in doc:
        raise ReplayError("$.seed", "missing field")
    seed = doc["seed"]
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ReplayError("$.seed", "expected integer or null")
    if "generator" not in doc:
        raise ReplayError("$.generator", "missing field")
    generator = doc["generator"]
    if generator is not None and not isinstance(generator, dict):
        raise ReplayError("$.generator", "expected object or null")

    n = w * h
    prod = _int_grid(_require(doc, "productions", list), n, "$.productions", 0, 2**31 - 1)
    frames = _require(doc, "frames", list)
    if not frames:
        raise ReplayError("$.frames", "at least one frame required")
    owners = np.empty((len(frames), h, w), dtype=np.int32)
    strengths = np.empty((len(frames), h, w), dtype=np.int32)
    for t, fr in enumerate(frames):
        fp = f"$.frames[{t}]"
        if not isinstance(fr, dict):
            raise ReplayError(fp, "expected an object")
        owners[t] = _int_grid(_require(fr, "owners", list, fp), n, f"{fp}.owners", 0, p).reshape(h, w)
        strengths[t] = _int_grid(_require(fr, "strengths", list, fp), n, f"{fp}.strengths",
                                 0, engine.STRENGTH_CAP).reshape(h, w)

    moves = _require(doc, "moves", list)
    if len(moves) != len(frames) - 1:
        raise ReplayError("$.moves", f"expected {len(frames) - 1} turns, got {len(moves)}")
    for t, turn in enumerate(moves):
        if not isinstance(turn, list) or len(turn) != p:
            raise ReplayError(f"$.moves[{t}]", f"expected {p} per-player lists")
        for i, mv in enumerate(turn):
            if not isinstance(mv, list):
                raise ReplayError(f"$.moves[{t}][{i}]", "expected a list")
            for k, triple in enumerate(mv):
                if (not isinstance(triple, list) or len(triple) != 3
                        or not all(type(v) is int for v in triple)):
                    raise ReplayError(f"$.moves[{t}][{i}][{k}]", "expected [x, y, dir]")
                x, y, d = triple
                if not (0 <= x < w and 0 <= y < h and 1 <= d <= 4):
                    raise ReplayError(f"$.moves[{t}][{i}][{k}]", "move out of range")

    ranks = _require(doc, "ranks", list)
    if sorted(ranks) != list(range(1, p + 1)):
        raise ReplayError("$.ranks", f"not a permutation of 1..{p}")
    ejections = []
    for k, e in enumerate(_require(doc, "ejections", list)):
        ep = f"$.ejections[{k}]"
        if not isinstance(e, dict):
            raise ReplayError(ep, "expected an object")
        player = _require(e, "player", int, ep)
        turn = _require(e, "turn", int, ep)
        reason = _require(e, "reason", str, ep)
        if not 1 <= player <= p:
            raise ReplayError(f"{ep}.player", "unknown player")
        if reason not in EJECT_REASONS:
            raise ReplayError(f"{ep}.reason", f"unknown reason {reason!r}")
        ejections.append(Ejection(player, turn, reason))

    return Replay(width=w, height=h, num_players=p, player_names=names,
                  productions=prod.reshape(h, w), owners=owners, strengths=strengths,
                  moves=moves, ranks=ranks, ejections=ejections, seed=seed,
                  generator=generator, version=version)


def read_replay(path) -> Replay:
    with open(path) as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReplayError("$", f"not a valid document ({exc.msg} at char {exc.pos})") from None
    return replay_from_dict(doc)


@dataclass(frozen=True)
class FrameStats:
    """Per-owner aggregates; index 0 is neutral."""

    turn: int
    territory: list
    strength: list
    production: list


def frame_stats(r: Replay, t: int) -> FrameStats:
    if not 0 <= t < r.num_frames:
        raise IndexError(f"frame {t} out of range 0..{r.num_frames - 1}")
    owner = r.owners[t].ravel()
    k = r.num_players + 1
    territory = np.bincount(owner, minlength=k)
    strength = np.bincount(owner, weights=r.strengths[t].ravel(), minlength=k)
    production = np.bincount(owner, weights=r.productions.ravel(), minlength=k)
    return FrameStats(t, territory.astype(int).tolist(), strength.astype(int).tolist(),
                      production.astype(int).tolist())


def branching_log10(piece_count: int) -> float:
    """log10 of the number of joint move sets for ``piece_count`` pieces (5 choices each)."""
    if piece_count < 0:
        raise ValueError("piece count must be non-negative")
    return piece_count * math.log10(5)


def replay_gini(r: Replay, decimals: Optional[int] = None) -> float:
    g = gini_coefficient(r.productions.ravel())
    return round(g, decimals) if decimals is not None else g


def verify_replay(r: Replay) -> list[int]:
    """Re-execute every recorded transition; return the turns whose
    re-executed frame differs from the stored one (empty means verified)."""
    bad = []
    ejected = {}
    for e in r.ejections:
        ejected.setdefault(e.turn, []).append(e.player)
    for t in range(r.num_turns):
        state = r.state_at(t)
        for p in ejected.get(t, ()):
            state = engine.eject(state, p)
        movesets = {}
        for i, triples in enumerate(r.moves[t]):
            p = i + 1
            if p in state.alive:
                movesets[p] = engine.validate_moves(triples, state, p)
        try:
            nxt = engine.step(state, movesets)
        except engine.EngineFault:
            bad.append(t)
            continue
        if not (np.array_equal(nxt.owner, r.owners[t + 1])
                and np.array_equal(nxt.strength, r.strengths[t + 1])):
            bad.append(t)
    return bad


def check_invariants(r: Replay) -> list[str]:
    """Engine invariants on every stored frame; returns violation messages."""
    problems = []
    n = r.width * r.height
    for t in range(r.num_frames):
        s, o = r.strengths[t], r.owners[t]
        if s.min() < 0 or s.max() > engine.STRENGTH_CAP:
            problems.append(f"frame {t}: strength outside 0..255")
        if o.min() < 0 or o.max() > r.num_players:
            problems.append(f"frame {t}: unknown owner")
        if np.bincount(o.ravel(), minlength=r.num_players + 1).sum() != n:
            problems.append(f"frame {t}: ownership does not partition the grid")
    if not np.array_equal(np.asarray(r.productions).shape, (r.height, r.width)):
        problems.append("production grid has wrong shape")
    if sorted(r.ranks) != list(range(1, r.num_players + 1)):
        problems.append("ranks are not a permutation")
    return problems
