"""Game state, move sanitization and turn resolution on a toroidal grid.

Coordinates are ``x`` = column and ``y`` = row; grids are stored row-major as
``(height, width)`` numpy arrays.  NORTH decrements ``y``, EAST increments
``x``, both with wrap-around.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

STRENGTH_CAP = 255
MIN_PLAYERS = 2
MAX_PLAYERS = 6


class Direction(enum.IntEnum):
    STILL = 0
    NORTH = 1
    EAST = 2
    SOUTH = 3
    WEST = 4


# (dx, dy) per direction code
OFFSETS = ((0, 0), (0, -1), (1, 0), (0, 1), (-1, 0))


class Location(NamedTuple):
    x: int
    y: int


class Site(NamedTuple):
    owner: int
    strength: int
    production: int


class Move(NamedTuple):
    loc: Location
    dir: Direction


class EngineFault(RuntimeError):
    """The game state broke an engine invariant; the game cannot continue."""


class GameNotOver(RuntimeError):
    pass


def neighbor(loc: Location, direction: int, dims: tuple[int, int]) -> Location:
    width, height = dims
    if not 0 <= direction <= 4:
        raise ValueError(f"direction must be 0..4, got {direction}")
    dx, dy = OFFSETS[direction]
    return Location((loc[0] + dx) % width, (loc[1] + dy) % height)


def default_turn_limit(width: int, height: int) -> int:
    return math.floor(10 * math.sqrt(width * height))


@functools.lru_cache(maxsize=64)
def neighbor_table(width: int, height: int) -> np.ndarray:
    """``table[d, i]``: flat index of the site one step from ``i`` in direction ``d``."""
    ys, xs = np.divmod(np.arange(width * height), width)
    table = np.empty((5, width * height), dtype=np.int64)
    for d, (dx, dy) in enumerate(OFFSETS):
        table[d] = ((ys + dy) % height) * width + (xs + dx) % width
    table.setflags(write=False)
    return table


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GameMap:
    """Grid of sites.  ``owner`` and ``strength`` give the layout at turn 0
    (or at whatever turn this map snapshot was taken)."""

    width: int
    height: int
    production: np.ndarray
    owner: np.ndarray
    strength: np.ndarray
    num_players: int = 0

    def __post_init__(self):
        shape = (self.height, self.width)
        for name in ("production", "owner", "strength"):
            a = _frozen(getattr(self, name), np.int32).reshape(shape)
            object.__setattr__(self, name, a)
        if self.num_players == 0:
            object.__setattr__(self, "num_players", int(self.owner.max()))

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def site(self, loc: Location) -> Site:
        x, y = loc
        return Site(int(self.owner[y, x]), int(self.strength[y, x]),
                    int(self.production[y, x]))

    def __eq__(self, other):
        if not isinstance(other, GameMap):
            return NotImplemented
        return (self.dims == other.dims and self.num_players == other.num_players
                and np.array_equal(self.production, other.production)
                and np.array_equal(self.owner, other.owner)
                and np.array_equal(self.strength, other.strength))


@dataclass(frozen=True, eq=False)
class GameState:
    game_map: GameMap
    turn: int = 0
    alive: frozenset = frozenset()
    elimination_turn: Mapping[int, int] = field(default_factory=dict)

    @classmethod
    def initial(cls, game_map: GameMap) -> "GameState":
        counts = np.bincount(game_map.owner.ravel(), minlength=game_map.num_players + 1)
        alive = frozenset(p for p in range(1, game_map.num_players + 1) if counts[p] > 0)
        gone = {p: 0 for p in range(1, game_map.num_players + 1) if p not in alive}
        return cls(game_map, 0, alive, gone)

    @property
    def width(self) -> int:
        return self.game_map.width

    @property
    def height(self) -> int:
        return self.game_map.height

    @property
    def num_players(self) -> int:
        return self.game_map.num_players

    @property
    def owner(self) -> np.ndarray:
        return self.game_map.owner

    @property
    def strength(self) -> np.ndarray:
        return self.game_map.strength

    @property
    def production(self) -> np.ndarray:
        return self.game_map.production

    def territory(self) -> np.ndarray:
        """Site counts indexed by owner id (index 0 is neutral)."""
        return np.bincount(self.owner.ravel(), minlength=self.num_players + 1)

    def owned_locations(self, player: int) -> list[Location]:
        ys, xs = np.nonzero(self.owner == player)
        return [Location(int(x), int(y)) for x, y in zip(xs, ys)]


@dataclass(frozen=True, eq=False)
class MoveSet:
    """Sanitized directions for one player: a direction per site, STILL
    wherever the player issued nothing (and on sites it does not own)."""

    player: int
    directions: np.ndarray
    dropped: int = 0

    def moves(self) -> list[Move]:
        ys, xs = np.nonzero(self.directions)
        return [Move(Location(int(x), int(y)), Direction(int(self.directions[y, x])))
                for x, y in zip(xs, ys)]

    def triples(self) -> list[list[int]]:
        ys, xs = np.nonzero(self.directions)
        ds = self.directions[ys, xs]
        return [[int(x), int(y), int(d)] for x, y, d in zip(xs, ys, ds)]


def _as_triples(raw) -> np.ndarray:
    if isinstance(raw, np.ndarray):
        return raw.reshape(-1, 3).astype(np.int64)
    rows = []
    for m in raw:
        if len(m) == 2:
            loc, d = m
            rows.append((loc[0], loc[1], d))
        else:
            rows.append(tuple(m))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def validate_moves(raw: Iterable, state: GameState, player: int) -> MoveSet:
    """Keep only well-formed moves on sites ``player`` owns.  Later duplicates
    override earlier ones.  Accepts ``Move`` values or ``(x, y, dir)`` triples."""
    w, h = state.width, state.height
    directions = np.zeros((h, w), dtype=np.int8)
    try:
        a = _as_triples(raw)
    except (TypeError, ValueError, OverflowError):
        log.debug("player %d sent unparseable moves", player)
        return MoveSet(player, directions, dropped=len(raw) if hasattr(raw, "__len__") else 0)
    total = len(a)
    if total == 0:
        return MoveSet(player, directions, 0)
    x, y, d = a[:, 0], a[:, 1], a[:, 2]
    ok = (x >= 0) & (x < w) & (y >= 0) & (y < h) & (d >= 0) & (d <= 4)
    x, y, d = x[ok], y[ok], d[ok]
    flat = y * w + x
    mine = state.owner.ravel()[flat] == player
    flat, d = flat[mine], d[mine]
    # last directive per site wins
    rev_flat = flat[::-1]
    uniq, first_in_rev = np.unique(rev_flat, return_index=True)
    directions.ravel()[uniq] = d[::-1][first_in_rev]
    return MoveSet(player, directions, dropped=int(total - len(uniq)))


def _kernel():
    from ._kernel import resolve_turn
    return resolve_turn


_FAULTS = {1: "strength out of range", 2: "unknown owner", 3: "contested site"}


def step(state: GameState, moves_by_player: Optional[Mapping[int, MoveSet]] = None) -> GameState:
    """Resolve one simultaneous turn.

    Order: production for still pieces, movement (vacated sites keep a zero
    piece), same-owner merging, damage, simultaneous removal, elimination.
    Strength is capped at 255 after production and after merging.
    """
    gm = state.game_map
    w, h = gm.width, gm.height
    owner = gm.owner.ravel()
    dirs = np.zeros(w * h, dtype=np.int8)
    if moves_by_player:
        for p, ms in moves_by_player.items():
            if p in state.alive:
                np.copyto(dirs, ms.directions.ravel(), where=owner == p)
    new_owner = np.empty(w * h, dtype=np.int32)
    new_strength = np.empty(w * h, dtype=np.int32)
    status = _kernel()(owner, gm.strength.ravel(), gm.production.ravel(), dirs,
                       neighbor_table(w, h), gm.num_players, new_owner, new_strength)
    if status:
        raise EngineFault(f"turn {state.turn}: {_FAULTS.get(status, status)}")

    turn = state.turn + 1
    counts = np.bincount(new_owner, minlength=gm.num_players + 1)
    alive = state.alive
    eliminated = state.elimination_turn
    dead = [p for p in alive if counts[p] == 0]
    if dead:
        alive = alive.difference(dead)
        eliminated = {**eliminated, **{p: turn for p in dead}}
    new_map = GameMap.__new__(GameMap)
    object.__setattr__(new_map, "width", w)
    object.__setattr__(new_map, "height", h)
    object.__setattr__(new_map, "production", gm.production)
    object.__setattr__(new_map, "owner", _readonly(new_owner.reshape(h, w)))
    object.__setattr__(new_map, "strength", _readonly(new_strength.reshape(h, w)))
    object.__setattr__(new_map, "num_players", gm.num_players)
    return GameState(new_map, turn, alive, eliminated)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def eject(state: GameState, player: int) -> GameState:
    """Remove a player: its sites turn neutral and keep their strengths."""
    gm = state.game_map
    owner = np.where(gm.owner == player, 0, gm.owner)
    new_map = replace(gm, owner=owner, strength=gm.strength.copy())
    eliminated = dict(state.elimination_turn)
    eliminated.setdefault(player, state.turn)
    return GameState(new_map, state.turn, state.alive - {player}, eliminated)


def is_over(state: GameState, turn_limit: Optional[int] = None) -> bool:
    if turn_limit is None:
        turn_limit = default_turn_limit(state.width, state.height)
    return len(state.alive) <= 1 or state.turn >= turn_limit


def final_ranks(state: GameState, turn_limit: Optional[int] = None) -> list[tuple[int, int]]:
    """``[(player, rank), ...]`` best first.  Survivors rank above eliminated
    players; survivors by territory, then strength, then lower id;
    eliminated players by later elimination, then lower id."""
    if not is_over(state, turn_limit):
        raise GameNotOver(f"game still running at turn {state.turn}")
    territory = state.territory()
    owner = state.owner.ravel()
    total = np.bincount(owner, weights=state.strength.ravel(),
                        minlength=state.num_players + 1)
    survivors = sorted(state.alive, key=lambda p: (-territory[p], -total[p], p))
    dead = sorted(state.elimination_turn, key=lambda p: (-state.elimination_turn[p], p))
    order = survivors + dead
    return [(p, r) for r, p in enumerate(order, start=1)]


Policy = Callable[[GameState, int], Sequence]


def run_game(game_map: GameMap, policies: Sequence[Policy], turn_limit: Optional[int] = None,
             *, names: Optional[Sequence[str]] = None, seed: Optional[int] = None,
             generator: Optional[dict] = None):
    """Play a full game and return its :class:`~torus_arena.replay.Replay`.

    ``policies[i]`` moves for player ``i + 1``.  A policy that raises is
    ejected (reason taken from ``exc.reason`` when present) and the game goes
    on without it.  Policies may define ``begin_turn(state, player)``, called
    for every live player before any policy is asked for moves.
    """
    from .replay import Ejection, Replay

    n = len(policies)
    if not MIN_PLAYERS <= n <= MAX_PLAYERS:
        raise ValueError(f"need {MIN_PLAYERS}..{MAX_PLAYERS} players, got {n}")
    if game_map.num_players != n:
        raise ValueError(f"map is for {game_map.num_players} players, got {n} policies")
    if turn_limit is None:
        turn_limit = default_turn_limit(game_map.width, game_map.height)
    names = list(names) if names is not None else [f"player{p}" for p in range(1, n + 1)]

    state = GameState.initial(game_map)
    owners = [state.owner]
    strengths = [state.strength]
    moves_log = []
    ejections = []
    while not is_over(state, turn_limit):
        players = sorted(state.alive)
        failed = {}
        for p in players:
            hook = getattr(policies[p - 1], "begin_turn", None)
            if hook is None:
                continue
            try:
                hook(state, p)
            except Exception as exc:  # any bot failure ejects that bot only
                failed[p] = exc
        movesets = {}
        for p in players:
            if p in failed:
                continue
            try:
                raw = policies[p - 1](state, p)
                movesets[p] = validate_moves(raw, state, p)
            except Exception as exc:
                failed[p] = exc
        for p, exc in sorted(failed.items()):
            reason = getattr(exc, "reason", "error")
            log.info("ejecting player %d at turn %d: %s (%s)", p, state.turn, reason, exc)
            ejections.append(Ejection(p, state.turn, reason))
            state = eject(state, p)
        moves_log.append([movesets[p].triples() if p in movesets else []
                          for p in range(1, n + 1)])
        state = step(state, movesets)
        owners.append(state.owner)
        strengths.append(state.strength)

    ranks = dict(final_ranks(state, turn_limit))
    return Replay(
        width=game_map.width, height=game_map.height, num_players=n,
        player_names=names, seed=seed, generator=generator,
        productions=game_map.production,
        owners=np.stack(owners), strengths=np.stack(strengths),
        moves=moves_log, ranks=[ranks[p] for p in range(1, n + 1)],
        ejections=ejections,
    )
