"""Reference move policies and the standard-stream client that serves them.

A policy is called as ``policy(state, player)`` and returns an ``(k, 3)``
integer array of ``x y dir`` rows, one per piece that moves (STILL is the
default and is left out).  Every policy instance belongs to a single game;
create a fresh one per game.
"""

from __future__ import annotations

import sys
import zlib
from typing import Callable, Optional, TextIO

import numpy as np
from scipy import ndimage

from . import engine
from .engine import GameMap, GameState, MoveSet
from .protocol import decode_frame, decode_init, encode_moves

ATTACK_MARCH_FACTOR = 5
NAP_BUFFER = 2


def shifted(a: np.ndarray, d: int) -> np.ndarray:
    """``out[y, x]`` = value of ``a`` at the site one step from (x, y) in direction ``d``."""
    # same as np.roll by one step, without its generic overhead
    if d == 1:
        return np.concatenate((a[-1:], a[:-1]), axis=0)
    if d == 2:
        return np.concatenate((a[:, 1:], a[:, :1]), axis=1)
    if d == 3:
        return np.concatenate((a[1:], a[:1]), axis=0)
    if d == 4:
        return np.concatenate((a[:, -1:], a[:, :-1]), axis=1)
    raise ValueError(f"direction must be 1..4, got {d}")


def grid_to_triples(directions: np.ndarray, mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask & (directions != 0))
    return np.column_stack((xs, ys, directions[ys, xs])).astype(np.int64)


def dilate(mask: np.ndarray, steps: int) -> np.ndarray:
    """Sites within Manhattan distance ``steps`` of ``mask`` on the torus."""
    out = mask.copy()
    for _ in range(steps):
        grown = out.copy()
        for d in range(1, 5):
            grown |= shifted(out, d)
        out = grown
    return out


def border_distance(sources: np.ndarray) -> np.ndarray:
    """Toroidal taxicab distance from every site to the nearest ``sources`` site."""
    h, w = sources.shape
    if not sources.any():
        return np.full(sources.shape, h + w, dtype=np.int64)
    tiled = np.tile(~sources, (3, 3))
    dist = ndimage.distance_transform_cdt(tiled, metric="taxicab")
    return dist[h:2 * h, w:2 * w]


class Policy:
    name = "Policy"

    def directions(self, state: GameState, player: int,
                   blocked: Optional[np.ndarray] = None) -> np.ndarray:
        """Direction grid for ``player``.  ``blocked`` marks sites the caller
        will not let pieces enter; policies may plan around them."""
        raise NotImplementedError

    def __call__(self, state: GameState, player: int) -> np.ndarray:
        return grid_to_triples(self.directions(state, player), state.owner == player)


class RandomPolicy(Policy):
    """Uniformly random direction for every owned piece."""

    name = "RandomBot"

    def __init__(self, seed: Optional[int] = None):
        self.rng = np.random.default_rng(seed)

    def directions(self, state, player, blocked=None):
        own = state.owner == player
        grid = np.zeros(own.shape, dtype=np.int8)
        grid[own] = self.rng.integers(0, 5, size=int(own.sum()))
        return grid


class StillPolicy(Policy):
    name = "StillBot"

    def __init__(self, seed: Optional[int] = None):
        pass

    def directions(self, state, player, blocked=None):
        return np.zeros(state.owner.shape, dtype=np.int8)


class ExpanderPolicy(Policy):
    """Greedy territory grab.

    Border pieces target the adjacent foreign site with the best
    production/strength ratio and attack once strictly stronger than it.
    Interior pieces wait until they hold five turns of their own production,
    then walk toward the nearest border.
    """

    name = "ExpanderBot"

    def __init__(self, seed: Optional[int] = None):
        pass

    def directions(self, state, player, blocked=None):
        own = state.owner == player
        strength = state.strength
        prod = state.production
        grid = np.zeros(own.shape, dtype=np.int8)
        if not own.any():
            return grid

        open_ = ~own if blocked is None else ~own & ~blocked
        best_ratio = np.full(own.shape, -1.0)
        best_dir = np.zeros(own.shape, dtype=np.int8)
        target_strength = np.zeros(own.shape, dtype=np.int64)
        for d in range(1, 5):
            ns = shifted(strength, d)
            ratio = np.where(shifted(open_, d), shifted(prod, d) / np.maximum(ns, 1), -1.0)
            better = ratio > best_ratio
            best_ratio = np.where(better, ratio, best_ratio)
            best_dir[better] = d
            target_strength = np.where(better, ns, target_strength)

        border = own & (best_ratio >= 0)
        attack = border & (strength > target_strength)
        grid[attack] = best_dir[attack]

        interior = own & ~border
        ready = interior & (strength > 0) & (strength >= ATTACK_MARCH_FACTOR * prod)
        if ready.any():
            dist = border_distance(open_)
            best = dist.copy()
            toward = np.zeros(own.shape, dtype=np.int8)
            for d in range(1, 5):
                nd = np.where(shifted(own, d), shifted(dist, d), np.iinfo(np.int64).max)
                closer = nd < best
                best = np.where(closer, nd, best)
                toward[closer] = d
            grid[ready] = toward[ready]
        return grid


class NapFilter(Policy):
    """Non-aggression pact wrapper: never be the first to attack an opponent.

    Moves whose destination lies within ``NAP_BUFFER`` steps of a piece owned by
    an opponent that has not yet attacked us are replaced by STILL.  Two steps
    (not one) keeps contact from arising when both sides advance in the same
    turn.  An opponent becomes an aggressor, permanently, once one of our
    pieces comes out of a turn weaker than it would have been had no opponent
    existed while that opponent was in range.
    """

    def __init__(self, inner: Policy, buffer: int = NAP_BUFFER):
        self.inner = inner
        self.buffer = buffer
        self.name = "Nap" + inner.name
        self.aggressors: set[int] = set()
        self._prev: Optional[GameState] = None
        self._prev_moves: Optional[np.ndarray] = None

    def _expected(self, prev: GameState, player: int, moves: np.ndarray) -> GameState:
        owner = prev.owner
        others = (owner != player) & (owner != 0)
        gm = GameMap(prev.width, prev.height, prev.production,
                     np.where(others, 0, owner), np.where(others, 0, prev.strength),
                     prev.num_players)
        alone = GameState(gm, prev.turn, frozenset({player}), {})
        return engine.step(alone, {player: MoveSet(player, moves)})

    def observe(self, state: GameState, player: int) -> None:
        prev, moves = self._prev, self._prev_moves
        if prev is None:
            return
        expected = self._expected(prev, player, moves)
        hit = (expected.owner == player) & (
            (state.owner != player) | (state.strength < expected.strength))
        if not hit.any():
            return
        # per damaged site: which opponents could have reached it this turn
        in_range = {}
        for q in range(1, state.num_players + 1):
            if q == player:
                continue
            reach = dilate(prev.owner == q, 2) | dilate(state.owner == q, 1)
            sites = hit & reach
            if sites.any():
                in_range[q] = sites
        if not in_range:
            return
        known = np.zeros(hit.shape, dtype=bool)
        for q in self.aggressors & in_range.keys():
            known |= in_range[q]
        # a hit already explained by a known aggressor implicates nobody new
        for q, sites in in_range.items():
            if q not in self.aggressors and (sites & ~known).any():
                self.aggressors.add(q)

    def directions(self, state, player, blocked=None):
        self.observe(state, player)
        own = state.owner == player
        peaceful = [q for q in state.alive if q != player and q not in self.aggressors]
        zone = None
        if peaceful:
            zone = dilate(np.isin(state.owner, peaceful), self.buffer) & ~own
            if blocked is not None:
                zone |= blocked
        grid = self.inner.directions(state, player, zone).copy()
        grid[~own] = 0
        if zone is not None and grid.any():
            for d in range(1, 5):
                lands_in_zone = shifted(zone, d)
                grid[(grid == d) & lands_in_zone] = 0
        self._prev = state
        self._prev_moves = grid
        return grid


POLICIES: dict[str, Callable[[Optional[int]], Policy]] = {
    "random": RandomPolicy,
    "still": StillPolicy,
    "expander": ExpanderPolicy,
    "nap-expander": lambda seed=None: NapFilter(ExpanderPolicy(seed)),
}


def make_policy(name: str, seed: Optional[int] = None) -> Policy:
    try:
        factory = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return factory(seed)


def serve(policy_name: str, stdin: TextIO = None, stdout: TextIO = None) -> int:
    """Play one game over the wire protocol on standard streams."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    init = [stdin.readline() for _ in range(4)]
    if not all(init):
        return 1
    player, gm = decode_init([line.rstrip("\n") for line in init])
    seed = zlib.crc32("".join(init).encode())
    policy = make_policy(policy_name, seed)
    stdout.write(policy.name + "\n")
    stdout.flush()
    turn = 0
    for line in stdin:
        owner, strength = decode_frame(line, gm.width, gm.height)
        frame = GameMap(gm.width, gm.height, gm.production, owner, strength, gm.num_players)
        counts = np.bincount(owner.ravel(), minlength=gm.num_players + 1)
        alive = frozenset(p for p in range(1, gm.num_players + 1) if counts[p])
        state = GameState(frame, turn, alive, {})
        stdout.write(encode_moves(policy(state, player)) + "\n")
        stdout.flush()
        turn += 1
    return 0
