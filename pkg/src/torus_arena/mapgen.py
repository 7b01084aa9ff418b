"""Seeded map generation with translation-symmetric player panels.

The map is a grid of identical panels, one per player.  Each panel holds
periodic value noise, so tiling it gives a seamless torus and every player
sees exactly the same neighbourhood around its start site.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .engine import STRENGTH_CAP, GameMap

MIN_SIZE = 20
MAX_SIZE = 50
MAX_PRODUCTION = 15
OCTAVES = 3
LATTICE_CELL = 8
GAMMA_RANGE = (1.0, 1.8)
STRENGTH_PER_PRODUCTION = 12
STRENGTH_JITTER = 32

# players -> (panel columns, panel rows)
TILINGS = {2: (2, 1), 3: (3, 1), 4: (2, 2), 5: (5, 1), 6: (3, 2)}


class MapParamError(ValueError):
    pass


@dataclass(frozen=True)
class MapGenParams:
    players: int
    seed: int
    width: Optional[int] = None
    height: Optional[int] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.players not in TILINGS:
            raise MapParamError(f"players must be 2..6, got {self.players}")
        if not 0 <= self.seed < 2**64:
            raise MapParamError("seed must be a non-negative 64-bit integer")
        if (self.width is None) != (self.height is None):
            raise MapParamError("give both width and height or neither")
        if self.gamma is not None and self.gamma < 1:
            raise MapParamError("gamma must be >= 1")
        if self.width is not None:
            cols, rows = TILINGS[self.players]
            for name, size, k in (("width", self.width, cols), ("height", self.height, rows)):
                if not MIN_SIZE <= size <= MAX_SIZE:
                    raise MapParamError(f"{name} {size} outside {MIN_SIZE}..{MAX_SIZE}")
                if size % k:
                    raise MapParamError(
                        f"{name} {size} is not a multiple of {k} ({self.players}-player tiling)")

    def resolve(self) -> "MapGenParams":
        """Fill in drawn dimensions and gamma; the result regenerates the same map."""
        dims_rng, gamma_rng, _ = _streams(self.seed)
        width, height = self.width, self.height
        if width is None:
            width, height = _draw_dims(dims_rng, self.players)
        gamma = self.gamma
        if gamma is None:
            gamma = float(gamma_rng.uniform(*GAMMA_RANGE))
        return MapGenParams(self.players, self.seed, width, height, gamma)

    def to_dict(self) -> dict:
        return asdict(self)


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _snap(size: int, k: int) -> int:
    candidates = range(math.ceil(MIN_SIZE / k) * k, MAX_SIZE + 1, k)
    return min(candidates, key=lambda c: (abs(c - size), c))


def _draw_dims(rng: np.random.Generator, players: int) -> tuple[int, int]:
    cols, rows = TILINGS[players]
    width = int(rng.integers(MIN_SIZE, MAX_SIZE + 1))
    height = int(rng.integers(max(MIN_SIZE, width - 10), min(MAX_SIZE, width + 10) + 1))
    return _snap(width, cols), _snap(height, rows)


def periodic_value_noise(rng: np.random.Generator, width: int, height: int,
                         octaves: int = OCTAVES, cell: int = LATTICE_CELL) -> np.ndarray:
    """Multi-octave bilinear value noise with period (width, height), scaled to [0, 1]."""
    total = np.zeros((height, width))
    amp = 1.0
    gx0 = max(2, math.ceil(width / cell))
    gy0 = max(2, math.ceil(height / cell))
    for k in range(octaves):
        gx = min(width, gx0 * 2**k)
        gy = min(height, gy0 * 2**k)
        lattice = rng.random((gy, gx))
        u = np.arange(width) * gx / width
        v = np.arange(height) * gy / height
        x0 = np.floor(u).astype(int)
        y0 = np.floor(v).astype(int)
        fx = u - x0
        fy = (v - y0)[:, None]
        x1 = (x0 + 1) % gx
        y1 = (y0 + 1) % gy
        top = lattice[np.ix_(y0, x0)] * (1 - fx) + lattice[np.ix_(y0, x1)] * fx
        bottom = lattice[np.ix_(y1, x0)] * (1 - fx) + lattice[np.ix_(y1, x1)] * fx
        total += amp * (top * (1 - fy) + bottom * fy)
        amp *= 0.5
    span = total.max() - total.min()
    if span == 0:
        return np.zeros_like(total)
    return (total - total.min()) / span


def generate_map(params: MapGenParams) -> GameMap:
    p = params.resolve()
    cols, rows = TILINGS[p.players]
    pw, ph = p.width // cols, p.height // rows
    _, _, rng = _streams(p.seed)

    noise = periodic_value_noise(rng, pw, ph)
    production = np.rint(noise ** p.gamma * MAX_PRODUCTION).astype(np.int32)
    jitter = rng.uniform(0, STRENGTH_JITTER, size=(ph, pw))
    strength = np.clip(np.rint(production * STRENGTH_PER_PRODUCTION + jitter), 1, STRENGTH_CAP)

    production = np.tile(production, (rows, cols))
    strength = np.tile(strength.astype(np.int32), (rows, cols))
    owner = np.zeros((p.height, p.width), dtype=np.int32)
    for x, y, player in start_sites(p.players, p.width, p.height):
        owner[y, x] = player
        strength[y, x] = STRENGTH_CAP
    return GameMap(p.width, p.height, production, owner, strength, p.players)


def start_sites(players: int, width: int, height: int) -> list[tuple[int, int, int]]:
    """``(x, y, player)`` for each start: the centre of that player's panel."""
    cols, rows = TILINGS[players]
    pw, ph = width // cols, height // rows
    return [((i % cols) * pw + pw // 2, (i // cols) * ph + ph // 2, i + 1)
            for i in range(players)]


def gini_coefficient(values) -> float:
    """Mean-absolute-difference Gini: sum_ij |x_i - x_j| / (2 n sum x)."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0 or x.sum() <= 0:
        raise ValueError("Gini coefficient needs at least one positive value")
    if x[0] < 0:
        raise ValueError("Gini coefficient needs non-negative values")
    n = x.size
    rank = np.arange(1, n + 1)
    # sorted-order identity for the pairwise sum
    g = 2.0 * np.dot(rank, x) / (n * x.sum()) - (n + 1) / n
    return float(max(g, 0.0))


def map_to_text(game_map: GameMap) -> str:
    def row(a):
        return " ".join(map(str, a.ravel().tolist()))

    return "\n".join([f"{game_map.width} {game_map.height}", row(game_map.production),
                      row(game_map.strength), row(game_map.owner)]) + "\n"


def map_from_text(text: str) -> GameMap:
    lines = text.strip("\n").split("\n")
    if len(lines) != 4:
        raise MapParamError(f"map text needs 4 lines, got {len(lines)}")
    try:
        width, height = (int(v) for v in lines[0].split())
        grids = [np.array([int(v) for v in line.split()], dtype=np.int32) for line in lines[1:]]
    except ValueError as exc:
        raise MapParamError(f"bad map text: {exc}") from None
    n = width * height
    for name, g in zip(("productions", "strengths", "owners"), grids):
        if g.size != n:
            raise MapParamError(f"{name}: expected {n} values, got {g.size}")
    production, strength, owner = grids
    if production.min() < 0 or strength.min() < 0 or strength.max() > STRENGTH_CAP:
        raise MapParamError("production or strength out of range")
    players = int(owner.max())
    if not 2 <= players <= 6 or owner.min() < 0:
        raise MapParamError(f"map must hold 2..6 players, found {players}")
    return GameMap(width, height, production, owner, strength, players)
