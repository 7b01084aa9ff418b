import os
import sys

import numpy as np
import pytest

from torus_arena.engine import GameMap, GameState

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

ACCEPTANCE_LINES: list[str] = []


def make_state(width, height, owner, strength, production, players=None):
    gm = GameMap(width, height, np.asarray(production), np.asarray(owner),
                 np.asarray(strength), players or 0)
    return GameState.initial(gm)


def random_grids(rng, width, height, players, density=0.4):
    n = width * height
    owner = np.where(rng.random(n) < density, rng.integers(1, players + 1, n), 0)
    # guarantee every player is on the board
    owner[rng.choice(n, players, replace=False)] = np.arange(1, players + 1)
    strength = rng.integers(0, 256, n)
    production = rng.integers(0, 16, n)
    return owner, strength, production


def bot_script(name):
    return [sys.executable, os.path.join(HERE, "bots", name)]


@pytest.fixture
def script_bot():
    return bot_script


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
