import json
import math

import numpy as np
import pytest

from torus_arena.bots import make_policy
from torus_arena.engine import run_game
from torus_arena.mapgen import MapGenParams, generate_map, gini_coefficient
from torus_arena.replay import (EXTENSION, Ejection, ReplayError, branching_log10,
                                check_invariants, frame_stats, read_replay, replay_from_dict,
                                replay_gini, verify_replay, write_replay)


class Quitter:
    """Plays expander for a few turns then raises."""

    def __init__(self, turns):
        self.turns = turns
        self.inner = make_policy("expander")

    def __call__(self, state, player):
        if state.turn >= self.turns:
            raise TimeoutError("gave up")
        return self.inner(state, player)


@pytest.fixture(scope="module")
def replay():
    params = MapGenParams(3, 17, 21, 20).resolve()
    gm = generate_map(params)
    return run_game(gm, [make_policy("expander"), make_policy("random", 1), Quitter(15)],
                    turn_limit=60, names=["a", "b", "c"], seed=17, generator=params.to_dict())


def test_round_trip(tmp_path, replay):
    path = tmp_path / ("g" + EXTENSION)
    write_replay(replay, path)
    back = read_replay(path)
    assert back == replay
    assert back.ejections == [Ejection(3, 15, "error")]
    assert back.generator == replay.generator
    assert not list(tmp_path.glob("*.tmp"))


def test_write_is_byte_stable(tmp_path, replay):
    a, b = tmp_path / "a.hltr", tmp_path / "b.hltr"
    write_replay(replay, a)
    write_replay(read_replay(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_verify_and_invariants_pass(replay):
    assert replay.num_frames == replay.num_turns + 1 == 61
    assert verify_replay(replay) == []
    assert check_invariants(replay) == []


def test_verify_detects_tampering(replay):
    doc = replay.to_dict()
    doc["frames"][30]["strengths"][0] ^= 1
    bad = replay_from_dict(doc)
    assert verify_replay(bad) == [29, 30]


def test_verify_detects_missing_ejection(replay):
    doc = replay.to_dict()
    doc["ejections"] = []
    assert verify_replay(replay_from_dict(doc)) == [15]


def test_truncated_file(tmp_path, replay):
    path = tmp_path / "t.hltr"
    write_replay(replay, path)
    data = path.read_text()
    path.write_text(data[: len(data) // 2])
    with pytest.raises(ReplayError) as info:
        read_replay(path)
    assert info.value.path == "$"


@pytest.mark.parametrize("mutate,where", [
    (lambda d: d.pop("width"), "$.width"),
    (lambda d: d.update(width="20"), "$.width"),
    (lambda d: d.update(version=99), "$.version"),
    (lambda d: d["frames"][3]["owners"].pop(), "$.frames[3].owners"),
    (lambda d: d["frames"][2]["strengths"].__setitem__(0, 300), "$.frames[2].strengths"),
    (lambda d: d["frames"][2]["owners"].__setitem__(0, 9), "$.frames[2].owners"),
    (lambda d: d["moves"].pop(), "$.moves"),
    (lambda d: d.update(ranks=[1, 1, 2]), "$.ranks"),
    (lambda d: d["ejections"][0].update(reason="bored"), "$.ejections[0].reason"),
])
def test_field_errors_name_the_path(replay, mutate, where):
    doc = json.loads(json.dumps(replay.to_dict()))
    mutate(doc)
    with pytest.raises(ReplayError) as info:
        replay_from_dict(doc)
    assert info.value.path.startswith(where)


def test_frame_stats(replay):
    fs = frame_stats(replay, 0)
    assert fs.territory[1:] == [1, 1, 1]
    assert fs.territory[0] == 21 * 20 - 3
    assert fs.strength[1:] == [255, 255, 255]
    assert sum(fs.production) == int(replay.productions.sum())
    last = frame_stats(replay, replay.num_frames - 1)
    assert sum(last.territory) == 420
    assert last.territory[3] == 0
    with pytest.raises(IndexError):
        frame_stats(replay, replay.num_frames)


@pytest.mark.parametrize("pieces,want", [(0, 0.0), (1, 0.69897), (100, 69.897),
                                         (2500, 1747.425)])
def test_branching(pieces, want):
    assert branching_log10(pieces) == pytest.approx(want, abs=1e-3)


def test_branching_matches_exact_power():
    assert branching_log10(2500) == pytest.approx(math.log10(5**2500), abs=1e-9)
    with pytest.raises(ValueError):
        branching_log10(-1)


def test_replay_gini(replay):
    assert replay_gini(replay) == gini_coefficient(replay.productions)
    assert replay_gini(replay, 2) == round(gini_coefficient(replay.productions), 2)


def test_check_invariants_reports(replay):
    doc = replay.to_dict()
    r = replay_from_dict(doc)
    r.strengths = r.strengths.copy()
    r.strengths[5, 0, 0] = 256
    r.ranks = [1, 1, 3]
    msgs = check_invariants(r)
    assert any("frame 5" in m for m in msgs)
    assert any("ranks" in m for m in msgs)


def test_branching_spec_values():
    assert branching_log10(2494) == pytest.approx(1743.2, abs=0.05)
    assert branching_log10(2500) == pytest.approx(1747.4, abs=0.05)


def test_uniform_production_gini_zero(replay):
    doc = replay.to_dict()
    doc["productions"] = [3] * len(doc["productions"])
    assert replay_gini(replay_from_dict(doc)) == 0.0


def test_frame_stats_match_brute_force(replay):
    for t in (0, 20, replay.num_frames - 1):
        fs = frame_stats(replay, t)
        terr = [0] * 4
        stren = [0] * 4
        prod = [0] * 4
        for o, s, p in zip(replay.owners[t].ravel().tolist(), replay.strengths[t].ravel().tolist(),
                           replay.productions.ravel().tolist()):
            terr[o] += 1
            stren[o] += s
            prod[o] += p
        assert (fs.territory, fs.strength, fs.production) == (terr, stren, prod)


def test_gini_histogram_mode():
    from torus_arena.mapgen import TILINGS
    players = sorted(TILINGS)
    ginis = []
    for seed in range(500):
        params = MapGenParams(players[seed % 5], seed).resolve()
        r = run_game(generate_map(params), [make_policy("still")] * params.players, turn_limit=0)
        ginis.append(replay_gini(r, 2))
    # mode of a lightly smoothed histogram (0.01 bins are sparse at n=500)
    smooth = np.convolve(np.bincount(np.rint(np.array(ginis) * 100).astype(int)),
                         np.ones(5) / 5, mode="same")
    assert 0.20 <= smooth.argmax() / 100 <= 0.35
