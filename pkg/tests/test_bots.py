import io

import numpy as np
import pytest
from scipy import stats

from conftest import make_state
from torus_arena.bots import (ExpanderPolicy, NapFilter, RandomPolicy, StillPolicy,
                              border_distance, dilate, make_policy, serve, shifted)
from torus_arena.engine import Direction, GameState, run_game, step, validate_moves
from torus_arena.mapgen import MapGenParams, generate_map
from torus_arena.protocol import encode_frame, encode_init, parse_moves


def grid(h, w, sites):
    a = np.zeros((h, w), dtype=int)
    for (x, y), v in sites.items():
        a[y, x] = v
    return a


def test_shifted_matches_neighbor_definition():
    a = np.arange(12).reshape(3, 4)
    # NORTH of (x=1, y=0) wraps to row 2
    assert shifted(a, 1)[0, 1] == a[2, 1]
    assert shifted(a, 2)[0, 3] == a[0, 0]
    assert shifted(a, 3)[2, 1] == a[0, 1]
    assert shifted(a, 4)[1, 0] == a[1, 3]


def test_dilate_and_border_distance_agree():
    rng = np.random.default_rng(3)
    mask = rng.random((9, 11)) < 0.05
    mask[0, 0] = True
    dist = border_distance(mask)
    for k in range(5):
        assert np.array_equal(dilate(mask, k), dist <= k)


def test_random_policy_is_uniform():
    owner = np.ones((30, 30), dtype=int)
    owner[0, 0] = 2
    state = make_state(30, 30, owner, np.ones((30, 30)), np.ones((30, 30)))
    pol = RandomPolicy(0)
    counts = np.zeros(5)
    for _ in range(20):
        counts += np.bincount(pol.directions(state, 1)[owner == 1], minlength=5)
    assert stats.chisquare(counts).pvalue > 0.001


def test_policies_only_move_owned_pieces():
    gm = generate_map(MapGenParams(3, 8).resolve())
    state = GameState.initial(gm)
    for name in ("random", "still", "expander", "nap-expander"):
        pol = make_policy(name, 1)
        moves = pol(state, 2)
        assert moves.shape[1] == 3 and (moves[:, 2] != 0).all()
        assert (gm.owner[moves[:, 1], moves[:, 0]] == 2).all()
        assert validate_moves(moves, state, 2).dropped == 0


def test_expander_attacks_best_weaker_neighbour():
    owner = grid(7, 7, {(3, 3): 1, (0, 0): 2})
    strength = grid(7, 7, {(3, 3): 20, (3, 2): 10, (4, 3): 30, (3, 4): 5, (2, 3): 40})
    production = grid(7, 7, {(3, 2): 4, (4, 3): 9, (3, 4): 1, (2, 3): 15})
    state = make_state(7, 7, owner, strength, production)
    # ratios: N 0.4, E 0.3, S 0.2, W 0.375 -> north, and 20 > 10
    assert ExpanderPolicy().directions(state, 1)[3, 3] == Direction.NORTH


def test_expander_waits_when_weaker():
    owner = grid(5, 5, {(2, 2): 1, (0, 0): 2})
    strength = np.full((5, 5), 50)
    strength[2, 2] = 50
    state = make_state(5, 5, owner, strength, np.ones((5, 5)))
    # equal strength is not enough
    assert ExpanderPolicy().directions(state, 1)[2, 2] == Direction.STILL


def test_expander_interior_marches_to_border():
    owner = np.zeros((7, 7), dtype=int)
    owner[:, :4] = 1
    owner[3, 6] = 2
    strength = np.full((7, 7), 200)
    strength[owner == 1] = 0
    # column 2: open column 4 is two steps east, open column 6 three steps west
    strength[3, 2] = 30
    production = np.ones((7, 7))
    state = make_state(7, 7, owner, strength, production)
    assert ExpanderPolicy().directions(state, 1)[3, 2] == Direction.EAST
    # column 1 is nearer the wrapped border
    strength[3, 1] = 30
    state = make_state(7, 7, owner, strength, production)
    assert ExpanderPolicy().directions(state, 1)[3, 1] == Direction.WEST
    # too weak to bother: below five turns of production
    strength[3, 2] = 4
    state = make_state(7, 7, owner, strength, production)
    assert ExpanderPolicy().directions(state, 1)[3, 2] == Direction.STILL


def test_expander_beats_random():
    wins = 0
    for seed in range(100):
        gm = generate_map(MapGenParams(2, seed).resolve())
        seat = seed % 2
        pols = [make_policy("random", seed), make_policy("random", seed)]
        pols[seat] = make_policy("expander")
        r = run_game(gm, pols)
        wins += r.ranks[seat] == 1
    assert wins > 90


def nap_state(gap):
    """Player 1 at x=2 and peaceful player 2 ``gap`` columns east, neutral between."""
    owner = grid(3, 12, {(2, 1): 1, (2 + gap, 1): 2})
    strength = np.full((3, 12), 1)
    strength[1, 2] = 100
    strength[1, 2 + gap] = 100
    return make_state(12, 3, owner, strength, np.ones((3, 12)))


def test_nap_blocks_moves_near_peaceful_opponent():
    state = nap_state(4)
    assert ExpanderPolicy().directions(state, 1)[1, 2] != Direction.STILL
    nap = NapFilter(ExpanderPolicy())
    d = nap.directions(state, 1)
    # east lands two steps from player 2: forbidden; other targets stay allowed
    assert d[1, 2] != Direction.EAST
    for dd in (1, 2, 3, 4):
        dest_x = (2 + (dd == 2) - (dd == 4)) % 12
        dest_y = (1 - (dd == 1) + (dd == 3)) % 3
        if d[1, 2] == dd:
            assert abs(dest_x - 6) + abs(dest_y - 1) > 2


def test_nap_filter_rewrites_to_still_inside_zone():
    class East(StillPolicy):
        def directions(self, state, player, blocked=None):
            g = np.zeros(state.owner.shape, dtype=np.int8)
            g[state.owner == player] = Direction.EAST
            return g

    assert NapFilter(East()).directions(nap_state(3), 1)[1, 2] == Direction.STILL
    assert NapFilter(East()).directions(nap_state(6), 1)[1, 2] == Direction.EAST


def test_nap_flags_aggressor_and_retaliates():
    owner = grid(5, 12, {(2, 2): 1, (3, 2): 2, (5, 2): 3})
    strength = grid(5, 12, {(2, 2): 100, (3, 2): 30, (5, 2): 30})
    state = make_state(12, 5, owner, strength, np.zeros((5, 12)))
    nap = NapFilter(ExpanderPolicy())
    d = nap.directions(state, 1)
    assert d[2, 2] != Direction.EAST
    nxt = step(state, {1: validate_moves(nap(state, 1), state, 1)})
    nap.directions(nxt, 1)
    # player 2 damaged our piece by being adjacent; player 3 never reached us
    assert nap.aggressors == {2}


def test_nap_ignores_neutral_losses():
    owner = grid(3, 12, {(2, 1): 1, (9, 1): 2})
    strength = grid(3, 12, {(2, 1): 5, (3, 1): 200, (9, 1): 5})
    state = make_state(12, 3, owner, strength, np.zeros((3, 12)))

    class East(StillPolicy):
        def directions(self, state, player, blocked=None):
            g = np.zeros(state.owner.shape, dtype=np.int8)
            g[state.owner == player] = Direction.EAST
            return g

    nap = NapFilter(East())
    moves = nap(state, 1)
    nxt = step(state, {1: validate_moves(moves, state, 1)})
    nap.directions(nxt, 1)
    assert nap.aggressors == set()


def test_make_policy_unknown():
    with pytest.raises(ValueError):
        make_policy("nope")


def test_serve_speaks_protocol():
    gm = generate_map(MapGenParams(2, 4, 20, 20))
    state = GameState.initial(gm)
    text = encode_init(2, gm) + encode_frame(state) + "\n" + encode_frame(state) + "\n"
    out = io.StringIO()
    assert serve("expander", io.StringIO(text), out) == 0
    lines = out.getvalue().splitlines()
    assert lines[0] == "ExpanderBot"
    assert len(lines) == 3
    for line in lines[1:]:
        assert all(gm.owner[m[0][1], m[0][0]] == 2 for m in parse_moves(line))


def test_serve_random_is_deterministic_per_init():
    gm = generate_map(MapGenParams(2, 4, 20, 20))
    text = encode_init(1, gm) + encode_frame(gm) + "\n"
    runs = []
    for _ in range(2):
        out = io.StringIO()
        serve("random", io.StringIO(text), out)
        runs.append(out.getvalue())
    assert runs[0] == runs[1]


def test_random_single_piece_uniform_and_seeded():
    owner = grid(5, 5, {(2, 2): 1, (0, 0): 2})
    state = make_state(5, 5, owner, np.ones((5, 5)), np.ones((5, 5)))
    pol = RandomPolicy(123)
    draws = [int(pol.directions(state, 1)[2, 2]) for _ in range(10_000)]
    assert stats.chisquare(np.bincount(draws, minlength=5)).pvalue > 0.001
    again = RandomPolicy(123)
    assert [int(again.directions(state, 1)[2, 2]) for _ in range(100)] == draws[:100]


def test_no_pieces_no_moves():
    owner = grid(5, 5, {(0, 0): 2})
    state = make_state(5, 5, owner, np.ones((5, 5)), np.ones((5, 5)), players=2)
    for name in ("random", "still", "expander", "nap-expander"):
        assert len(make_policy(name, 0)(state, 1)) == 0


def test_still_bots_hold_territory():
    gm = generate_map(MapGenParams(2, 6, 20, 20))
    r = run_game(gm, [StillPolicy(), StillPolicy()])
    counts = [np.bincount(o.ravel(), minlength=3)[1:].tolist() for o in r.owners]
    assert all(c == [1, 1] for c in counts)


def test_expander_spec_examples():
    owner = grid(5, 5, {(2, 2): 1, (0, 0): 2})
    strength = grid(5, 5, {(2, 2): 10, (2, 1): 4, (3, 2): 4, (2, 3): 200, (1, 2): 200})
    production = grid(5, 5, {(2, 1): 1, (3, 2): 3})
    state = make_state(5, 5, owner, strength, production)
    assert ExpanderPolicy().directions(state, 1)[2, 2] == Direction.EAST
    strength = grid(5, 5, {(2, 2): 3, (2, 1): 8, (3, 2): 8, (2, 3): 8, (1, 2): 8})
    state = make_state(5, 5, owner, strength, np.ones((5, 5)))
    assert ExpanderPolicy().directions(state, 1)[2, 2] == Direction.STILL


class Checked:
    """Asserts every emitted move is on a site the player owns."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, state, player):
        moves = self.inner(state, player)
        assert (state.owner[moves[:, 1], moves[:, 0]] == player).all()
        return moves


def test_policies_emit_owned_moves_every_turn():
    for seed in range(6):
        gm = generate_map(MapGenParams(4, seed).resolve())
        pols = [Checked(make_policy(n, seed)) for n in
                ("random", "still", "expander", "nap-expander")]
        run_game(gm, pols, turn_limit=80)


def test_nap_passes_inner_moves_for_aggressors():
    state = nap_state(4)
    nap = NapFilter(ExpanderPolicy())
    nap.aggressors.add(2)
    assert np.array_equal(nap.directions(state, 1), ExpanderPolicy().directions(state, 1))


def damage_between(r, a, b):
    """Per-turn damage player ``a`` dealt to ``b``, re-resolved by the naive oracle."""
    from oracle import resolve
    out = []
    for t, turn in enumerate(r.moves):
        moves = {(x, y): d for player in turn for x, y, d in player}
        _, _, dmg = resolve(r.width, r.height, r.owners[t].ravel().tolist(),
                            r.strengths[t].ravel().tolist(), r.productions.ravel().tolist(),
                            moves)
        out.append(dmg.get((a, b), 0))
    return out


@pytest.mark.parametrize("seed", [0, 1])
def test_nap_never_hurts_still_opponent(seed):
    gm = generate_map(MapGenParams(2, seed, 20, 20))
    r = run_game(gm, [make_policy("nap-expander"), StillPolicy()])
    assert all((o == 2).sum() == 1 for o in r.owners)
    assert not any(damage_between(r, 1, 2))


@pytest.mark.parametrize("seed", [3, 4])
def test_two_nap_bots_stay_at_peace(seed):
    gm = generate_map(MapGenParams(2, seed, 24, 20))
    r = run_game(gm, [make_policy("nap-expander"), make_policy("nap-expander")])
    assert not any(damage_between(r, 1, 2)) and not any(damage_between(r, 2, 1))


def test_nap_peace_holds_until_third_party_attacks():
    gm = generate_map(MapGenParams(3, 5, 30, 20))
    r = run_game(gm, [make_policy("nap-expander"), make_policy("nap-expander"),
                      make_policy("expander")], turn_limit=200)
    third = [a + b for a, b in zip(damage_between(r, 3, 1), damage_between(r, 3, 2))]
    first_hit = next((t for t, d in enumerate(third) if d), len(third))
    between = [a + b for a, b in zip(damage_between(r, 1, 2), damage_between(r, 2, 1))]
    assert not any(between[:first_hit + 1])
