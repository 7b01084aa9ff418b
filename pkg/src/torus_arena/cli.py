"""Command line entry point: ``play``, ``gen``, ``stats``, ``tourney`` and ``bot``."""

from __future__ import annotations

import argparse
import logging
import os
import secrets
import shlex
import sys
import time
from typing import Optional, Sequence

from . import bots, engine, mapgen
from .arena import Entrant, TournamentError, run_tournament, seat_counts
from .protocol import (DEFAULT_INIT_DEADLINE_MS, DEFAULT_TURN_DEADLINE_MS, BotSession,
                       log_path_for, play_sessions)
from .replay import (EXTENSION, ReplayError, branching_log10, frame_stats, read_replay,
                     replay_gini, verify_replay, write_replay)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAULT = 3

PALETTE = ["#2b2b2b", "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#ffe119"]


class UsageError(Exception):
    pass


def bot_argv(command: str) -> list[str]:
    """Split a bot command; ``bot <policy>`` runs a bundled bot with this interpreter."""
    argv = shlex.split(command)
    if not argv:
        raise UsageError("empty bot command")
    if argv[0] == "bot":
        return [sys.executable, "-m", "torus_arena", *argv]
    return argv


def bot_label(command: str) -> str:
    argv = shlex.split(command)
    if len(argv) == 2 and argv[0] == "bot":
        return argv[1]
    return command


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    if not 0 <= args.seed < 2**64:
        raise UsageError("seed must be a non-negative 64-bit integer")
    return args.seed


def _dims(args) -> tuple[Optional[int], Optional[int]]:
    if args.dims is None:
        return None, None
    return tuple(args.dims)


def _add_timeouts(p):
    p.add_argument("--init-timeout", type=int, default=DEFAULT_INIT_DEADLINE_MS, metavar="MS")
    p.add_argument("--turn-timeout", type=int, default=DEFAULT_TURN_DEADLINE_MS, metavar="MS")
    p.add_argument("--turn-limit", type=int, default=None, metavar="N")


def cmd_play(args) -> int:
    if not 2 <= len(args.bots) <= 6:
        raise UsageError(f"play needs 2..6 bot commands, got {len(args.bots)}")
    argvs = [bot_argv(c) for c in args.bots]
    seed = _seed(args)
    generator = None
    if args.map:
        with open(args.map) as f:
            gm = mapgen.map_from_text(f.read())
        if gm.num_players != len(argvs):
            raise UsageError(f"map {args.map} is for {gm.num_players} players")
    else:
        w, h = _dims(args)
        params = mapgen.MapGenParams(len(argvs), seed, w, h).resolve()
        gm = mapgen.generate_map(params)
        generator = params.to_dict()
    tag = f"{int(time.time() * 1000)}-{seed}"
    sessions = [BotSession(a, init_deadline_ms=args.init_timeout,
                           turn_deadline_ms=args.turn_timeout, log_path=log_path_for(tag, i))
                for i, a in enumerate(argvs, start=1)]
    replay = play_sessions(gm, sessions, turn_limit=args.turn_limit, seed=seed,
                           generator=generator)

    out = args.output or "."
    path = out if out.endswith(EXTENSION) else os.path.join(out, tag + EXTENSION)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_replay(replay, path)

    order = sorted(range(replay.num_players), key=lambda i: replay.ranks[i])
    if args.quiet:
        print(" ".join([str(seed)] + [f"{replay.ranks[i]}:{replay.player_names[i]}"
                                      for i in order]))
        return EXIT_OK
    print(f"map {gm.width}x{gm.height}, seed {seed}, {replay.num_turns} turns")
    for i in order:
        print(f"rank {replay.ranks[i]}: player {i + 1} {replay.player_names[i]}")
    for e in replay.ejections:
        print(f"ejected: player {e.player} {replay.player_names[e.player - 1]} "
              f"at turn {e.turn} ({e.reason})")
    print(f"replay: {path}")
    return EXIT_OK


def cmd_gen(args) -> int:
    seed = _seed(args)
    w, h = _dims(args)
    params = mapgen.MapGenParams(args.players, seed, w, h, args.gamma).resolve()
    gm = mapgen.generate_map(params)
    text = mapgen.map_to_text(gm)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    elif not args.stats:
        sys.stdout.write(text)
    if args.stats:
        gini = mapgen.gini_coefficient(gm.production)
        print(f"dimensions {gm.width} {gm.height}")
        print(f"players {params.players}")
        print(f"gamma {params.gamma:.4f}")
        print(f"gini {gini:.4f}")
    return EXIT_OK


def _render_text(r, t) -> str:
    rows = []
    for y in range(r.height):
        rows.append("".join("." if o == 0 else str(o) for o in r.owners[t, y]))
    return "\n".join(rows) + "\n"


def _render_svg(r, t, cell=12) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{r.width * cell}" '
             f'height="{r.height * cell}">']
    for y in range(r.height):
        for x in range(r.width):
            o = int(r.owners[t, y, x])
            s = int(r.strengths[t, y, x])
            opacity = 0.25 + 0.75 * s / engine.STRENGTH_CAP
            parts.append(f'<rect x="{x * cell}" y="{y * cell}" width="{cell}" height="{cell}" '
                         f'fill="{PALETTE[o % len(PALETTE)]}" fill-opacity="{opacity:.3f}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_stats(args) -> int:
    try:
        r = read_replay(args.replay)
    except FileNotFoundError:
        raise UsageError(f"no such replay: {args.replay}") from None
    frames = range(r.num_frames) if args.all_frames else [
        r.num_frames - 1 if args.frame is None else args.frame]
    for t in frames:
        if not 0 <= t < r.num_frames:
            raise UsageError(f"frame {t} out of range 0..{r.num_frames - 1}")
    print(f"{r.width}x{r.height}, {r.num_players} players, {r.num_turns} turns, "
          f"gini {replay_gini(r):.4f}")
    for t in frames:
        fs = frame_stats(r, t)
        pieces = sum(fs.territory[1:])
        print(f"frame {t}: branching 10^{branching_log10(pieces):.1f}")
        for p in range(1, r.num_players + 1):
            print(f"  player {p} {r.player_names[p - 1]}: territory {fs.territory[p]} "
                  f"strength {fs.strength[p]} production {fs.production[p]}")
        print(f"  neutral: territory {fs.territory[0]} strength {fs.strength[0]}")
    if args.render:
        os.makedirs(args.render, exist_ok=True)
        ext, render = (".svg", _render_svg) if args.svg else (".txt", _render_text)
        for t in range(r.num_frames):
            with open(os.path.join(args.render, f"frame-{t:04d}{ext}"), "w") as f:
                f.write(render(r, t))
    status = EXIT_OK
    if args.verify:
        bad = verify_replay(r)
        if bad:
            print(f"verify: FAIL ({len(bad)} of {r.num_turns} transitions differ, "
                  f"first at turn {bad[0]})")
            status = 1
        else:
            print(f"verify: PASS ({r.num_turns} transitions re-executed)")
    return status


def cmd_tourney(args) -> int:
    if len(args.bots) < 2:
        raise UsageError("tourney needs at least two bot commands")
    seed = _seed(args)
    entrants = []
    seen = {}
    for c in args.bots:
        label = bot_label(c)
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}#{seen[label]}"
        entrants.append(Entrant(label, command=bot_argv(c)))
    w, h = _dims(args)
    dims = (w, h) if w is not None else None
    if dims and not seat_counts(dims, args.max_players):
        raise UsageError(f"no 2..{args.max_players}-player tiling fits {w}x{h}")
    if args.games < 1 or args.workers < 1:
        raise UsageError("--games and --workers must be positive")

    def report(result):
        if not args.quiet:
            names = result.replay.player_names
            order = sorted(range(len(names)), key=lambda i: result.replay.ranks[i])
            print(f"game {result.index}: " + " ".join(
                f"{result.replay.ranks[i]}:{names[i]}" for i in order))

    board = run_tournament(entrants, args.games, workers=args.workers, seed=seed,
                           out_dir=args.output, dims=dims, max_players=args.max_players,
                           init_deadline_ms=args.init_timeout,
                           turn_deadline_ms=args.turn_timeout, turn_limit=args.turn_limit,
                           on_result=report)
    print(board.to_csv(), end="")
    return EXIT_OK


def cmd_bot(args) -> int:
    return bots.serve(args.policy)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torus-arena", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, players=False):
        p.add_argument("-d", "--dims", nargs=2, type=int, metavar=("W", "H"))
        p.add_argument("-s", "--seed", type=int)
        p.add_argument("-o", "--output", metavar="PATH")
        p.add_argument("-q", "--quiet", action="store_true")
        if players:
            p.add_argument("-p", "--players", type=int, default=2)

    p = sub.add_parser("play", help="run one game between bot commands")
    p.add_argument("bots", nargs="*", metavar="BOT")
    common(p)
    p.add_argument("--map", metavar="FILE", help="map text file instead of generating one")
    _add_timeouts(p)
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("gen", help="generate a map")
    common(p, players=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--stats", action="store_true", help="print Gini and dimensions")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="inspect a replay")
    p.add_argument("replay")
    p.add_argument("--frame", type=int)
    p.add_argument("--all-frames", action="store_true")
    p.add_argument("--verify", action="store_true", help="re-execute every transition")
    p.add_argument("--render", metavar="DIR", help="write one grid dump per frame")
    p.add_argument("--svg", action="store_true", help="render SVG instead of text")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tourney", help="run a rated local tournament")
    p.add_argument("bots", nargs="*", metavar="BOT")
    common(p)
    p.add_argument("-n", "--games", type=int, default=60)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-players", type=int, default=6)
    _add_timeouts(p)
    p.set_defaults(func=cmd_tourney, output="tourney")

    p = sub.add_parser("bot", help="serve a bundled bot on standard streams")
    p.add_argument("policy", choices=sorted(bots.POLICIES))
    p.set_defaults(func=cmd_bot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, mapgen.MapParamError, ReplayError, OSError) as exc:
        print(f"torus-arena {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TournamentError as exc:
        print(f"torus-arena {args.command}: {exc}", file=sys.stderr)
        return 1
    except engine.EngineFault as exc:
        print(f"torus-arena {args.command}: engine fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
