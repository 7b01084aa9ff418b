"""Line-oriented text protocol and the child-process side of a match.

Init (engine -> bot), four lines::

    <player id>
    <W> <H>
    <W*H productions>
    <frame>

The bot answers with one line holding its name.  Each turn the engine sends one
frame line and the bot answers with one line of ``x y dir`` triples.

A frame is run-length encoded owners (``count owner`` pairs, row-major,
summing to W*H) followed by the W*H strengths, all space separated.
"""

from __future__ import annotations

import enum
import logging
import os
import queue
import subprocess
import threading
import time
from typing import IO, Optional, Sequence

import numpy as np

from .engine import Direction, GameMap, GameState, Location, Move

log = logging.getLogger(__name__)

DEFAULT_INIT_DEADLINE_MS = 15000
DEFAULT_TURN_DEADLINE_MS = 1000
MAX_LINE_BYTES = 1 << 20
MAX_NAME_LEN = 64
LOG_DIR_ENV = "TORUS_ARENA_LOG_DIR"


class ProtocolViolation(ValueError):
    pass


class BotEjected(Exception):
    """A bot was removed from the game; ``reason`` is timeout, closed or malformed."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


def _ints(a) -> str:
    return " ".join(map(str, np.asarray(a).ravel().tolist()))


def encode_owners_rle(owner: np.ndarray) -> list[int]:
    flat = np.asarray(owner).ravel()
    if flat.size == 0:
        return []
    starts = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], starts, [flat.size]))
    counts = np.diff(bounds)
    values = flat[bounds[:-1]]
    return np.column_stack((counts, values)).ravel().tolist()


def encode_frame(state) -> str:
    """One frame line (no trailing newline) for a GameState or GameMap."""
    pairs = encode_owners_rle(state.owner)
    return " ".join(map(str, pairs)) + " " + _ints(state.strength)


def decode_frame(line: str, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    n = width * height
    try:
        tokens = np.array(line.split(), dtype=np.int64)
    except ValueError:
        raise ProtocolViolation("non-integer token in frame") from None
    owners = np.empty(n, dtype=np.int32)
    pos = 0
    i = 0
    while pos < n:
        if i + 1 >= len(tokens):
            raise ProtocolViolation("frame ended inside owner runs")
        count, value = int(tokens[i]), int(tokens[i + 1])
        if count <= 0 or pos + count > n:
            raise ProtocolViolation("owner run lengths do not sum to W*H")
        owners[pos:pos + count] = value
        pos += count
        i += 2
    strengths = tokens[i:]
    if strengths.size != n:
        raise ProtocolViolation(f"expected {n} strengths, got {strengths.size}")
    return owners.reshape(height, width), strengths.astype(np.int32).reshape(height, width)


def encode_init(player_id: int, game_map: GameMap) -> str:
    return "".join([
        f"{player_id}\n",
        f"{game_map.width} {game_map.height}\n",
        _ints(game_map.production) + "\n",
        encode_frame(game_map) + "\n",
    ])


def decode_init(lines: Sequence[str]) -> tuple[int, GameMap]:
    if len(lines) != 4:
        raise ProtocolViolation("init message needs four lines")
    try:
        player_id = int(lines[0])
        width, height = (int(v) for v in lines[1].split())
        production = np.array(lines[2].split(), dtype=np.int64)
    except ValueError:
        raise ProtocolViolation("malformed init header") from None
    if production.size != width * height:
        raise ProtocolViolation("production count does not match W*H")
    owner, strength = decode_frame(lines[3], width, height)
    players = max(int(owner.max()), player_id)
    return player_id, GameMap(width, height, production, owner, strength, players)


def encode_moves(moves) -> str:
    """``Move`` values, ``(x, y, dir)`` triples or an ``(k, 3)`` array."""
    if isinstance(moves, np.ndarray):
        return _ints(moves)
    return " ".join(f"{m[0][0]} {m[0][1]} {int(m[1])}" if len(m) == 2 else
                    f"{m[0]} {m[1]} {int(m[2])}" for m in moves)


def parse_moves(text: str, dims: Optional[tuple[int, int]] = None) -> list[Move]:
    """Parse ``x y dir`` triples.  Range checks are left to
    :func:`torus_arena.engine.validate_moves`; only the shape is enforced here."""
    tokens = text.split()
    if len(tokens) % 3:
        raise ProtocolViolation(f"{len(tokens)} tokens is not a whole number of moves")
    try:
        values = [int(t) for t in tokens]
    except ValueError:
        raise ProtocolViolation("non-integer token in move line") from None
    moves = []
    for k in range(0, len(values), 3):
        x, y, d = values[k:k + 3]
        moves.append(Move(Location(x, y), Direction(d) if 0 <= d <= 4 else d))
    return moves


class SessionState(enum.Enum):
    SPAWNED = "spawned"
    NAMED = "named"
    PLAYING = "playing"
    EJECTED = "ejected"
    CLOSED = "closed"


_EOF = object()
_TOO_LONG = object()


class BotSession:
    """One bot child process.  Reads never block past the active deadline."""

    def __init__(self, command: Sequence[str], *,
                 init_deadline_ms: int = DEFAULT_INIT_DEADLINE_MS,
                 turn_deadline_ms: int = DEFAULT_TURN_DEADLINE_MS,
                 log_path: Optional[str] = None, max_line: int = MAX_LINE_BYTES):
        if not command:
            raise ValueError("empty bot command")
        self.command = list(command)
        self.init_deadline_ms = init_deadline_ms
        self.turn_deadline_ms = turn_deadline_ms
        self.log_path = log_path
        self.max_line = max_line
        self.name = ""
        self.state: Optional[SessionState] = None
        self.eject_reason: Optional[str] = None
        self._proc: Optional[subprocess.Popen] = None
        self._lines: queue.Queue = queue.Queue()
        self._deadline = 0.0
        self._log: Optional[IO] = None
        self._dims = (0, 0)

    def spawn(self) -> None:
        if self.log_path:
            os.makedirs(os.path.dirname(os.path.abspath(self.log_path)), exist_ok=True)
            self._log = open(self.log_path, "wb")
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=self._log if self._log else subprocess.DEVNULL)
        except OSError as exc:
            self._eject("closed", f"could not start bot: {exc}")
        threading.Thread(target=self._pump, args=(self._proc.stdout,), daemon=True).start()
        self.state = SessionState.SPAWNED

    def _pump(self, stream) -> None:
        try:
            while True:
                line = stream.readline(self.max_line + 1)
                if not line:
                    break
                if len(line) > self.max_line and not line.endswith(b"\n"):
                    self._lines.put(_TOO_LONG)
                    return
                self._lines.put(line.decode("utf-8", "replace").rstrip("\r\n"))
        except (OSError, ValueError):
            pass
        self._lines.put(_EOF)

    def _write(self, text: str) -> None:
        try:
            self._proc.stdin.write(text.encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            self._eject("closed", "bot closed its input")

    def _read_line(self) -> str:
        remaining = self._deadline - time.monotonic()
        try:
            item = self._lines.get(timeout=max(remaining, 0.0))
        except queue.Empty:
            self._eject("timeout", f"no reply within deadline")
        if item is _EOF:
            self._eject("closed", "bot closed its output")
        if item is _TOO_LONG:
            self._eject("malformed", f"line longer than {self.max_line} bytes")
        return item

    def _eject(self, reason: str, detail: str):
        self.state = SessionState.EJECTED
        self.eject_reason = reason
        self._kill()
        raise BotEjected(reason, detail)

    def _require(self, *states: SessionState) -> None:
        if self.state not in states:
            raise RuntimeError(f"session is {self.state}, expected one of {states}")

    def handshake(self, player_id: int, game_map: GameMap) -> str:
        self._require(SessionState.SPAWNED)
        self._dims = game_map.dims
        self._deadline = time.monotonic() + self.init_deadline_ms / 1000
        self._write(encode_init(player_id, game_map))
        self.name = self._read_line().strip()[:MAX_NAME_LEN]
        self.state = SessionState.NAMED
        return self.name

    def send_frame(self, state: GameState) -> None:
        self._require(SessionState.NAMED, SessionState.PLAYING)
        self.state = SessionState.PLAYING
        self._deadline = time.monotonic() + self.turn_deadline_ms / 1000
        self._write(encode_frame(state) + "\n")

    def read_moves(self) -> list[Move]:
        self._require(SessionState.PLAYING)
        line = self._read_line()
        try:
            return parse_moves(line, self._dims)
        except ProtocolViolation as exc:
            self._eject("malformed", str(exc))

    def turn(self, state: GameState) -> list[Move]:
        self.send_frame(state)
        return self.read_moves()

    def _kill(self) -> None:
        proc = self._proc
        if proc is not None:
            if proc.poll() is None:
                proc.kill()
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                log.warning("bot %s did not exit after kill", self.command)
            for s in (proc.stdin, proc.stdout):
                try:
                    s.close()
                except OSError:
                    pass
        if self._log:
            self._log.close()
            self._log = None

    def close(self) -> None:
        if self.state not in (SessionState.EJECTED, SessionState.CLOSED):
            self.state = SessionState.CLOSED
        self._kill()

    def __enter__(self):
        if self.state is None:
            self.spawn()
        return self

    def __exit__(self, *exc):
        self.close()


class SessionPolicy:
    """Adapts a :class:`BotSession` to the engine's policy interface.  Frames
    go out to every bot before any reply is awaited."""

    def __init__(self, session: BotSession):
        self.session = session

    def begin_turn(self, state: GameState, player: int) -> None:
        self.session.send_frame(state)

    def __call__(self, state: GameState, player: int) -> list[Move]:
        return self.session.read_moves()


def log_path_for(tag: str, player: int) -> Optional[str]:
    directory = os.environ.get(LOG_DIR_ENV)
    if not directory:
        return None
    return os.path.join(directory, f"{tag}-p{player}.log")


def play_sessions(game_map: GameMap, sessions: Sequence[BotSession], *,
                  turn_limit: Optional[int] = None, seed: Optional[int] = None,
                  generator: Optional[dict] = None):
    """Handshake every session, play one game over the wire and close the
    sessions.  Bots failing the handshake are ejected at turn 0."""
    from .engine import run_game

    policies = []
    names = []
    failed = {}
    for i, s in enumerate(sessions, start=1):
        try:
            if s.state is None:
                s.spawn()
            names.append(s.handshake(i, game_map) or f"bot{i}")
        except BotEjected as exc:
            names.append(f"bot{i}")
            failed[i] = exc
        policies.append(_FailedPolicy(failed[i]) if i in failed else SessionPolicy(s))
    try:
        return run_game(game_map, policies, turn_limit, names=names, seed=seed,
                        generator=generator)
    finally:
        for s in sessions:
            s.close()


class _FailedPolicy:
    def __init__(self, exc: BotEjected):
        self.exc = exc

    def __call__(self, state, player):
        raise self.exc
