"""Deterministic replay logs.

A world is fully determined by its environment spec, seed, number of agents
and the joint actions taken, so that is all a replay stores. The binary
file is::

    MAGIC
    u32 header length, JSON header (environment spec with map text and
        hash, seed, agent count, initial state hash)
    per step:  b'A', u32 length, one action byte per agent
    at the end: b'F', u32 length, final state hash (hex)

A JSON-lines mirror with the same content is written next to it for
inspection with ordinary tools.
"""

import json
import struct
from pathlib import Path
from typing import IO, Any, Callable, ContextManager, Dict, Iterator, List, Optional, Tuple, Union

import attr
import numpy as np

from svoarena.environment import EnvironmentSpec
from svoarena.grid import GridWorld, MapError
from svoarena.reporter import null_logger

MAGIC = b'SVOARENA-REPLAY\x01'
FORMAT_VERSION = 1
_LENGTH = struct.Struct('<I')


class IntegrityError(Exception):
    """
    Raised when a replay is truncated or corrupt, or re-simulating it does
    not reproduce the recorded state hashes.
    """


@attr.s(auto_attribs=True, eq=False)
class Replay:
    spec: EnvironmentSpec
    seed: int
    n_agents: int
    initial_hash: str
    actions: List[np.ndarray]
    final_hash: str
    header: Dict[str, Any] = attr.ib(factory=dict)

    @property
    def steps(self) -> int:
        return len(self.actions)


class ReplayWriter:
    """Writes the replay of one episode."""

    def __init__(self, logger: Callable[..., None] = null_logger):
        self._logger = logger

    def _openFileForWriting(self, path: Path) -> ContextManager[IO[bytes]]:
        """
        Helper for testing.
        """
        return open(path, 'wb')

    def write(
            self,
            path: Union[str, Path],
            spec: EnvironmentSpec,
            seed: int,
            actions: np.ndarray,
            initial_hash: str,
            final_hash: str,
            extra: Optional[Dict[str, Any]] = None,
            ) -> Path:
        """
        @param actions: Joint actions, shape (T, n).
        @return: The path of the JSON-lines mirror.
        """
        path = Path(path)
        actions = np.asarray(actions, dtype=np.uint8)
        header = dict(extra or {})
        header.update({
            'format_version': FORMAT_VERSION,
            'seed': seed,
            'n_agents': int(actions.shape[1]) if actions.ndim == 2 else 0,
            'initial_hash': initial_hash,
            'spec': spec.to_json(),
            })
        encoded = json.dumps(header, sort_keys=True).encode('utf-8')
        with self._openFileForWriting(path) as target:
            target.write(MAGIC)
            target.write(_LENGTH.pack(len(encoded)))
            target.write(encoded)
            for row in actions:
                payload = row.tobytes()
                target.write(b'A' + _LENGTH.pack(len(payload)) + payload)
            final = final_hash.encode('ascii')
            target.write(b'F' + _LENGTH.pack(len(final)) + final)

        mirror = path.with_suffix(path.suffix + '.jsonl')
        with open(mirror, 'w', encoding='utf-8') as out:
            mirror_header = {k: v for k, v in header.items() if k != 'spec'}
            mirror_header['environment'] = spec.name
            mirror_header['map_hash'] = spec.game_map.digest
            out.write(json.dumps({'header': mirror_header}, sort_keys=True) + '\n')
            for step, row in enumerate(actions):
                out.write(json.dumps({'step': step, 'actions': row.tolist()}) + '\n')
            out.write(json.dumps({'final_hash': final_hash}) + '\n')
        self._logger('replay', f'wrote replay {path}', thresh=2)
        return mirror


def _read_exact(stream: IO[bytes], size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise IntegrityError(f"replay truncated in {what}")
    return data


def read_replay(path: Union[str, Path]) -> Replay:
    """
    Parse a binary replay file.

    @raise IntegrityError: If the file is not a replay, is truncated (the
        message names the step), or its embedded map does not match the
        recorded map hash.
    """
    path = Path(path)
    try:
        stream = open(path, 'rb')
    except OSError as e:
        raise IntegrityError(f"cannot read replay {path}: {e.strerror}") from e
    with stream:
        if stream.read(len(MAGIC)) != MAGIC:
            raise IntegrityError(f"{path} is not an svoarena replay")
        (size,) = _LENGTH.unpack(_read_exact(stream, _LENGTH.size, 'header'))
        try:
            header = json.loads(_read_exact(stream, size, 'header'))
        except ValueError as e:
            raise IntegrityError(f"{path}: corrupt replay header: {e}") from e
        if header.get('format_version') != FORMAT_VERSION:
            raise IntegrityError(
                f"{path}: unsupported replay version {header.get('format_version')}")
        try:
            spec = EnvironmentSpec.fromJson(header['spec'])
        except MapError as e:
            raise IntegrityError(f"{path}: {e}") from e

        n_agents = int(header['n_agents'])
        actions: List[np.ndarray] = []
        final_hash: Optional[str] = None
        while final_hash is None:
            step = len(actions)
            tag = stream.read(1)
            if not tag:
                raise IntegrityError(f"{path}: replay truncated at step {step}")
            raw_length = stream.read(_LENGTH.size)
            if len(raw_length) != _LENGTH.size:
                raise IntegrityError(f"{path}: replay truncated at step {step}")
            (length,) = _LENGTH.unpack(raw_length)
            payload = stream.read(length)
            if len(payload) != length:
                raise IntegrityError(f"{path}: replay truncated at step {step}")
            if tag == b'A':
                if length != n_agents:
                    raise IntegrityError(
                        f"{path}: step {step} has {length} actions for {n_agents} agents")
                actions.append(np.frombuffer(payload, dtype=np.uint8).copy())
            elif tag == b'F':
                final_hash = payload.decode('ascii')
            else:
                raise IntegrityError(f"{path}: unknown record {tag!r} at step {step}")
        if stream.read(1):
            raise IntegrityError(f"{path}: trailing data after the final hash")
    return Replay(spec, int(header['seed']), n_agents, header['initial_hash'],
                  actions, final_hash, header)


def iter_replay(replay: Replay) -> Iterator[Tuple[int, GridWorld]]:
    """
    Re-simulate a replay, yielding the world before the first step (as step
    0) and after every step.

    @raise IntegrityError: If the initial or final state hash differs from
        the recorded one.
    """
    world = replay.spec.make_world(replay.n_agents, replay.seed)
    if world.state_hash() != replay.initial_hash:
        raise IntegrityError("initial state hash mismatch: the replay does not match this map or seed")
    yield 0, world
    for step, joint in enumerate(replay.actions):
        world.step(joint, observe=False)
        yield step + 1, world
    if world.state_hash() != replay.final_hash:
        raise IntegrityError(
            f"final state hash mismatch after {replay.steps} steps: "
            f"recorded {replay.final_hash}, got {world.state_hash()}")


def replay_episode(replay: Replay, logger: Callable[..., None] = null_logger) -> str:
    """
    Re-simulate a replay end to end and verify its hashes.

    @return: The verified final state hash.
    @raise IntegrityError: On a hash mismatch.
    """
    world = None
    for step, world in iter_replay(replay):
        logger('replay', f'step {step}', thresh=3)
    assert world is not None
    return world.state_hash()
