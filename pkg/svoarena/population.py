"""Populations of agents and the training loop.

A population holds C{N} agent slots, each with a fixed SVO and its own
policy. Every training round samples C{n} members into each arena, plays
one episode per arena, and gives every agent one update on the
trajectories it collected in that round.

Arenas only read policy parameters; all updates happen after the last
arena of a round has finished, one agent at a time.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from svoarena.config import ConfigurationError, RunConfig
from svoarena.environment import EnvironmentSpec
from svoarena.episode import EpisodeRecord, run_episode
from svoarena.export import (
    AGENTS_FIELDS, AGENTS_NAME, TRAINING_LOG_FIELDS, TRAINING_LOG_NAME, CsvLog,
    training_log_dict, truncate_round_log
)
from svoarena.metrics import TrainingLogRow
from svoarena.policy import Actor, NonFiniteLossError, PolicyHandle
from svoarena.policy.checkpoint import (
    CheckpointError, CheckpointWriter, load_checkpoint, read_manifest, write_manifest
)
from svoarena.policy.learner import LearnerConfig, LossDiagnostics, Trajectory, update
from svoarena.policy.network import ArchitectureSpec
from svoarena.replay import ReplayWriter
from svoarena.reporter import null_logger
from svoarena.svo import HALF_PI, SvoParams, SvoRewardTransform

logger = logging.getLogger(__name__)

DISTRIBUTIONS = ('homogeneous', 'normal')


@attr.s(auto_attribs=True, frozen=True)
class PopulationSpec:
    """
    How to build a population. Angles are in radians.
    """

    size: int = 30
    group_size: int = 5
    distribution: str = 'homogeneous'
    svo_mean: float = 0.0
    """The SVO of every agent (homogeneous) or the mean of the normal distribution."""

    svo_std: float = 0.0
    weight: float = 0.0
    seed: int = 0
    architecture: ArchitectureSpec = ArchitectureSpec()

    @classmethod
    def fromConfig(cls, config: RunConfig, action_count: int) -> 'PopulationSpec':
        return cls(
            size=config.population_size,
            group_size=config.group_size,
            distribution=config.svo_distribution,
            svo_mean=config.svo_mean_radians,
            svo_std=config.svo_std_radians,
            weight=config.weight,
            seed=config.seed,
            architecture=ArchitectureSpec(
                window=config.window_size,
                conv_channels=config.conv_channels,
                hidden=config.hidden_size,
                recurrent=config.hidden_size,
                action_count=action_count,
                activation=config.activation,
                ),
            )

    def validate(self) -> None:
        """
        @raise ConfigurationError: For invalid sizes or distribution
            parameters.
        """
        problems = []
        if self.size < 1:
            problems.append(('population_size', "must be at least 1"))
        if not 2 <= self.group_size <= self.size:
            problems.append(('group_size', f"must lie between 2 and the population size {self.size}"))
        if self.distribution not in DISTRIBUTIONS:
            problems.append(('svo_distribution', f"unknown distribution {self.distribution!r}"))
        if not 0 <= self.svo_mean <= HALF_PI + 1e-12:
            problems.append(('svo_mean', "must lie in [0, 90] degrees"))
        if self.svo_std < 0 or not math.isfinite(self.svo_std):
            problems.append(('svo_std', "must be a non-negative number"))
        if self.weight < 0:
            problems.append(('svo_weight', "must be non-negative"))
        if problems:
            raise ConfigurationError(problems)


@attr.s(auto_attribs=True, eq=False)
class AgentSlot:
    agent_id: int
    svo: SvoParams
    policy: Actor
    seed: int = 0
    """Seed the policy was initialised from."""

    episodes: int = 0
    cumulative_return: float = 0.0

    @property
    def mean_return(self) -> float:
        return self.cumulative_return / self.episodes if self.episodes else 0.0


@attr.s(auto_attribs=True, frozen=True)
class ArenaAssignment:
    arena_id: int
    seed: int
    """Episode seed of the arena's world."""

    members: Tuple[int, ...]
    """Agent ids, in slot order."""


@attr.s(auto_attribs=True, eq=False)
class Population:
    spec: PopulationSpec
    slots: List[AgentSlot]
    rng: np.random.Generator
    """Draws arena assignments and episode seeds."""

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def svo_degrees(self) -> List[float]:
        return [slot.svo.degrees for slot in self.slots]


def _default_policy(spec: PopulationSpec) -> Callable[[int, int], Actor]:
    def make(agent_id: int, seed: int) -> Actor:
        return PolicyHandle(spec.architecture, seed=seed)
    return make


def materialize_population(
        spec: PopulationSpec,
        make_policy: Optional[Callable[[int, int], Actor]] = None,
        ) -> Population:
    """
    Draw the SVO values and initialise the policies of a population.

    Normal draws outside [0, pi/2] are clipped to the nearest bound. The SVO
    draws, the policy seeds and the arena sampler use independent streams
    spawned from C{spec.seed}.

    @param make_policy: Called with an agent id and a seed; learned
        actor-critic policies by default.
    @raise ConfigurationError: If the spec is invalid.
    """
    spec.validate()
    svo_seq, policy_seq, sampler_seq = np.random.SeedSequence(spec.seed).spawn(3)
    if spec.distribution == 'homogeneous':
        thetas = np.full(spec.size, spec.svo_mean)
    else:
        draws = np.random.Generator(np.random.PCG64(svo_seq)).normal(
            spec.svo_mean, spec.svo_std, size=spec.size)
        thetas = np.clip(draws, 0.0, HALF_PI)
    make = make_policy or _default_policy(spec)
    slots = []
    for agent_id, child in enumerate(policy_seq.spawn(spec.size)):
        seed = int(child.generate_state(1)[0])
        slots.append(AgentSlot(agent_id, SvoParams(float(thetas[agent_id]), spec.weight),
                               make(agent_id, seed), seed))
    return Population(spec, slots, np.random.Generator(np.random.PCG64(sampler_seq)))


def sample_arena(pop: Population, rng: np.random.Generator, arena_id: int = 0) -> ArenaAssignment:
    """
    Draw C{group_size} distinct members uniformly and a fresh episode seed.
    """
    members = rng.choice(len(pop), size=pop.spec.group_size, replace=False)
    seed = int(rng.integers(0, 2 ** 32))
    return ArenaAssignment(arena_id, seed, tuple(int(m) for m in members))


def play_arena(
        pop: Population,
        environment: EnvironmentSpec,
        assignment: ArenaAssignment,
        smoothing: float = 0.975,
        learn: bool = True,
        ) -> EpisodeRecord:
    """
    Play the episode of one arena.

    Only reads the members' policies. The world and the action sampler are
    seeded from the assignment's episode seed alone.
    """
    members = [pop.slots[m] for m in assignment.members]
    world = environment.make_world(len(members), assignment.seed)
    transform = SvoRewardTransform([slot.svo for slot in members], smoothing)
    action_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([assignment.seed, 1])))
    learners = [i for i, slot in enumerate(members) if learn and isinstance(slot.policy, PolicyHandle)]
    return run_episode(world, [slot.policy for slot in members], transform, action_rng,
                       environment.episode_length, assignment.members, learners)


def _checkpoint_dir(output: Path, round_index: int) -> Path:
    return output / 'checkpoints' / f'round-{round_index:06d}'


class Trainer:
    """
    Trains a population of learned policies in one environment.

    When C{output} is given the trainer writes the training log, the
    per-agent curves, checkpoints and replay samples below it.
    """

    def __init__(
            self,
            population: Population,
            environment: EnvironmentSpec,
            learner: LearnerConfig,
            arenas: int = 100,
            smoothing: float = 0.975,
            deterministic: bool = False,
            workers: int = 0,
            output: Optional[Union[str, Path]] = None,
            checkpoint_every: int = 50,
            replay_every: int = 0,
            logger: Callable[..., None] = null_logger,
            progress: Optional[Callable[[str, int, Optional[int], str], None]] = None,
            ):
        self.population = population
        self.environment = environment
        self.learner = learner
        self.arenas = arenas
        self.smoothing = smoothing
        self.deterministic = deterministic
        self.workers = workers or os.cpu_count() or 1
        self.output = Path(output) if output is not None else None
        self.checkpoint_every = checkpoint_every
        self.replay_every = replay_every
        self.logger = logger
        self.progress = progress
        self.round = 0
        """The next round to play."""

        self.quarantined = 0

    def _policy(self, agent_id: int) -> PolicyHandle:
        policy = self.population.slots[agent_id].policy
        assert isinstance(policy, PolicyHandle)
        return policy

    def _play(self, assignments: Sequence[ArenaAssignment]) -> List[EpisodeRecord]:
        def play(assignment: ArenaAssignment) -> EpisodeRecord:
            try:
                return play_arena(self.population, self.environment, assignment, self.smoothing)
            except Exception:
                logger.exception("arena %d failed", assignment.arena_id)
                raise
        if self.deterministic or self.workers == 1 or len(assignments) == 1:
            return [play(a) for a in assignments]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(assignments))) as executor:
            return list(executor.map(play, assignments))

    def _update(self, batches: Dict[int, List[Trajectory]]) -> Dict[int, LossDiagnostics]:
        diagnostics = {}
        for agent_id in sorted(batches):
            try:
                diagnostics[agent_id] = update(self._policy(agent_id), batches[agent_id], self.learner)
            except NonFiniteLossError as e:
                self.quarantined += 1
                self.logger('update', f'round {self.round}: agent {agent_id}: update rejected, {e}',
                            thresh=-1)
        return diagnostics

    def train_round(self) -> List[TrainingLogRow]:
        """Play and learn from one round; return its training log rows."""
        pop = self.population
        assignments = [sample_arena(pop, pop.rng, a) for a in range(self.arenas)]
        records = self._play(assignments)

        batches: Dict[int, List[Trajectory]] = {}
        for assignment, record in zip(assignments, records):
            for slot, agent_id in enumerate(assignment.members):
                if slot in record.trajectories:
                    batches.setdefault(agent_id, []).append(record.trajectories[slot])
        diagnostics = self._update(batches)

        rows = []
        punish = [record.punish_counts() for record in records]
        for assignment, record, punished in zip(assignments, records, punish):
            self.logger('arena', f'round {self.round}: arena {assignment.arena_id}: members '
                                 f'{list(assignment.members)}, collective return '
                                 f'{record.collective_return}', thresh=2)
            returns = record.returns
            utilities = record.utility_returns
            for slot, agent_id in enumerate(assignment.members):
                agent = pop.slots[agent_id]
                agent.episodes += 1
                agent.cumulative_return += float(returns[slot])
                diag = diagnostics.get(agent_id)
                rows.append(TrainingLogRow(
                    round=self.round,
                    arena=assignment.arena_id,
                    agent_id=agent_id,
                    svo_degrees=agent.svo.degrees,
                    extrinsic_return=float(returns[slot]),
                    utility_return=float(utilities[slot]),
                    policy_loss=diag.policy_loss if diag else None,
                    value_loss=diag.value_loss if diag else None,
                    entropy=diag.entropy if diag else None,
                    punish_count=int(punished[slot]),
                    ))

        if self.output is not None and self.replay_every and self.round % self.replay_every == 0:
            self._write_replay(assignments[0], records[0])
        self.round += 1
        return rows

    def train(self, rounds: int) -> List[TrainingLogRow]:
        """
        Train for C{rounds} more rounds.

        @return: The training log rows of these rounds.
        """
        log: List[TrainingLogRow] = []
        training_log = agents_log = None
        if self.output is not None:
            self.output.mkdir(parents=True, exist_ok=True)
            resumed = self.round > 0
            training_log = CsvLog(self.output / TRAINING_LOG_NAME, TRAINING_LOG_FIELDS, append=resumed)
            agents_log = CsvLog(self.output / AGENTS_NAME, AGENTS_FIELDS, append=resumed)
        try:
            last = self.round + rounds
            while self.round < last:
                current = self.round
                rows = self.train_round()
                log.extend(rows)
                mean = float(np.mean([r.extrinsic_return for r in rows]))
                self.logger('train', f'round {current}: mean return {mean:.2f}', thresh=1)
                if self.progress is not None:
                    self.progress('train', current + 1, last, 'rounds')
                if training_log is not None and agents_log is not None:
                    training_log.write(training_log_dict(r) for r in rows)
                    agents_log.write(self._agent_rows(current, rows))
                if self.output is not None and (
                        self.round % self.checkpoint_every == 0 or self.round == last):
                    self.save(self.output)
        finally:
            if training_log is not None and agents_log is not None:
                training_log.close()
                agents_log.close()
        return log

    def _agent_rows(self, round_index: int, rows: Sequence[TrainingLogRow]) -> List[Dict[str, Any]]:
        played: Dict[int, List[float]] = {}
        for row in rows:
            played.setdefault(row.agent_id, []).append(row.extrinsic_return)
        out = []
        for slot in self.population.slots:
            out.append({
                'round': round_index,
                'agent_id': slot.agent_id,
                'svo_degrees': slot.svo.degrees,
                'svo_radians': slot.svo.theta,
                'episodes': slot.episodes,
                'round_mean_return': (float(np.mean(played[slot.agent_id]))
                                      if slot.agent_id in played else None),
                'cumulative_return': slot.cumulative_return,
                'lifetime_mean_return': slot.mean_return,
                })
        return out

    def _write_replay(self, assignment: ArenaAssignment, record: EpisodeRecord) -> None:
        assert self.output is not None
        directory = self.output / 'replays'
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f'round-{self.round:06d}-arena-{assignment.arena_id:03d}.replay'
        ReplayWriter(self.logger).write(
            path, self.environment, assignment.seed, record.actions,
            record.initial_hash, record.final_hash,
            extra={'round': self.round, 'agent_ids': list(assignment.members)})

    def save(self, output: Path) -> Path:
        """
        Write a checkpoint of every policy and a manifest into
        C{checkpoints/round-NNNNNN} below C{output}.

        @return: The checkpoint directory.
        """
        directory = _checkpoint_dir(output, self.round)
        directory.mkdir(parents=True, exist_ok=True)
        writer = CheckpointWriter(self.logger)
        agents = []
        for slot in self.population.slots:
            name = f'agent-{slot.agent_id:02d}.ckpt'
            digest = writer.write(directory / name, self._policy(slot.agent_id), {
                'environment': self.environment.name,
                'agent_id': slot.agent_id,
                'svo_degrees': slot.svo.degrees,
                'round': self.round,
                })
            agents.append({
                'agent_id': slot.agent_id,
                'file': name,
                'sha256': digest,
                'svo_radians': slot.svo.theta,
                'svo_degrees': slot.svo.degrees,
                'weight': slot.svo.weight,
                'seed': slot.seed,
                'episodes': slot.episodes,
                'cumulative_return': slot.cumulative_return,
                })
        write_manifest(directory, {
            'round': self.round,
            'environment': self.environment.name,
            'map_hash': self.environment.game_map.digest,
            'group_size': self.population.spec.group_size,
            'sampler_state': self.population.rng.bit_generator.state,
            'quarantined_updates': self.quarantined,
            'agents': agents,
            })
        self.logger('checkpoint', f'round {self.round}: checkpoint in {directory}', thresh=1)
        return directory

    def resume(self, directory: Union[str, Path]) -> None:
        """
        Continue from a checkpoint directory written by L{save}: restore the
        policies, their optimiser state, the lifetime statistics and the
        arena sampler, and drop the logged rows of later rounds.

        @raise CheckpointError: If the checkpoint does not belong to this
            population and environment.
        """
        directory = Path(directory)
        manifest = read_manifest(directory)
        if manifest.get('environment') != self.environment.name:
            raise CheckpointError(f"{directory} was written for {manifest.get('environment')}, "
                                  f"not {self.environment.name}")
        agents = manifest['agents']
        if len(agents) != len(self.population):
            raise CheckpointError(f"{directory} holds {len(agents)} agents, "
                                  f"the population has {len(self.population)}")
        for entry in agents:
            slot = self.population.slots[int(entry['agent_id'])]
            if not math.isclose(slot.svo.theta, entry['svo_radians'], abs_tol=1e-12):
                raise CheckpointError(f"{directory}: agent {slot.agent_id} has SVO "
                                      f"{entry['svo_degrees']} degrees, expected {slot.svo.degrees}")
            policy, _ = load_checkpoint(directory / entry['file'], self.environment.name,
                                        self.environment.action_count)
            slot.policy = policy
            slot.episodes = int(entry['episodes'])
            slot.cumulative_return = float(entry['cumulative_return'])
        self.population.rng.bit_generator.state = manifest['sampler_state']
        self.round = int(manifest['round'])
        self.quarantined = int(manifest.get('quarantined_updates', 0))
        if self.output is not None:
            truncate_round_log(self.output / TRAINING_LOG_NAME, self.round)
            truncate_round_log(self.output / AGENTS_NAME, self.round, AGENTS_FIELDS)
        self.logger('checkpoint', f'resumed from round {self.round} ({directory})', thresh=0)


def latest_checkpoint(output: Union[str, Path]) -> Optional[Path]:
    """The most recent checkpoint directory of a run, if any."""
    root = Path(output) / 'checkpoints'
    if not root.is_dir():
        return None
    candidates = sorted(p for p in root.iterdir() if p.name.startswith('round-')
                        and (p / 'manifest.json').exists())
    return candidates[-1] if candidates else None


def load_population(
        directory: Union[str, Path],
        environment: EnvironmentSpec,
        spec: PopulationSpec,
        greedy: bool = False,
        ) -> Population:
    """
    Rebuild a frozen population from a checkpoint directory for evaluation.

    @raise CheckpointError: On a missing, corrupt or mismatched checkpoint.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    slots = []
    for entry in sorted(manifest['agents'], key=lambda e: int(e['agent_id'])):
        policy, _ = load_checkpoint(directory / entry['file'], environment.name,
                                    environment.action_count)
        policy.greedy = greedy
        slots.append(AgentSlot(int(entry['agent_id']),
                               SvoParams(float(entry['svo_radians']), float(entry['weight'])),
                               policy, int(entry.get('seed', 0)),
                               int(entry['episodes']), float(entry['cumulative_return'])))
    group_size = min(spec.group_size, len(slots))
    spec = attr.evolve(spec, size=len(slots), group_size=group_size)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed).spawn(3)[2]))
    return Population(spec, slots, rng)


def plan_evaluation(pop: Population, episodes: int) -> List[ArenaAssignment]:
    """The group of every evaluation episode, freshly sampled per episode."""
    return [sample_arena(pop, pop.rng, episode) for episode in range(episodes)]


def evaluate(
        pop: Population,
        environment: EnvironmentSpec,
        episodes: int,
        smoothing: float = 0.975,
        logger: Callable[..., None] = null_logger,
        ) -> List[Tuple[ArenaAssignment, EpisodeRecord]]:
    """
    Play C{episodes} episodes with frozen policies, one after the other.
    """
    results = []
    for assignment in plan_evaluation(pop, episodes):
        record = play_arena(pop, environment, assignment, smoothing, learn=False)
        logger('eval', f'episode {assignment.arena_id}: members {list(assignment.members)}, '
                       f'collective return {record.collective_return}', thresh=1)
        results.append((assignment, record))
    return results
