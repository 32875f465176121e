"""Outcome and behavioural measures computed from finished episodes.

Everything here is a pure function of L{EpisodeRecord}s or of rows of the
training log. Measures that are undefined for an episode, such as the reward
angle of an all-zero outcome, are returned as C{None} and left out of
aggregates.
"""

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import attr
import numpy as np

from svoarena.episode import REGION_ORCHARD, REGION_RIVER, EpisodeRecord
from svoarena.grid import CLEAN, HARVEST
from svoarena.svo import reward_angle

ABSTENTION_FORMULA = 'linear-time-v1'
"""Version tag of the abstention formula, written next to exported scores."""

EQUILIBRIUM_RULES = ('trailing', 'plateau')


class MetricsError(ValueError):
    """Raised when a measure is asked of data it is not defined for."""


def gini(values: Sequence[float]) -> float:
    """
    The Gini coefficient of non-negative values, from the sorted values::

        G = sum((2i - n - 1) * x_(i)) / (n * sum(x))

    which equals C{sum_ij |x_i - x_j| / (2 n^2 mean)}. All zeros give 0.
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(((2 * ranks - n - 1) * x).sum() / (n * total))


def equality_with_shift(returns: Sequence[float]) -> Tuple[float, bool]:
    """
    L{equality}, also telling whether the returns had to be shifted.

    @return: The score and whether any return was negative, in which case
        the score was computed on the returns minus their minimum.
    """
    values = np.asarray(returns, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise MetricsError(f"equality needs at least 2 returns, got {n}")
    shifted = bool((values < 0).any())
    if shifted:
        values = values - values.min()
    if not values.any():
        return 1.0, shifted
    score = 1.0 - n / (n - 1) * gini(values)
    return min(1.0, max(0.0, score)), shifted


def equality(returns: Sequence[float]) -> float:
    """
    One minus the normalised Gini coefficient of a group's returns: 1 when
    everybody receives the same, 0 when a single agent receives everything.

    Returns with a negative member are shifted by their minimum first, and
    all-zero returns count as perfectly equal.

    @raise MetricsError: For fewer than two returns.
    """
    return equality_with_shift(returns)[0]


@attr.s(auto_attribs=True, frozen=True)
class TrainingLogRow:
    """One agent's episode in one arena of one training round."""

    round: int
    arena: int
    agent_id: int
    svo_degrees: float
    extrinsic_return: float
    utility_return: float
    policy_loss: Optional[float] = None
    value_loss: Optional[float] = None
    entropy: Optional[float] = None
    punish_count: int = 0

    @property
    def svo_radians(self) -> float:
        return math.radians(self.svo_degrees)


def _round_means(rows: Sequence[TrainingLogRow]) -> Tuple[List[int], np.ndarray]:
    by_round: Dict[int, List[float]] = {}
    for row in rows:
        by_round.setdefault(row.round, []).append(row.extrinsic_return)
    rounds = sorted(by_round)
    return rounds, np.array([np.mean(by_round[r]) for r in rounds])


@attr.s(auto_attribs=True, frozen=True)
class EquilibriumWindow:
    """
    Which training rounds count as "at equilibrium".

    The C{trailing} rule takes the last C{fraction} of the rounds. The
    C{plateau} rule takes the longest suffix of the per-round mean return
    series whose least-squares slope is within C{tolerance}, but at least
    C{min_rounds} rounds; without such a suffix it falls back to the
    trailing rule.
    """

    rule: str = 'trailing'
    fraction: float = 0.1
    tolerance: float = 0.01
    min_rounds: int = 10

    def __attrs_post_init__(self) -> None:
        if self.rule not in EQUILIBRIUM_RULES:
            raise MetricsError(f"unknown equilibrium rule {self.rule!r}")
        if not 0 < self.fraction <= 1:
            raise MetricsError(f"equilibrium fraction {self.fraction!r} is outside (0, 1]")

    def _trailing(self, n: int) -> int:
        return n - max(1, math.ceil(self.fraction * n))

    def start_index(self, series: Sequence[float]) -> int:
        """
        The index of the first element of C{series} inside the window.

        @raise MetricsError: If the series is empty.
        """
        values = np.asarray(series, dtype=np.float64)
        n = len(values)
        if n == 0:
            raise MetricsError("no rounds to take an equilibrium window of")
        if self.rule == 'trailing':
            return self._trailing(n)
        for start in range(0, n - max(self.min_rounds, 2) + 1):
            tail = values[start:]
            slope = np.polyfit(np.arange(len(tail)), tail, 1)[0]
            if abs(slope) <= self.tolerance:
                return start
        return self._trailing(n)

    def select(self, rounds: Sequence[int], series: Sequence[float]) -> List[int]:
        """
        @param rounds: Round numbers, ascending.
        @param series: The per-round mean return, aligned with C{rounds}.
        @return: The rounds in the window, never empty.
        """
        return list(rounds[self.start_index(series):])

    def resolve(self, rows: Sequence[TrainingLogRow]) -> List[int]:
        """The rounds of a training log inside the window."""
        rounds, series = _round_means(rows)
        return self.select(rounds, series)


def _window_rows(rows: Sequence[TrainingLogRow], window: EquilibriumWindow) -> List[TrainingLogRow]:
    selected = set(window.resolve(rows))
    return [row for row in rows if row.round in selected]


def _agent_means(rows: Iterable[TrainingLogRow]) -> Dict[int, float]:
    by_agent: Dict[int, List[float]] = {}
    for row in rows:
        by_agent.setdefault(row.agent_id, []).append(row.extrinsic_return)
    return {agent: float(np.mean(v)) for agent, v in sorted(by_agent.items())}


def median_return(rows: Sequence[TrainingLogRow], window: EquilibriumWindow) -> float:
    """
    The median over agents of each agent's mean episode return within the
    equilibrium window.

    @raise MetricsError: If the log is empty.
    """
    if not rows:
        raise MetricsError("the training log is empty")
    return float(np.median(list(_agent_means(_window_rows(rows, window)).values())))


@attr.s(auto_attribs=True, frozen=True)
class PopulationSummary:
    collective_return: float
    """Mean collective return per episode within the window."""

    equality: float
    """Mean per-episode equality within the window."""

    median_return: float
    all_positive: bool
    """Whether every agent has a positive mean return within the window."""

    shifted_episodes: int
    first_round: int
    last_round: int
    episodes: int


def population_summary(rows: Sequence[TrainingLogRow], window: EquilibriumWindow) -> PopulationSummary:
    """
    Summarise a population at equilibrium.

    @raise MetricsError: If the log is empty.
    """
    if not rows:
        raise MetricsError("the training log is empty")
    selected = _window_rows(rows, window)
    episodes: Dict[Tuple[int, int], List[float]] = {}
    for row in selected:
        episodes.setdefault((row.round, row.arena), []).append(row.extrinsic_return)
    collective = [sum(returns) for returns in episodes.values()]
    scores = []
    shifted = 0
    for returns in episodes.values():
        if len(returns) < 2:
            continue
        score, was_shifted = equality_with_shift(returns)
        scores.append(score)
        shifted += was_shifted
    means = _agent_means(selected)
    return PopulationSummary(
        collective_return=float(np.mean(collective)),
        equality=float(np.mean(scores)) if scores else math.nan,
        median_return=float(np.median(list(means.values()))),
        all_positive=all(v > 0 for v in means.values()),
        shifted_episodes=shifted,
        first_round=min(row.round for row in selected),
        last_round=max(row.round for row in selected),
        episodes=len(episodes),
        )


def observed_reward_angle(record: EpisodeRecord, slot: int) -> Optional[float]:
    """
    The reward angle of the episode's total extrinsic returns from one
    member's point of view, or C{None} when all totals are zero.
    """
    angle = reward_angle(record.returns, slot)
    return None if math.isnan(angle) else angle


def abstention(record: EpisodeRecord, slot: int) -> float:
    """
    How far an agent refrained from eating endangered apples.

    Every endangered apple eaten costs C{(T - t) / (T * P)} for a HarvestPatch
    map with C{P} patches, where the step index is rescaled so that the
    first step of the episode is C{t = 0} and the final step C{t = T}. An
    agent that never eats an endangered apple, or only on the final step,
    scores 1; eating one from every patch on the first step scores 0.

    @raise MetricsError: If the episode has no patches.
    """
    patches = record.patch_count
    if patches <= 0:
        raise MetricsError(f"abstention needs apple patches, the {record.environment} map has none")
    T = record.episode_length
    penalty = 0.0
    for event in record.events_of(slot, HARVEST):
        if not event.endangered:
            continue
        t = event.step * T / (T - 1) if T > 1 else 0.0
        penalty += (T - t) / (T * patches)
    return min(1.0, max(0.0, 1.0 - penalty))


def _distances(record: EpisodeRecord, slot: int) -> np.ndarray:
    """Distances to every other avatar after each step, shape (T, n-1)."""
    positions = record.positions[1:].astype(np.float64)
    own = positions[:, slot, :]
    others = np.delete(positions, slot, axis=1)
    return np.sqrt(((others - own[:, None, :]) ** 2).sum(-1))


def interagent_distance(record: EpisodeRecord, slot: int) -> Optional[float]:
    """
    Mean over steps of the Euclidean distance to the nearest other avatar,
    or C{None} for a single-agent episode.
    """
    if record.n_agents < 2:
        return None
    return float(_distances(record, slot).min(axis=1).mean())


def mean_pairwise_distance(record: EpisodeRecord, slot: int) -> Optional[float]:
    """
    Mean over steps of the mean distance to the other avatars, or C{None}
    for a single-agent episode.
    """
    if record.n_agents < 2:
        return None
    return float(_distances(record, slot).mean())


def pollution_cleaned(record: EpisodeRecord, slot: int) -> int:
    """River cells an agent cleaned during the episode."""
    return sum(event.amount for event in record.events_of(slot, CLEAN))


@attr.s(auto_attribs=True, frozen=True)
class Preparedness:
    mean_apples: Optional[float]
    """Mean apples in view at the transitions, C{None} without transitions."""

    transitions: int
    samples: Tuple[int, ...] = ()


def preparedness(record: EpisodeRecord, slot: int) -> Preparedness:
    """
    Apples in view when an agent turns from harvesting to cleaning.

    A transition is a step at which the agent enters the river having been
    in the orchard at some point since it last was in the river.
    """
    regions = record.regions[:, slot]
    in_view = record.apples_in_view[:, slot]
    samples: List[int] = []
    orchard_seen = False
    previous = None
    for t, region in enumerate(regions):
        if region == REGION_ORCHARD:
            orchard_seen = True
        elif region == REGION_RIVER:
            if previous != REGION_RIVER and orchard_seen:
                samples.append(int(in_view[t]))
            orchard_seen = False
        previous = region
    mean = float(np.mean(samples)) if samples else None
    return Preparedness(mean, len(samples), tuple(samples))


@attr.s(auto_attribs=True)
class EpisodeMetrics:
    """All measures of one agent in one episode."""

    episode: int
    agent_id: int
    slot: int
    svo_degrees: Optional[float]
    extrinsic_return: int
    utility_return: float
    collective_return: int
    equality: float
    equality_shifted: bool
    observed_reward_angle: Optional[float]
    interagent_distance: Optional[float]
    mean_pairwise_distance: Optional[float]
    punish_count: int
    abstention: Optional[float] = None
    pollution_cleaned: Optional[int] = None
    preparedness: Optional[float] = None
    transitions: Optional[int] = None

    @property
    def observed_reward_angle_degrees(self) -> Optional[float]:
        if self.observed_reward_angle is None:
            return None
        return math.degrees(self.observed_reward_angle)


def episode_metrics(
        record: EpisodeRecord,
        episode: int = 0,
        svo_degrees: Optional[Sequence[float]] = None,
        ) -> List[EpisodeMetrics]:
    """
    Compute every measure for every member of an episode.

    HarvestPatch episodes get abstention, Cleanup episodes pollution cleaned
    and preparedness; the other environment's measures stay C{None}.

    @param svo_degrees: The members' SVO targets, in slot order.
    """
    returns = record.returns
    collective = record.collective_return
    if record.n_agents >= 2:
        score, shifted = equality_with_shift(returns)
    else:
        score, shifted = 1.0, False
    punish = record.punish_counts()
    rows = []
    for slot, agent_id in enumerate(record.agent_ids):
        row = EpisodeMetrics(
            episode=episode,
            agent_id=agent_id,
            slot=slot,
            svo_degrees=None if svo_degrees is None else float(svo_degrees[slot]),
            extrinsic_return=int(returns[slot]),
            utility_return=float(record.utility_returns[slot]),
            collective_return=collective,
            equality=score,
            equality_shifted=shifted,
            observed_reward_angle=(observed_reward_angle(record, slot)
                                   if record.n_agents >= 2 else None),
            interagent_distance=interagent_distance(record, slot),
            mean_pairwise_distance=mean_pairwise_distance(record, slot),
            punish_count=int(punish[slot]),
            )
        if record.environment == 'harvestpatch':
            row.abstention = abstention(record, slot)
        elif record.environment == 'cleanup':
            row.pollution_cleaned = pollution_cleaned(record, slot)
            prep = preparedness(record, slot)
            row.preparedness = prep.mean_apples
            row.transitions = prep.transitions
        rows.append(row)
    return rows
