import math
from typing import List, Optional, Sequence

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svoarena.episode import REGION_ORCHARD, REGION_OTHER, REGION_RIVER, EpisodeRecord
from svoarena.grid import CLEAN, HARVEST, GridEvent
from svoarena.metrics import (
    EquilibriumWindow, MetricsError, TrainingLogRow, abstention, episode_metrics, equality,
    equality_with_shift, gini, interagent_distance, mean_pairwise_distance, median_return,
    observed_reward_angle, pollution_cleaned, population_summary, preparedness
)


def make_record(
        rewards: Sequence[Sequence[int]],
        environment: str = 'harvestpatch',
        events: Sequence[GridEvent] = (),
        patch_count: int = 4,
        positions: Optional[np.ndarray] = None,
        regions: Optional[np.ndarray] = None,
        in_view: Optional[np.ndarray] = None,
        ) -> EpisodeRecord:
    r = np.asarray(rewards, dtype=np.int64)
    steps, n = r.shape
    if positions is None:
        positions = np.zeros((steps + 1, n, 2), dtype=np.int16)
        positions[:, :, 1] = np.arange(n) * 3
    return EpisodeRecord(
        environment=environment,
        seed=0,
        episode_length=steps,
        agent_ids=list(range(n)),
        actions=np.zeros((steps, n), dtype=np.uint8),
        rewards=r,
        utilities=r.astype(np.float64),
        positions=positions,
        regions=regions if regions is not None else np.zeros((steps + 1, n), dtype=np.int8),
        apples_in_view=in_view if in_view is not None else np.zeros((steps + 1, n), dtype=np.int16),
        events=list(events),
        patch_count=patch_count if environment == 'harvestpatch' else 0,
        )


def test_equality_extremes() -> None:
    assert equality([5, 5, 5, 5]) == 1.0
    assert equality([10, 0, 0, 0, 0]) == pytest.approx(0.0)
    assert equality([0, 0]) == 1.0
    assert equality([1, 3]) == pytest.approx(0.5)


def test_gini_pairwise_definition() -> None:
    values = [1.0, 4.0, 0.0, 7.0]
    n = len(values)
    pairwise = sum(abs(a - b) for a in values for b in values) / (2 * n * n * np.mean(values))
    assert gini(values) == pytest.approx(pairwise)


def test_equality_shifts_negative_returns() -> None:
    score, shifted = equality_with_shift([-50, 10, 10])
    assert shifted
    assert score == pytest.approx(equality([0, 60, 60]))
    assert equality_with_shift([0, 10])[1] is False


def test_equality_needs_two_returns() -> None:
    with pytest.raises(MetricsError):
        equality([3])


@given(st.lists(st.integers(-100, 200), min_size=2, max_size=10), st.randoms())
@settings(max_examples=200, deadline=None)
def test_equality_bounds_and_symmetry(returns: List[int], random) -> None:
    score = equality(returns)
    assert 0.0 <= score <= 1.0
    shuffled = list(returns)
    random.shuffle(shuffled)
    assert equality(shuffled) == pytest.approx(score)


def test_trailing_window() -> None:
    window = EquilibriumWindow('trailing', 0.1)
    assert window.start_index(np.zeros(100)) == 90
    assert window.start_index(np.zeros(5)) == 4
    assert window.select(list(range(10, 20)), np.zeros(10)) == [19]
    with pytest.raises(MetricsError):
        window.start_index([])


def test_plateau_window_finds_the_flat_suffix() -> None:
    series = [10.0 * i for i in range(50)] + [500.0] * 50
    window = EquilibriumWindow('plateau', tolerance=0.01, min_rounds=10)
    assert window.start_index(series) == 50


def test_plateau_window_falls_back_to_trailing() -> None:
    series = np.arange(100, dtype=float)
    window = EquilibriumWindow('plateau', fraction=0.2, tolerance=0.01, min_rounds=10)
    assert window.start_index(series) == 80


def test_window_validation() -> None:
    with pytest.raises(MetricsError):
        EquilibriumWindow('median')
    with pytest.raises(MetricsError):
        EquilibriumWindow(fraction=0.0)


def log_rows(returns_by_round: Sequence[Sequence[float]]) -> List[TrainingLogRow]:
    rows = []
    for round_index, returns in enumerate(returns_by_round):
        for agent_id, value in enumerate(returns):
            rows.append(TrainingLogRow(round_index, 0, agent_id, 45.0, value, value))
    return rows


def test_population_summary() -> None:
    rows = log_rows([[0, 0], [10, 30], [20, 20]])
    summary = population_summary(rows, EquilibriumWindow('trailing', 0.5))
    # ceil(0.5 * 3) = 2 rounds: rounds 1 and 2.
    assert (summary.first_round, summary.last_round) == (1, 2)
    assert summary.episodes == 2
    assert summary.collective_return == pytest.approx(40.0)
    assert summary.equality == pytest.approx((0.5 + 1.0) / 2)
    assert summary.median_return == pytest.approx(20.0)
    assert summary.all_positive
    assert summary.shifted_episodes == 0
    assert median_return(rows, EquilibriumWindow('trailing', 0.5)) == pytest.approx(20.0)


def test_population_summary_flags_negative_episodes() -> None:
    rows = log_rows([[-50, 10]])
    summary = population_summary(rows, EquilibriumWindow())
    assert summary.shifted_episodes == 1
    assert not summary.all_positive
    with pytest.raises(MetricsError):
        population_summary([], EquilibriumWindow())


def test_observed_reward_angle() -> None:
    record = make_record([[1, 0, 0], [0, 1, 1]])
    assert observed_reward_angle(record, 0) == pytest.approx(math.pi / 4)
    assert observed_reward_angle(make_record([[0, 0]]), 0) is None


def endangered(step: int, slot: int = 0) -> GridEvent:
    return GridEvent(step, slot, HARVEST, 1, endangered=True)


def test_abstention() -> None:
    zeros = [[0, 0]] * 100
    assert abstention(make_record(zeros), 0) == 1.0
    # First step costs a whole patch share, the final step nothing.
    assert abstention(make_record(zeros, events=[endangered(0)]), 0) == pytest.approx(0.75)
    assert abstention(make_record(zeros, events=[endangered(99)]), 0) == pytest.approx(1.0)
    every_patch = [endangered(0) for _ in range(4)]
    assert abstention(make_record(zeros, events=every_patch), 0) == pytest.approx(0.0)
    # Other agents' and ordinary harvests do not count.
    ordinary = [GridEvent(0, 0, HARVEST, 1), endangered(0, slot=1)]
    assert abstention(make_record(zeros, events=ordinary), 0) == 1.0


def test_abstention_needs_patches() -> None:
    with pytest.raises(MetricsError):
        abstention(make_record([[0, 0]], environment='cleanup'), 0)


def test_distances() -> None:
    record = make_record([[0, 0, 0]] * 4)
    # Avatars sit at columns 0, 3 and 6 throughout.
    assert interagent_distance(record, 0) == pytest.approx(3.0)
    assert interagent_distance(record, 1) == pytest.approx(3.0)
    assert mean_pairwise_distance(record, 0) == pytest.approx(4.5)
    assert interagent_distance(make_record([[0]]), 0) is None


def test_pollution_cleaned() -> None:
    events = [GridEvent(1, 0, CLEAN, 2), GridEvent(5, 0, CLEAN, 1), GridEvent(5, 1, CLEAN, 3)]
    record = make_record([[0, 0]] * 6, environment='cleanup', events=events)
    assert pollution_cleaned(record, 0) == 3
    assert pollution_cleaned(record, 1) == 3


def test_preparedness() -> None:
    o, h, r = REGION_OTHER, REGION_ORCHARD, REGION_RIVER
    regions = np.array([[o], [h], [h], [o], [r], [r], [o], [r], [h], [r]], dtype=np.int8)
    in_view = np.array([[0], [5], [6], [4], [7], [7], [3], [2], [9], [1]], dtype=np.int16)
    record = make_record([[0]] * 9, environment='cleanup', regions=regions, in_view=in_view)
    prep = preparedness(record, 0)
    # River entries at 4 and 9 follow orchard visits; the one at 7 does not.
    assert prep.samples == (7, 1)
    assert prep.transitions == 2
    assert prep.mean_apples == pytest.approx(4.0)


def test_preparedness_without_transitions() -> None:
    record = make_record([[0]] * 3, environment='cleanup')
    assert preparedness(record, 0).mean_apples is None


def test_episode_metrics_rows() -> None:
    record = make_record([[1, 0], [1, 2]], events=[endangered(1, slot=1)], patch_count=2)
    rows = episode_metrics(record, episode=7, svo_degrees=[0.0, 90.0])
    assert [row.agent_id for row in rows] == [0, 1]
    assert rows[0].episode == 7
    assert rows[0].extrinsic_return == 2
    assert rows[1].collective_return == 4
    assert rows[0].equality == 1.0
    assert rows[0].abstention == 1.0
    # Eaten on the final step.
    assert rows[1].abstention == pytest.approx(1.0)
    assert rows[0].pollution_cleaned is None
    assert rows[1].svo_degrees == 90.0
    assert rows[0].observed_reward_angle_degrees == pytest.approx(45.0)


def test_episode_metrics_cleanup() -> None:
    events = [GridEvent(0, 1, CLEAN, 2)]
    record = make_record([[1, 0]], environment='cleanup', events=events)
    rows = episode_metrics(record)
    assert rows[0].abstention is None
    assert rows[1].pollution_cleaned == 2
    assert rows[0].transitions == 0
    assert rows[0].svo_degrees is None
