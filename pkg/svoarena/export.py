"""CSV files: the training log, per-agent curves, episode metrics and summaries.

All files are written with a header row and C{"\\n"} line endings, missing
values as empty fields and angles in both degrees and radians.
"""

import csv
import math
from pathlib import Path
from typing import IO, Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from svoarena.metrics import (
    ABSTENTION_FORMULA, EpisodeMetrics, EquilibriumWindow, MetricsError, PopulationSummary,
    TrainingLogRow, population_summary
)
from svoarena.reporter import null_logger

TRAINING_LOG_NAME = 'training-log.csv'
AGENTS_NAME = 'agents.csv'
SUMMARY_NAME = 'summary.csv'
EPISODE_METRICS_NAME = 'episode-metrics.csv'

TRAINING_LOG_FIELDS = [
    'round', 'arena', 'agent_id', 'svo_degrees', 'svo_radians', 'extrinsic_return',
    'utility_return', 'policy_loss', 'value_loss', 'entropy', 'punish_count',
    ]

AGENTS_FIELDS = [
    'round', 'agent_id', 'svo_degrees', 'svo_radians', 'episodes', 'round_mean_return',
    'cumulative_return', 'lifetime_mean_return',
    ]

EPISODE_METRICS_FIELDS = [
    'episode', 'agent_id', 'slot', 'svo_degrees', 'svo_radians', 'extrinsic_return',
    'utility_return', 'collective_return', 'equality', 'equality_shifted',
    'observed_reward_angle_degrees', 'observed_reward_angle_radians',
    'interagent_distance', 'mean_pairwise_distance', 'punish_count', 'abstention',
    'abstention_formula', 'pollution_cleaned', 'preparedness', 'transitions',
    ]

SUMMARY_FIELDS = [
    'name', 'environment', 'mode', 'svo_mean_degrees', 'svo_std_degrees', 'svo_std_radians',
    'weight', 'seed', 'status', 'collective_return', 'equality', 'median_return',
    'all_positive', 'shifted_episodes', 'first_round', 'last_round', 'episodes',
    ]

AGGREGATE_FIELDS = [
    'environment', 'mode', 'svo_mean_degrees', 'svo_std_degrees', 'weight', 'populations',
    'collective_return_mean', 'collective_return_std', 'equality_mean', 'equality_std',
    'median_return_mean', 'median_return_std', 'all_positive_fraction',
    ]


def format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return '' if math.isnan(value) else repr(value)
    return str(value)


def _optional_float(value: str) -> Optional[float]:
    return float(value) if value != '' else None


def write_csv(path: Union[str, Path], fieldnames: Sequence[str],
              rows: Iterable[Mapping[str, Any]]) -> Path:
    """Write C{rows}, which may be empty, below a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as f:
        w = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction='ignore', lineterminator='\n')
        w.writeheader()
        for row in rows:
            w.writerow({k: format_value(row.get(k)) for k in fieldnames})
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open(encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


class CsvLog:
    """
    A CSV file that grows while a run progresses. Rows are flushed as they
    are written so an interrupted run keeps everything logged so far.
    """

    def __init__(self, path: Union[str, Path], fieldnames: Sequence[str], append: bool = False):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        exists = append and self.path.exists() and self.path.stat().st_size > 0
        self._file: IO[str] = self.path.open('a' if exists else 'w', encoding='utf-8', newline='')
        self._writer = csv.DictWriter(self._file, fieldnames=self.fieldnames,
                                      extrasaction='ignore', lineterminator='\n')
        if not exists:
            self._writer.writeheader()
            self._file.flush()

    def write(self, rows: Iterable[Mapping[str, Any]]) -> None:
        for row in rows:
            self._writer.writerow({k: format_value(row.get(k)) for k in self.fieldnames})
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> 'CsvLog':
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def training_log_dict(row: TrainingLogRow) -> Dict[str, Any]:
    data = attr.asdict(row)
    data['svo_radians'] = row.svo_radians
    return data


def read_training_log(path: Union[str, Path]) -> List[TrainingLogRow]:
    """
    @raise MetricsError: If the file is missing or a row does not parse.
    """
    try:
        records = read_csv(path)
    except OSError as e:
        raise MetricsError(f"cannot read training log {path}: {e.strerror}") from e
    rows = []
    for i, record in enumerate(records):
        try:
            rows.append(TrainingLogRow(
                round=int(record['round']),
                arena=int(record['arena']),
                agent_id=int(record['agent_id']),
                svo_degrees=float(record['svo_degrees']),
                extrinsic_return=float(record['extrinsic_return']),
                utility_return=float(record['utility_return']),
                policy_loss=_optional_float(record['policy_loss']),
                value_loss=_optional_float(record['value_loss']),
                entropy=_optional_float(record['entropy']),
                punish_count=int(record['punish_count']),
                ))
        except (KeyError, ValueError) as e:
            raise MetricsError(f"{path}: bad row {i + 2}: {e}") from e
    return rows


def truncate_round_log(path: Union[str, Path], before_round: int,
                       fieldnames: Sequence[str] = TRAINING_LOG_FIELDS) -> int:
    """
    Drop the rows of rounds from C{before_round} on from a per-round log,
    as logged by a run that is resumed from an earlier checkpoint.

    @return: The number of rows kept.
    """
    path = Path(path)
    if not path.exists():
        return 0
    kept = [r for r in read_csv(path) if int(r['round']) < before_round]
    with path.open('w', encoding='utf-8', newline='') as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        w.writeheader()
        w.writerows(kept)
    return len(kept)


def episode_metrics_dict(row: EpisodeMetrics) -> Dict[str, Any]:
    data = attr.asdict(row)
    data['svo_radians'] = None if row.svo_degrees is None else math.radians(row.svo_degrees)
    data['observed_reward_angle_radians'] = row.observed_reward_angle
    data['observed_reward_angle_degrees'] = row.observed_reward_angle_degrees
    data['abstention_formula'] = ABSTENTION_FORMULA if row.abstention is not None else None
    return data


def write_episode_metrics(path: Union[str, Path], rows: Iterable[EpisodeMetrics]) -> Path:
    return write_csv(path, EPISODE_METRICS_FIELDS, (episode_metrics_dict(r) for r in rows))


def summary_dict(summary: Optional[PopulationSummary], **cell: Any) -> Dict[str, Any]:
    """
    A summary CSV row: the cell description and, unless the cell failed,
    its population summary.
    """
    data: Dict[str, Any] = dict(cell)
    if 'svo_std_degrees' in data and data['svo_std_degrees'] is not None:
        data['svo_std_radians'] = math.radians(data['svo_std_degrees'])
    if summary is not None:
        data.update(attr.asdict(summary))
        data.setdefault('status', 'ok')
    return data


def aggregate_summaries(rows: Sequence[Mapping[str, str]]) -> List[Dict[str, Any]]:
    """
    Mean and standard deviation across seeds of the successful summary rows
    sharing an environment, mode, SVO mean, SVO spread and weight.
    """
    groups: Dict[Tuple[str, ...], List[Mapping[str, str]]] = {}
    for row in rows:
        if row.get('status', 'ok') != 'ok':
            continue
        key = tuple(row.get(k, '') for k in
                    ('environment', 'mode', 'svo_mean_degrees', 'svo_std_degrees', 'weight'))
        groups.setdefault(key, []).append(row)

    def stats(values: List[str]) -> Tuple[Optional[float], Optional[float]]:
        data = np.array([float(v) for v in values if v != ''], dtype=np.float64)
        if not len(data):
            return None, None
        return float(data.mean()), float(data.std())

    aggregated = []
    for key, members in groups.items():
        environment, mode, mean, std, weight = key
        out: Dict[str, Any] = {
            'environment': environment, 'mode': mode, 'svo_mean_degrees': mean,
            'svo_std_degrees': std, 'weight': weight, 'populations': len(members)}
        for name in ('collective_return', 'equality', 'median_return'):
            out[f'{name}_mean'], out[f'{name}_std'] = stats([m[name] for m in members])
        out['all_positive_fraction'] = float(np.mean(
            [m.get('all_positive') == 'true' for m in members]))
        aggregated.append(out)
    return aggregated


def export_run(
        run_dir: Union[str, Path],
        window: EquilibriumWindow,
        logger: Callable[..., None] = null_logger,
        **cell: Any,
        ) -> Path:
    """
    Recompute the summary of a finished run from its training log.

    @return: The path of the summary CSV written into C{run_dir}.
    @raise MetricsError: If the training log is missing or empty.
    """
    run_dir = Path(run_dir)
    rows = read_training_log(run_dir / TRAINING_LOG_NAME)
    summary = population_summary(rows, window)
    logger('export', f'{run_dir}: rounds {summary.first_round}-{summary.last_round}, '
                     f'collective return {summary.collective_return:.2f}, '
                     f'equality {summary.equality:.3f}, median return {summary.median_return:.2f}',
           thresh=1)
    return write_csv(run_dir / SUMMARY_NAME, SUMMARY_FIELDS, [summary_dict(summary, **cell)])
