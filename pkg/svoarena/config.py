"""Run configuration and sweep specifications.

Both are read from config files in the C{key: value} syntax::

    # HarvestPatch smoke run
    environment: harvestpatch
    population_size: 6
    svo_mean: 45

Lists are comma separated, and float lists also accept
C{linspace(start, stop, count)}. Angles are always given in degrees.
Unknown keys are an error: a typo in a sweep grid otherwise silently runs
the wrong experiment.
"""

import math
import os
import re
from pathlib import Path
from typing import (
    Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple,
    Union
)

import attr
import numpy as np

ENV_PREFIX = 'SVOARENA_'
"""Prefix of environment variables overriding run config keys."""

ENVIRONMENTS = ('harvestpatch', 'cleanup')

DEFAULT_WEIGHTS = {'harvestpatch': 0.2, 'cleanup': 0.1}
"""SVO weight w giving the highest collective return per environment."""

PACKAGE_DIR = Path(__file__).parent
MAPS_DIR = PACKAGE_DIR / 'maps'
CONFIGS_DIR = PACKAGE_DIR / 'configs'


class ConfigurationError(ValueError):
    """
    Raised for invalid configuration.

    @ivar diagnostics: C{(key, message)} pairs, one per offending field.
    """

    def __init__(self, diagnostics: Sequence[Tuple[str, str]]):
        self.diagnostics = list(diagnostics)
        super().__init__('; '.join(f'{key}: {message}' for key, message in self.diagnostics))


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_optional_float(value: str) -> Optional[float]:
    if value.strip().lower() in ('', 'none', 'default'):
        return None
    return float(value)


def _parse_optional_str(value: str) -> Optional[str]:
    value = value.strip()
    return None if value.lower() in ('', 'none', 'default') else os.path.expanduser(value)


_LINSPACE_RE = re.compile(r'^linspace\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)$')

def parse_float_list(value: str) -> List[float]:
    """
    Parse C{"1, 2.5, 4"} or C{"linspace(15, 75, 5)"}.
    """
    value = value.strip()
    match = _LINSPACE_RE.match(value)
    if match:
        start, stop, count = match.groups()
        return [float(v) for v in np.linspace(float(start), float(stop), int(count))]
    return [float(v) for v in value.split(',') if v.strip()]


def parse_int_list(value: str) -> List[int]:
    return [int(v) for v in value.split(',') if v.strip()]


def parse_regrowth_table(value: str) -> Tuple[Tuple[int, float], ...]:
    """
    Parse a regrowth table such as C{"0:0, 1:0.01, 3:0.05, 6:0.1"}. Each
    entry gives the respawn probability from that live-neighbour count on.
    """
    bands = []
    for item in value.split(','):
        if not item.strip():
            continue
        count, _, prob = item.partition(':')
        bands.append((int(count), float(prob)))
    bands.sort()
    if not bands or bands[0][0] != 0:
        raise ValueError("the table must start at a neighbour count of 0")
    return tuple(bands)


def _format_regrowth_table(table: Tuple[Tuple[int, float], ...]) -> str:
    return ', '.join(f'{count}:{prob!r}' for count, prob in table)


def _field(default: Any, parse: Callable[[str], Any], help: str,
           format: Callable[[Any], str] = str) -> Any:
    return attr.ib(default=default, metadata={'parse': parse, 'help': help, 'format': format})


@attr.s(auto_attribs=True)
class RunConfig:
    """
    Everything needed to reproduce a training or evaluation run.
    """

    environment: str = _field('harvestpatch', str, "harvestpatch or cleanup")
    map: Optional[str] = _field(None, _parse_optional_str,
        "ASCII map file (default: the packaged map of the environment)",
        format=lambda v: '' if v is None else v)
    episode_length: int = _field(1000, int, "steps per episode")
    window_size: int = _field(15, int, "side of the square observation window")

    punish_beam_length: int = _field(10, int, "punishment beam length in cells")
    clean_beam_length: int = _field(3, int, "cleaning beam length in cells")
    punish_penalty: int = _field(-50, int, "reward of an agent hit by a punishment beam")
    punish_cost: int = _field(-1, int, "reward for firing the punishment beam")
    punish_timeout: int = _field(0, int, "steps a punished agent ignores its actions")

    regrowth_radius: float = _field(3.0, float, "HarvestPatch regrowth radius")
    regrowth_metric: str = _field('euclidean', str, "euclidean or manhattan")
    regrowth_probabilities: Tuple[Tuple[int, float], ...] = _field(
        ((0, 0.0), (1, 0.01), (3, 0.05), (6, 0.1)), parse_regrowth_table,
        "live-neighbour count bands to respawn probability",
        format=_format_regrowth_table)
    initial_apple_probability: float = _field(0.8, float,
        "probability that a HarvestPatch site starts with an apple")

    pollution_spawn_prob: float = _field(0.5, float, "per-step river pollution probability")
    depletion_threshold: float = _field(0.4, float,
        "pollution fraction at which orchard growth stops")
    max_spawn_prob: float = _field(0.05, float, "orchard growth rate on a clean river")
    growth_profile: str = _field('linear', str, "linear or stepwise")
    initial_pollution: float = _field(1.0, float,
        "fraction of river cells polluted at episode start")

    population_size: int = _field(30, int, "agents in the population (N)")
    group_size: int = _field(5, int, "agents per arena (n)")
    svo_distribution: str = _field('homogeneous', str, "homogeneous or normal")
    svo_mean: float = _field(0.0, float, "SVO target (homogeneous) or mean, degrees")
    svo_std: float = _field(0.0, float, "SVO standard deviation, degrees")
    svo_weight: Optional[float] = _field(None, _parse_optional_float,
        "SVO weight w (default: 0.2 HarvestPatch, 0.1 Cleanup)",
        format=lambda v: '' if v is None else repr(v))
    smoothing: float = _field(0.975, float, "reward trace smoothing coefficient")

    gamma: float = _field(0.99, float, "discount factor")
    learning_rate: float = _field(4e-4, float, "optimiser learning rate")
    entropy_coef: float = _field(0.003, float, "entropy bonus coefficient")
    value_coef: float = _field(0.5, float, "value loss coefficient")
    optimizer: str = _field('rmsprop', str, "rmsprop, adam or sgd")
    max_grad_norm: float = _field(40.0, float, "gradient norm clip, 0 disables")
    batch_size: int = _field(16, int, "maximum trajectories in one agent update")
    conv_channels: int = _field(6, int, "convolution output channels")
    hidden_size: int = _field(64, int, "feedforward and recurrent width")
    activation: str = _field('relu', str, "relu or tanh")

    arenas: int = _field(100, int, "arenas per training round")
    rounds: int = _field(1000, int, "training rounds")
    seed: int = _field(0, int, "master seed")
    output: Optional[str] = _field(None, _parse_optional_str, "run directory",
        format=lambda v: '' if v is None else v)
    deterministic: bool = _field(False, _parse_bool,
        "run arenas one at a time for bit-exact reproducibility",
        format=lambda v: 'true' if v else 'false')
    workers: int = _field(0, int, "arena worker threads, 0 for one per CPU")
    checkpoint_every: int = _field(50, int, "rounds between checkpoints")
    replay_every: int = _field(0, int, "rounds between replay samples, 0 disables")

    equilibrium_rule: str = _field('trailing', str, "trailing or plateau")
    equilibrium_fraction: float = _field(0.1, float, "trailing fraction of rounds")
    plateau_tolerance: float = _field(0.01, float, "plateau rule slope tolerance")
    plateau_min_rounds: int = _field(10, int, "plateau rule minimum window")

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in attr.fields(cls)]

    @classmethod
    def fromMapping(cls, values: Mapping[str, str], base: Optional['RunConfig'] = None) -> 'RunConfig':
        """
        Build a config from raw string values layered over C{base}
        (the defaults if not given) and validate it.

        @raise ConfigurationError: With one diagnostic per bad field.
        """
        fields = attr.fields_dict(cls)
        changes: Dict[str, Any] = {}
        diagnostics: List[Tuple[str, str]] = []
        for key, raw in values.items():
            field = fields.get(key)
            if field is None:
                diagnostics.append((key, "unknown key"))
                continue
            try:
                changes[key] = field.metadata['parse'](raw)
            except ValueError as e:
                diagnostics.append((key, f"invalid value {raw!r}: {e}"))
        if diagnostics:
            raise ConfigurationError(diagnostics)
        config = attr.evolve(base or cls(), **changes)
        config.validate()
        return config

    def validate(self) -> None:
        """
        @raise ConfigurationError: If any field is out of range.
        """
        problems: List[Tuple[str, str]] = []
        def check(ok: bool, key: str, message: str) -> None:
            if not ok:
                problems.append((key, message))

        check(self.environment in ENVIRONMENTS, 'environment',
              f"must be one of {', '.join(ENVIRONMENTS)}")
        if self.environment in ENVIRONMENTS:
            check(self.map_path().is_file(), 'map', f"map file not found: {self.map_path()}")
        check(self.episode_length >= 1, 'episode_length', "must be at least 1")
        check(self.window_size >= 1 and self.window_size % 2 == 1, 'window_size',
              "must be a positive odd number")
        check(self.punish_beam_length >= 0, 'punish_beam_length', "must be non-negative")
        check(self.clean_beam_length >= 0, 'clean_beam_length', "must be non-negative")
        check(self.punish_timeout >= 0, 'punish_timeout', "must be non-negative")
        check(self.regrowth_radius > 0, 'regrowth_radius', "must be positive")
        check(self.regrowth_metric in ('euclidean', 'manhattan'), 'regrowth_metric',
              "must be euclidean or manhattan")
        check(all(0 <= p <= 1 for _, p in self.regrowth_probabilities),
              'regrowth_probabilities', "probabilities must lie in [0, 1]")
        check(0 < self.initial_apple_probability <= 1, 'initial_apple_probability',
              "must lie in (0, 1]")
        check(0 <= self.pollution_spawn_prob <= 1, 'pollution_spawn_prob', "must lie in [0, 1]")
        check(0 < self.depletion_threshold <= 1, 'depletion_threshold', "must lie in (0, 1]")
        check(0 <= self.max_spawn_prob <= 1, 'max_spawn_prob', "must lie in [0, 1]")
        check(self.growth_profile in ('linear', 'stepwise'), 'growth_profile',
              "must be linear or stepwise")
        check(0 <= self.initial_pollution <= 1, 'initial_pollution', "must lie in [0, 1]")
        check(self.population_size >= 1, 'population_size', "must be at least 1")
        check(2 <= self.group_size <= self.population_size, 'group_size',
              "must lie between 2 and population_size")
        check(self.svo_distribution in ('homogeneous', 'normal'), 'svo_distribution',
              "must be homogeneous or normal")
        check(0 <= self.svo_mean <= 90, 'svo_mean', "must lie in [0, 90] degrees")
        check(self.svo_std >= 0, 'svo_std', "must be non-negative")
        check(self.svo_weight is None or self.svo_weight >= 0, 'svo_weight',
              "must be non-negative")
        check(0 <= self.smoothing < 1, 'smoothing', "must lie in [0, 1)")
        check(0 <= self.gamma < 1, 'gamma', "must lie in [0, 1)")
        for key in ('learning_rate', 'entropy_coef', 'value_coef', 'max_grad_norm'):
            check(getattr(self, key) >= 0, key, "must be non-negative")
        check(self.optimizer in ('rmsprop', 'adam', 'sgd'), 'optimizer',
              "must be rmsprop, adam or sgd")
        check(self.batch_size >= 1, 'batch_size', "must be at least 1")
        check(self.conv_channels >= 1, 'conv_channels', "must be at least 1")
        check(self.hidden_size >= 1, 'hidden_size', "must be at least 1")
        check(self.activation in ('relu', 'tanh'), 'activation', "must be relu or tanh")
        check(self.arenas >= 1, 'arenas', "must be at least 1")
        check(self.rounds >= 0, 'rounds', "must be non-negative")
        check(self.workers >= 0, 'workers', "must be non-negative")
        check(self.checkpoint_every >= 1, 'checkpoint_every', "must be at least 1")
        check(self.replay_every >= 0, 'replay_every', "must be non-negative")
        check(self.equilibrium_rule in ('trailing', 'plateau'), 'equilibrium_rule',
              "must be trailing or plateau")
        check(0 < self.equilibrium_fraction <= 1, 'equilibrium_fraction', "must lie in (0, 1]")
        check(self.plateau_min_rounds >= 2, 'plateau_min_rounds', "must be at least 2")
        if problems:
            raise ConfigurationError(problems)

    def map_path(self) -> Path:
        if self.map is not None:
            return Path(self.map)
        return MAPS_DIR / f'{self.environment}.txt'

    @property
    def weight(self) -> float:
        """The SVO weight w, defaulting per environment."""
        if self.svo_weight is not None:
            return self.svo_weight
        return DEFAULT_WEIGHTS.get(self.environment, 0.0)

    @property
    def svo_mean_radians(self) -> float:
        return math.radians(self.svo_mean)

    @property
    def svo_std_radians(self) -> float:
        return math.radians(self.svo_std)

    def to_text(self) -> str:
        """
        Serialise in the config file syntax; L{read_run_config} reads it back.
        """
        lines = []
        for field in attr.fields(type(self)):
            value = getattr(self, field.name)
            lines.append(f'# {field.metadata["help"]}')
            lines.append(f'{field.name}: {field.metadata["format"](value)}')
        return '\n'.join(lines) + '\n'


def read_config_file(path: Union[str, Path], allowed: Sequence[str]) -> Dict[str, str]:
    """
    Read C{key: value} lines.

    @raise ConfigurationError: If the file is missing, a line does not parse
        or a key is not in C{allowed}.
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigurationError([('config', f"cannot read {path}: {e.strerror}")]) from e
    values: Dict[str, str] = {}
    problems = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if ':' not in line:
            problems.append(('config', f"don't understand line {i+1} of {path}"))
            continue
        k, v = line.split(':', 1)
        k = k.strip()
        if k not in allowed:
            problems.append((k, f"invalid option {k!r} on line {i+1} of {path}"))
            continue
        values[k] = v.strip()
    if problems:
        raise ConfigurationError(problems)
    return values


def environment_overrides(environ: Mapping[str, str], keys: Sequence[str]) -> Dict[str, str]:
    """
    Collect C{SVOARENA_<KEY>} variables for known keys, e.g.
    C{SVOARENA_ROUNDS=10} overrides C{rounds}.
    """
    overrides = {}
    for key in keys:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            overrides[key] = environ[name]
    return overrides


def read_run_config(
        path: Optional[Union[str, Path]],
        environ: Mapping[str, str] = os.environ,
        overrides: Optional[Mapping[str, str]] = None,
        ) -> RunConfig:
    """
    Resolve a run config: defaults, then the file (if any), then
    environment variables, then explicit overrides.

    A relative C{map} path in a config file is taken relative to the file.
    """
    values: Dict[str, str] = {}
    if path is not None:
        values.update(read_config_file(path, RunConfig.keys()))
        if values.get('map'):
            map_path = Path(os.path.expanduser(values['map']))
            if not map_path.is_absolute():
                candidate = Path(path).parent / map_path
                if candidate.exists():
                    values['map'] = str(candidate)
    values.update(environment_overrides(environ, RunConfig.keys()))
    values.update(overrides or {})
    return RunConfig.fromMapping(values)


SWEEP_MODES = ('heterogeneous', 'homogeneous', 'weight')

_SWEEP_KEYS = ('base', 'mode', 'svo_means', 'svo_stds', 'svo_values', 'weights', 'seeds')


@attr.s(auto_attribs=True, frozen=True)
class SweepCell:
    """One population of a sweep."""

    name: str
    config: RunConfig
    svo_mean: float
    svo_std: float
    weight: float
    seed: int


@attr.s(auto_attribs=True)
class SweepSpec:
    """
    A grid of populations over a base run config.

    In C{heterogeneous} mode the grid is C{svo_means x svo_stds x seeds} with
    normally distributed SVO, in C{homogeneous} mode C{svo_values x seeds}
    and in C{weight} mode C{weights x seeds} with homogeneous populations at
    the base config's SVO.
    """

    base: RunConfig
    mode: str = 'heterogeneous'
    svo_means: List[float] = attr.ib(factory=list)
    svo_stds: List[float] = attr.ib(factory=list)
    svo_values: List[float] = attr.ib(factory=list)
    weights: List[float] = attr.ib(factory=list)
    seeds: List[int] = attr.ib(factory=lambda: [0])

    def cells(self) -> List[SweepCell]:
        """
        Enumerate the populations of the grid, validating each config.

        @raise ConfigurationError: If the grid is empty or a cell is invalid.
        """
        cells = list(self._iter_cells())
        if not cells:
            raise ConfigurationError([('mode', f"{self.mode} sweep grid is empty")])
        return cells

    def _iter_cells(self) -> Iterator[SweepCell]:
        base = self.base
        def make(name: str, seed: int, **changes: Any) -> SweepCell:
            config = attr.evolve(base, seed=seed, **changes)
            config.validate()
            return SweepCell(name, config, config.svo_mean, config.svo_std, config.weight, seed)

        if self.mode == 'heterogeneous':
            for mean in self.svo_means:
                for std in self.svo_stds:
                    for seed in self.seeds:
                        yield make(f'mean{mean:g}-std{std:g}-seed{seed}', seed,
                                   svo_distribution='normal', svo_mean=mean, svo_std=std)
        elif self.mode == 'homogeneous':
            for value in self.svo_values:
                for seed in self.seeds:
                    yield make(f'svo{value:g}-seed{seed}', seed,
                               svo_distribution='homogeneous', svo_mean=value, svo_std=0.0)
        elif self.mode == 'weight':
            for weight in self.weights:
                for seed in self.seeds:
                    yield make(f'w{weight:g}-seed{seed}', seed,
                               svo_distribution='homogeneous', svo_weight=weight)


def read_sweep_spec(
        path: Union[str, Path],
        environ: Mapping[str, str] = os.environ,
        ) -> SweepSpec:
    """
    Read a sweep file. Besides the sweep keys it may set any run config key,
    overriding the base config for every cell.

    @raise ConfigurationError: On unknown keys, bad values or an invalid
        base config.
    """
    values = read_config_file(path, list(_SWEEP_KEYS) + RunConfig.keys())
    base_path: Optional[Path] = None
    if values.get('base'):
        base_path = Path(os.path.expanduser(values['base']))
        if not base_path.is_absolute():
            base_path = Path(path).parent / base_path
    run_values = {k: v for k, v in values.items() if k not in _SWEEP_KEYS}
    base = read_run_config(base_path, environ=environ, overrides=run_values)

    problems: List[Tuple[str, str]] = []
    mode = values.get('mode', 'heterogeneous').strip()
    if mode not in SWEEP_MODES:
        problems.append(('mode', f"must be one of {', '.join(SWEEP_MODES)}"))
    parsed: Dict[str, Any] = {}
    for key, parse in (('svo_means', parse_float_list), ('svo_stds', parse_float_list),
                       ('svo_values', parse_float_list), ('weights', parse_float_list),
                       ('seeds', parse_int_list)):
        if key in values:
            try:
                parsed[key] = parse(values[key])
            except ValueError as e:
                problems.append((key, f"invalid value {values[key]!r}: {e}"))
    if problems:
        raise ConfigurationError(problems)
    spec = SweepSpec(base, mode, **parsed)
    return spec
