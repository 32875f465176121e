"""Build worlds for the configured environment."""

from typing import Any, Dict, Mapping

import attr

from svoarena.cleanup import CleanupDynamics
from svoarena.config import RunConfig
from svoarena.grid import Dynamics, GameMap, GridWorld, MapError, load_map
from svoarena.harvestpatch import HarvestPatchDynamics

_WORLD_KEYS = ('punish_beam_length', 'clean_beam_length', 'punish_penalty',
               'punish_cost', 'punish_timeout', 'window_size')

_DYNAMICS_KEYS = {
    'harvestpatch': ('regrowth_radius', 'regrowth_probabilities', 'regrowth_metric',
                     'initial_apple_probability'),
    'cleanup': ('pollution_spawn_prob', 'depletion_threshold', 'max_spawn_prob',
                'growth_profile', 'initial_pollution'),
    }


@attr.s(auto_attribs=True, eq=False)
class EnvironmentSpec:
    """
    An environment, its map and every dynamics parameter: enough to create
    identical worlds from a seed.
    """

    name: str
    game_map: GameMap
    episode_length: int = 1000
    world_options: Dict[str, Any] = attr.ib(factory=dict)
    dynamics_options: Dict[str, Any] = attr.ib(factory=dict)

    @classmethod
    def fromConfig(cls, config: RunConfig) -> 'EnvironmentSpec':
        """
        @raise MapError: If the map cannot be loaded.
        """
        game_map = load_map(config.map_path())
        return cls(
            config.environment,
            game_map,
            config.episode_length,
            {key: getattr(config, key) for key in _WORLD_KEYS},
            {key: getattr(config, key) for key in _DYNAMICS_KEYS[config.environment]},
            )

    @property
    def action_count(self) -> int:
        return 8 if self.name == 'harvestpatch' else 9

    def make_dynamics(self) -> Dynamics:
        options = dict(self.dynamics_options)
        if self.name == 'harvestpatch':
            if 'regrowth_metric' in options:
                options['metric'] = options.pop('regrowth_metric')
            if 'regrowth_probabilities' in options:
                options['regrowth_probabilities'] = tuple(
                    (int(k), float(p)) for k, p in options['regrowth_probabilities'])
            return HarvestPatchDynamics(**options)
        if self.name == 'cleanup':
            return CleanupDynamics(**options)
        raise MapError([('environment', f"unknown environment {self.name!r}")])

    def make_world(self, n_agents: int, seed: int) -> GridWorld:
        return GridWorld(self.game_map, self.make_dynamics(), n_agents, seed,
                         **self.world_options)

    def to_json(self) -> Dict[str, Any]:
        """A JSON-compatible description, map text included."""
        return {
            'environment': self.name,
            'map_name': self.game_map.name,
            'map_text': self.game_map.text,
            'map_hash': self.game_map.digest,
            'episode_length': self.episode_length,
            'world_options': dict(self.world_options),
            'dynamics_options': {
                k: [list(band) for band in v] if k == 'regrowth_probabilities' else v
                for k, v in self.dynamics_options.items()},
            }

    @classmethod
    def fromJson(cls, data: Mapping[str, Any]) -> 'EnvironmentSpec':
        """
        Inverse of L{to_json}.

        @raise MapError: If the embedded map does not parse or its hash does
            not match the recorded one.
        """
        game_map = GameMap.fromText(data['map_text'], name=data.get('map_name', '<replay>'))
        if game_map.digest != data['map_hash']:
            raise MapError([('map', f"map hash mismatch for {game_map.name}")])
        return cls(data['environment'], game_map, int(data['episode_length']),
                   dict(data['world_options']), dict(data['dynamics_options']))
