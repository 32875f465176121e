"""HarvestPatch: a common-pool resource with patch-local stock and flow.

Apples grow on sites grouped into patches. An empty site respawns with a
probability that depends on the number of live apples within the regrowth
radius, and every such apple belongs to the same patch. A patch whose last
apple is eaten can therefore never recover.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np

from svoarena.grid import (
    HARVEST, GameMap, GridEvent, GridWorld, MapError, Position, Resource
)

RegrowthTable = Tuple[Tuple[int, float], ...]

DEFAULT_REGROWTH: RegrowthTable = ((0, 0.0), (1, 0.01), (3, 0.05), (6, 0.1))
"""Live-neighbour count bands: 0, 1-2, 3-5 and 6 or more."""


def respawn_probability(table: RegrowthTable, counts: np.ndarray) -> np.ndarray:
    """
    Look up per-site respawn probabilities. A count of zero always maps to
    zero, whatever the table says.
    """
    counts = np.asarray(counts)
    probs = np.zeros(counts.shape, dtype=np.float64)
    for threshold, prob in table:
        probs[counts >= threshold] = prob
    probs[counts <= 0] = 0.0
    return probs


@attr.s(auto_attribs=True)
class Patch:
    patch_id: int
    sites: List[Position]
    live_count: int = 0
    depleted: bool = False


class PatchMap:
    """
    The apple sites of a HarvestPatch map and their regrowth rule.

    @raise MapError: If a site is farther than the regrowth radius from a site
        of its own patch, or within it of a site of another patch.
    """

    def __init__(
            self,
            patches: Sequence[Patch],
            regrowth_radius: float = 3.0,
            regrowth_probabilities: RegrowthTable = DEFAULT_REGROWTH,
            metric: str = 'euclidean',
            ):
        if not patches:
            raise MapError([('map', "HarvestPatch map has no apple patches")])
        self.patches = list(patches)
        self.regrowth_radius = regrowth_radius
        self.regrowth_probabilities = regrowth_probabilities
        self.metric = metric

        sites = [site for patch in self.patches for site in patch.sites]
        self.positions = np.array(sites, dtype=np.int64).reshape(-1, 2)
        self.site_patch = np.array(
            [i for i, patch in enumerate(self.patches) for _ in patch.sites], dtype=np.int64)
        self._index: Dict[Position, int] = {site: i for i, site in enumerate(sites)}

        diff = self.positions[:, None, :] - self.positions[None, :, :]
        if metric == 'euclidean':
            dist = np.sqrt((diff ** 2).sum(axis=-1))
        elif metric == 'manhattan':
            dist = np.abs(diff).sum(axis=-1)
        else:
            raise MapError([('regrowth_metric', f"unknown metric {metric!r}")])
        same = self.site_patch[:, None] == self.site_patch[None, :]
        within = dist <= regrowth_radius
        bad = (same & ~within) | (~same & within)
        if bad.any():
            a, b = (int(v) for v in np.argwhere(bad)[0])
            raise MapError([('map',
                f"apple sites {sites[a]} (patch {self.patches[self.site_patch[a]].patch_id}) "
                f"and {sites[b]} (patch {self.patches[self.site_patch[b]].patch_id}) "
                f"violate the regrowth radius {regrowth_radius}")])
        self.neighbors = (within & ~np.eye(len(sites), dtype=bool)).astype(np.int32)
        self.live = np.zeros(len(sites), dtype=bool)

    @classmethod
    def fromGameMap(cls, game_map: GameMap, **kwargs: object) -> 'PatchMap':
        """Collect the patch-annotated cells of a map, in row-major order."""
        by_id: Dict[int, List[Position]] = {}
        rows, cols = np.nonzero(game_map.patch_ids >= 0)
        for r, c in zip(rows, cols):
            by_id.setdefault(int(game_map.patch_ids[r, c]), []).append((int(r), int(c)))
        patches = [Patch(pid, by_id[pid]) for pid in sorted(by_id)]
        return cls(patches, **kwargs)  # type: ignore[arg-type]

    @property
    def site_count(self) -> int:
        return len(self.live)

    def _sync_counts(self) -> None:
        counts = np.bincount(self.site_patch[self.live], minlength=len(self.patches))
        for patch, count in zip(self.patches, counts):
            patch.live_count = int(count)
            if count == 0:
                patch.depleted = True

    def depleted_mask(self) -> np.ndarray:
        """Per-site flag: the site's patch is depleted."""
        flags = np.array([p.depleted for p in self.patches], dtype=bool)
        return flags[self.site_patch]

    def live_neighbor_counts(self) -> np.ndarray:
        return self.neighbors @ self.live.astype(np.int32)

    def has_apple(self, position: Position) -> bool:
        index = self._index.get(position)
        return index is not None and bool(self.live[index])

    def patch_of(self, position: Position) -> Optional[Patch]:
        index = self._index.get(position)
        return None if index is None else self.patches[self.site_patch[index]]

    def is_endangered(self, position: Position) -> bool:
        """Is the apple at C{position} the last live apple of its patch?"""
        patch = self.patch_of(position)
        return patch is not None and self.has_apple(position) and patch.live_count == 1

    def regrow(self, rng: np.random.Generator, blocked: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Respawn apples for one step.

        One uniform variate is drawn per site whether or not the site can
        respawn, so the stream seen by a site does not depend on the state of
        distant patches.

        @param blocked: Per-site flags for sites that may not respawn this
            step, such as sites under an avatar.
        @return: Indices of the sites that respawned.
        """
        draws = rng.random(self.site_count)
        probs = respawn_probability(self.regrowth_probabilities, self.live_neighbor_counts())
        candidates = ~self.live & ~self.depleted_mask()
        if blocked is not None:
            candidates &= ~blocked
        spawned = np.nonzero(candidates & (draws < probs))[0]
        if len(spawned):
            self.live[spawned] = True
            self._sync_counts()
        return spawned

    def harvest(self, position: Position) -> int:
        """
        Remove the apple at C{position}.

        @return: The reward: 1 if there was an apple, 0 otherwise.
        """
        index = self._index.get(position)
        if index is None or not self.live[index]:
            return 0
        self.live[index] = False
        patch = self.patches[self.site_patch[index]]
        patch.live_count -= 1
        if patch.live_count == 0:
            patch.depleted = True
        return 1

    def endangered_sites(self) -> List[Position]:
        """Positions of every apple that is the only live apple of its patch."""
        result = []
        for patch in self.patches:
            if patch.live_count == 1:
                result.extend(site for site in patch.sites if self.has_apple(site))
        return result

    def apple_positions(self) -> List[Position]:
        return [tuple(int(v) for v in self.positions[i]) for i in np.nonzero(self.live)[0]]  # type: ignore[misc]


def spawn_initial(template: PatchMap, rng: np.random.Generator, probability: float = 0.8) -> PatchMap:
    """
    Lay out the starting apples: each site independently holds an apple with
    C{probability}; a patch that comes up empty is drawn again.

    @raise MapError: If C{probability} is not positive, since no patch could
        ever be filled.
    """
    if probability <= 0:
        raise MapError([('initial_apple_probability', "must be positive")])
    template.live[:] = False
    for patch in template.patches:
        indices = np.array([template._index[site] for site in patch.sites])
        while True:
            draws = rng.random(len(indices)) < probability
            if draws.any():
                break
        template.live[indices] = draws
        patch.depleted = False
    template._sync_counts()
    return template


class HarvestPatchDynamics:
    """L{svoarena.grid.Dynamics} for HarvestPatch: eight actions, no cleaning."""

    name = 'harvestpatch'
    action_count = 8

    def __init__(
            self,
            regrowth_radius: float = 3.0,
            regrowth_probabilities: RegrowthTable = DEFAULT_REGROWTH,
            metric: str = 'euclidean',
            initial_apple_probability: float = 0.8,
            ):
        self.regrowth_radius = regrowth_radius
        self.regrowth_probabilities = regrowth_probabilities
        self.metric = metric
        self.initial_apple_probability = initial_apple_probability
        self.patches: PatchMap

    @property
    def patch_count(self) -> int:
        return len(self.patches.patches)

    def reset(self, world: GridWorld) -> None:
        self.patches = PatchMap.fromGameMap(
            world.game_map,
            regrowth_radius=self.regrowth_radius,
            regrowth_probabilities=self.regrowth_probabilities,
            metric=self.metric)
        spawn_initial(self.patches, world.rng, self.initial_apple_probability)
        rows, cols = self.patches.positions[self.patches.live].T
        world.resources[rows, cols] = Resource.APPLE

    def on_enter(self, world: GridWorld, agent_id: int, position: Position) -> int:
        if not self.patches.has_apple(position):
            return 0
        endangered = self.patches.is_endangered(position)
        reward = self.patches.harvest(position)
        world.resources[position] = Resource.EMPTY
        world.events.append(GridEvent(world.step_index, agent_id, HARVEST, reward, endangered))
        return reward

    def on_beam(self, world: GridWorld, beam: object) -> None:
        pass

    def after_step(self, world: GridWorld) -> None:
        rows, cols = self.patches.positions.T
        blocked = world.occupancy[rows, cols] >= 0
        spawned = self.patches.regrow(world.rng, blocked)
        world.resources[rows[spawned], cols[spawned]] = Resource.APPLE

    def digest_parts(self) -> Sequence[bytes]:
        return [self.patches.live.tobytes(),
                bytes(int(p.depleted) for p in self.patches.patches)]
