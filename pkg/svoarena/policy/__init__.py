"""Policies: learned actor-critic networks and scripted baselines.

Anything that picks actions for an avatar implements L{Actor}. The episode
runner hands every actor the world as well as the observation; a learned
policy only looks at the observation, scripted ones may use the world.
"""

from typing import TYPE_CHECKING, Any, Dict, Optional, Tuple

import attr
import numpy as np
import torch

from svoarena.grid import GridWorld, Observation
from svoarena.policy.network import ArchitectureSpec, PolicyNetwork, preprocess

if TYPE_CHECKING:
    from typing_extensions import Protocol
else:
    Protocol = object


class NonFiniteLossError(ArithmeticError):
    """
    Raised when an update produces a NaN or infinite loss. The update is not
    applied.

    @ivar diagnostics: The loss terms of the rejected update.
    """

    def __init__(self, diagnostics: Dict[str, float]):
        self.diagnostics = diagnostics
        terms = ', '.join(f'{k}={v!r}' for k, v in diagnostics.items())
        super().__init__(f"non-finite loss ({terms})")


@attr.s(auto_attribs=True, eq=False)
class ActResult:
    action: int
    log_prob: float = 0.0
    value: float = 0.0
    state: Any = None


class Actor(Protocol):
    action_count: int

    def initial_state(self) -> Any:
        ...

    def act(self, world: GridWorld, agent_id: int, obs: Observation, state: Any,
            rng: np.random.Generator) -> ActResult:
        ...


class PolicyHandle:
    """
    A learned policy: the network, its optimiser, and the L{Actor} interface.

    Acting only reads the parameters; several threads may act with the same
    handle while nobody updates it.
    """

    def __init__(
            self,
            spec: ArchitectureSpec,
            seed: int = 0,
            dtype: torch.dtype = torch.float32,
            greedy: bool = False,
            ):
        self.spec = spec
        self.dtype = dtype
        self.greedy = greedy
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.network = PolicyNetwork(spec).to(dtype)
        self.optimizer: Optional[torch.optim.Optimizer] = None
        self.pending_optimizer_state: Optional[Dict[str, Any]] = None
        """Optimiser state restored from a checkpoint, applied when the optimiser is created."""

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    def initial_state(self) -> torch.Tensor:
        return self.network.initial_state(1)

    def distribution(self, obs: Observation, state: torch.Tensor) -> Tuple[np.ndarray, float, torch.Tensor]:
        """
        Action probabilities, value estimate and next recurrent state for one
        observation.

        @raise ValueError: If the observation does not match the architecture.
        """
        expected = (self.spec.window, self.spec.window, self.spec.channels)
        if obs.window.shape != expected:
            raise ValueError(f"observation of shape {obs.window.shape}, expected {expected}")
        with torch.no_grad():
            logits, value, new_state = self.network(
                preprocess(obs.window[None], self.dtype),
                torch.tensor([int(obs.orientation)]),
                state)
            probs = torch.softmax(logits[0].double(), dim=-1).numpy()
        return probs, float(value[0]), new_state

    def act(self, world: Optional[GridWorld], agent_id: int, obs: Observation,
            state: torch.Tensor, rng: np.random.Generator) -> ActResult:
        return act(self, obs, state, rng, greedy=self.greedy)


def act(
        policy: PolicyHandle,
        obs: Observation,
        state: torch.Tensor,
        rng: np.random.Generator,
        greedy: bool = False,
        ) -> ActResult:
    """
    Sample an action from the policy's softmax, or take the argmax when
    C{greedy}. Sampling draws exactly one variate from C{rng}.
    """
    probs, value, new_state = policy.distribution(obs, state)
    if greedy:
        action = int(np.argmax(probs))
    else:
        u = rng.random()
        action = min(int(np.searchsorted(np.cumsum(probs), u, side='right')), len(probs) - 1)
    return ActResult(action, float(np.log(max(probs[action], 1e-300))), value, new_state)
