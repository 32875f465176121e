"""
The actor-critic network: one convolution over the observation window, a
feedforward layer, a gated recurrent cell and two linear heads.
"""

from typing import Any, Dict, Tuple

import attr
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

ORIENTATIONS = 4


@attr.s(auto_attribs=True, frozen=True)
class ArchitectureSpec:
    """
    Everything that determines the shape of a L{PolicyNetwork}. The parameter
    count is a function of this spec alone.
    """

    window: int = 15
    channels: int = 3
    conv_channels: int = 6
    kernel: int = 3
    hidden: int = 64
    recurrent: int = 64
    """Width of the recurrent state; 0 disables the recurrent cell."""

    action_count: int = 8
    activation: str = 'relu'

    def to_json(self) -> Dict[str, Any]:
        return attr.asdict(self)

    @classmethod
    def fromJson(cls, data: Dict[str, Any]) -> 'ArchitectureSpec':
        return cls(**data)

    @property
    def conv_side(self) -> int:
        return self.window - self.kernel + 1

    @property
    def feature_width(self) -> int:
        return self.recurrent or self.hidden


def parameter_count(spec: ArchitectureSpec) -> int:
    conv = spec.channels * spec.conv_channels * spec.kernel ** 2 + spec.conv_channels
    fc_in = spec.conv_channels * spec.conv_side ** 2 + ORIENTATIONS
    fc = fc_in * spec.hidden + spec.hidden
    gru = 0
    if spec.recurrent:
        gru = 3 * spec.recurrent * (spec.hidden + spec.recurrent) + 6 * spec.recurrent
    heads = (spec.feature_width + 1) * (spec.action_count + 1)
    return conv + fc + gru + heads


class PolicyNetwork(nn.Module):

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        if spec.conv_side < 1:
            raise ValueError(f"kernel {spec.kernel} does not fit a window of {spec.window}")
        if spec.activation not in ('relu', 'tanh'):
            raise ValueError(f"unknown activation {spec.activation!r}")
        self.spec = spec
        self.conv = nn.Conv2d(spec.channels, spec.conv_channels, spec.kernel)
        self.fc = nn.Linear(spec.conv_channels * spec.conv_side ** 2 + ORIENTATIONS, spec.hidden)
        self.gru = nn.GRUCell(spec.hidden, spec.recurrent) if spec.recurrent else None
        self.logits = nn.Linear(spec.feature_width, spec.action_count)
        self.value = nn.Linear(spec.feature_width, 1)
        # Small logits keep a fresh policy close to uniform.
        nn.init.normal_(self.logits.weight, std=0.01)
        nn.init.zeros_(self.logits.bias)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(x) if self.spec.activation == 'relu' else torch.tanh(x)

    def initial_state(self, batch: int = 1) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(batch, self.spec.recurrent, dtype=p.dtype, device=p.device)

    def encode(self, windows: torch.Tensor, orientations: torch.Tensor) -> torch.Tensor:
        """
        Feedforward features of a batch of observations.

        @param windows: Shape (B, window, window, channels), values in [0, 1].
        @param orientations: Shape (B,), integers 0-3.
        """
        x = self._act(self.conv(windows.permute(0, 3, 1, 2)))
        heading = F.one_hot(orientations.long(), ORIENTATIONS).to(x.dtype)
        return self._act(self.fc(torch.cat([x.flatten(1), heading], dim=1)))

    def forward(  # type: ignore[override]
            self,
            windows: torch.Tensor,
            orientations: torch.Tensor,
            state: torch.Tensor,
            ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        One step for a batch.

        @return: Action logits (B, actions), values (B,) and the new
            recurrent state.
        """
        features = self.encode(windows, orientations)
        if self.gru is not None:
            state = self.gru(features, state)
            features = state
        return self.logits(features), self.value(features).squeeze(-1), state

    def unroll(
            self,
            windows: torch.Tensor,
            orientations: torch.Tensor,
            ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Run whole sequences from a zero recurrent state.

        @param windows: Shape (B, T, window, window, channels).
        @param orientations: Shape (B, T).
        @return: Logits (B, T, actions) and values (B, T).
        """
        batch, steps = orientations.shape
        features = self.encode(windows.flatten(0, 1), orientations.flatten(0, 1))
        features = features.view(batch, steps, -1)
        if self.gru is not None:
            state = self.initial_state(batch)
            outputs = []
            for t in range(steps):
                state = self.gru(features[:, t], state)
                outputs.append(state)
            features = torch.stack(outputs, dim=1)
        return self.logits(features), self.value(features).squeeze(-1)


def preprocess(windows: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Scale uint8 colour windows to [0, 1]."""
    return torch.as_tensor(np.asarray(windows), dtype=dtype) / 255.0


def flat_parameters(net: nn.Module) -> np.ndarray:
    return torch.nn.utils.parameters_to_vector(net.parameters()).detach().cpu().numpy().copy()


def set_flat_parameters(net: nn.Module, values: np.ndarray) -> None:
    p = next(net.parameters())
    torch.nn.utils.vector_to_parameters(
        torch.as_tensor(values, dtype=p.dtype, device=p.device), net.parameters())
