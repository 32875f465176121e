"""Synchronous advantage actor-critic.

The loss for a batch of trajectories is::

    -mean(log pi(a_t) * A_t) + value_coef * 0.5 * mean((G_t - V_t)^2) - entropy_coef * H

where C{G_t} is the discounted utility return from step C{t} (bootstrapped
from the value of the state after the last step if given) and
C{A_t = G_t - V_t} with the value treated as a constant.
"""

from typing import Callable, Dict, Optional, Sequence, Tuple

import attr
import numpy as np
import torch

from svoarena.policy import NonFiniteLossError, PolicyHandle
from svoarena.policy.network import flat_parameters, preprocess, set_flat_parameters

OPTIMIZERS = ('rmsprop', 'adam', 'sgd')


@attr.s(auto_attribs=True, frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    learning_rate: float = 4e-4
    entropy_coef: float = 0.003
    value_coef: float = 0.5
    batch_size: int = 16
    """Most trajectories used in one update; extra ones are dropped, oldest first."""

    optimizer: str = 'rmsprop'
    max_grad_norm: float = 40.0

    def __attrs_post_init__(self) -> None:
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma {self.gamma!r} is outside [0, 1)")
        for name in ('learning_rate', 'entropy_coef', 'value_coef', 'max_grad_norm'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@attr.s(auto_attribs=True, eq=False)
class Trajectory:
    """
    One agent's experience in one episode, in step order. All arrays share
    the same length.
    """

    windows: np.ndarray
    """Observations, shape (T, window, window, 3), dtype uint8."""

    orientations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    """Extrinsic rewards."""

    utilities: np.ndarray
    """What the learner optimises: rewards after the SVO transformation."""

    bootstrap_value: float = 0.0

    def __attrs_post_init__(self) -> None:
        lengths = {len(a) for a in (self.windows, self.orientations, self.actions,
                                    self.log_probs, self.values, self.rewards, self.utilities)}
        if len(lengths) != 1:
            raise ValueError(f"trajectory arrays have different lengths: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.actions)


@attr.s(auto_attribs=True, frozen=True)
class LossDiagnostics:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    mean_return: float
    grad_norm: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return attr.asdict(self)


def discounted_returns(utilities: Sequence[float], gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """C{G_t = u_t + gamma * G_(t+1)}, with C{G_T = bootstrap}."""
    values = np.asarray(utilities, dtype=np.float64)
    returns = np.empty_like(values)
    running = bootstrap
    for t in range(len(values) - 1, -1, -1):
        running = values[t] + gamma * running
        returns[t] = running
    return returns


def _stack(batch: Sequence[Trajectory], policy: PolicyHandle) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    lengths = {len(t) for t in batch}
    if len(lengths) != 1:
        raise ValueError(f"trajectories in a batch must have equal lengths, got {sorted(lengths)}")
    windows = preprocess(np.stack([t.windows for t in batch]), policy.dtype)
    orientations = torch.as_tensor(np.stack([t.orientations for t in batch]), dtype=torch.long)
    actions = torch.as_tensor(np.stack([t.actions for t in batch]), dtype=torch.long)
    return windows, orientations, actions


def a2c_loss(
        policy: PolicyHandle,
        batch: Sequence[Trajectory],
        cfg: LearnerConfig,
        advantages: Optional[np.ndarray] = None,
        ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor], np.ndarray]:
    """
    Compute the loss of a batch with autograd attached.

    @param advantages: Fixed advantages of shape (B, T). By default they are
        computed from the current value estimates.
    @return: The loss, its terms, and the advantages used.
    """
    windows, orientations, actions = _stack(batch, policy)
    returns = torch.as_tensor(
        np.stack([discounted_returns(t.utilities, cfg.gamma, t.bootstrap_value) for t in batch]),
        dtype=policy.dtype)
    logits, values = policy.network.unroll(windows, orientations)
    log_probs = torch.log_softmax(logits, dim=-1)
    taken = log_probs.gather(-1, actions.unsqueeze(-1)).squeeze(-1)
    if advantages is None:
        advantages = (returns - values).detach().cpu().numpy()
    adv = torch.as_tensor(advantages, dtype=policy.dtype)
    entropy = -(log_probs.exp() * log_probs).sum(-1).mean()
    policy_loss = -(taken * adv).mean()
    value_loss = 0.5 * ((returns - values) ** 2).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    terms = {'policy_loss': policy_loss, 'value_loss': value_loss, 'entropy': entropy,
             'mean_return': returns[:, 0].mean()}
    return loss, terms, advantages


def make_optimizer(policy: PolicyHandle, cfg: LearnerConfig) -> torch.optim.Optimizer:
    params = policy.network.parameters()
    if cfg.optimizer == 'rmsprop':
        return torch.optim.RMSprop(params, lr=cfg.learning_rate, alpha=0.99, eps=1e-5)
    if cfg.optimizer == 'adam':
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate)


def update(policy: PolicyHandle, batch: Sequence[Trajectory], cfg: LearnerConfig) -> LossDiagnostics:
    """
    Take one gradient step on a batch of the policy's own trajectories.

    @raise ValueError: If the batch is empty.
    @raise NonFiniteLossError: If the loss or the gradient is not finite.
        The parameters and optimiser state are left untouched.
    """
    if not batch:
        raise ValueError("cannot update on an empty batch")
    batch = list(batch)[-cfg.batch_size:]
    if policy.optimizer is None:
        policy.optimizer = make_optimizer(policy, cfg)
        if policy.pending_optimizer_state is not None:
            policy.optimizer.load_state_dict(policy.pending_optimizer_state)
            policy.pending_optimizer_state = None
    optimizer = policy.optimizer
    optimizer.zero_grad()
    loss, terms, _ = a2c_loss(policy, batch, cfg)
    diagnostics = {'loss': float(loss)}
    diagnostics.update({k: float(v) for k, v in terms.items()})
    if not np.isfinite(diagnostics['loss']):
        raise NonFiniteLossError(diagnostics)
    loss.backward()
    params = [p for p in policy.network.parameters() if p.grad is not None]
    if cfg.max_grad_norm > 0:
        grad_norm = float(torch.nn.utils.clip_grad_norm_(params, cfg.max_grad_norm))
    else:
        grad_norm = float(torch.norm(torch.stack([p.grad.norm() for p in params])))  # type: ignore[union-attr]
    if not np.isfinite(grad_norm):
        optimizer.zero_grad()
        raise NonFiniteLossError(dict(diagnostics, grad_norm=grad_norm))
    optimizer.step()
    return LossDiagnostics(grad_norm=grad_norm, **diagnostics)


def finite_difference_gradient(
        func: Callable[[np.ndarray], float],
        x: np.ndarray,
        delta: float = 1e-6,
        ) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    grad = np.zeros(x.shape)
    x = np.array(x, dtype=np.float64)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + delta
        upper = func(x)
        x.flat[i] = original - delta
        lower = func(x)
        x.flat[i] = original
        grad.flat[i] = (upper - lower) / (2 * delta)
    return grad


def check_gradients(
        policy: PolicyHandle,
        batch: Sequence[Trajectory],
        cfg: LearnerConfig,
        delta: float = 1e-6,
        ) -> float:
    """
    Compare autograd with central finite differences of L{a2c_loss}, the
    advantages held fixed.

    Meant for small networks in float64.

    @return: The largest relative error over all parameters.
    """
    start = flat_parameters(policy.network)
    policy.network.zero_grad()
    loss, _, advantages = a2c_loss(policy, batch, cfg)
    loss.backward()
    analytic = np.concatenate([
        (p.grad if p.grad is not None else torch.zeros_like(p)).detach().cpu().numpy().ravel()
        for p in policy.network.parameters()])
    policy.network.zero_grad()

    def evaluate(x: np.ndarray) -> float:
        set_flat_parameters(policy.network, x)
        with torch.no_grad():
            value, _, _ = a2c_loss(policy, batch, cfg, advantages)
        return float(value)

    try:
        numeric = finite_difference_gradient(evaluate, start, delta)
    finally:
        set_flat_parameters(policy.network, start)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / scale))

