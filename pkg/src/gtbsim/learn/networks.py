"""Actor-critic networks for agents and the planner.

Both take the (spatial, vector) split produced by :mod:`gtbsim.observations`:
the spatial block goes through a small conv stack, the vector block through a
dense layer, and the two are merged by a shared hidden layer feeding the
policy logits and the value head. An optional GRU cell sits after the merge.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..actions import N_AGENT_ACTIONS, N_BRACKETS
from ..fiscal import N_SETTINGS
from ..observations import N_AGENT_CHANNELS, N_PLANNER_CHANNELS, WINDOW, agent_vector_size, planner_vector_size

MASKED_LOGIT = -1e9


def masked_logits(logits: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return logits
    return logits.masked_fill(~mask, MASKED_LOGIT)


def categorical_entropy(logits: torch.Tensor) -> torch.Tensor:
    """Entropy over the last axis; masked entries contribute exactly zero."""
    logp = F.log_softmax(logits, dim=-1)
    p = logp.exp()
    return -(p * logp).sum(-1)


class _Trunk(nn.Module):
    def __init__(self, in_channels: int, spatial_shape: tuple[int, int], vector_size: int,
                 conv_channels: int, hidden: int, pool_to: int | None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, conv_channels, 3)
        self.conv2 = nn.Conv2d(conv_channels, conv_channels, 3)
        self.pool_to = pool_to
        h, w = (pool_to, pool_to) if pool_to is not None else (spatial_shape[0] - 4, spatial_shape[1] - 4)
        self.spatial_out = nn.Linear(conv_channels * h * w, hidden)
        self.vec = nn.Linear(vector_size, hidden)
        self.merge = nn.Linear(2 * hidden, hidden)

    def forward(self, spatial: torch.Tensor, vector: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.conv1(spatial))
        x = F.relu(self.conv2(x))
        if self.pool_to is not None:
            x = F.adaptive_avg_pool2d(x, self.pool_to)
        x = F.relu(self.spatial_out(x.flatten(1)))
        v = F.relu(self.vec(vector))
        return torch.tanh(self.merge(torch.cat([x, v], dim=-1)))


class ActorCritic(nn.Module):
    """Shared-weight policy: one network, one row per actor.

    ``action_shape`` is ``(n,)`` for a single categorical or ``(k, n)`` for k
    independent categoricals (the planner's per-bracket settings).
    """

    def __init__(self, in_channels: int, spatial_shape: tuple[int, int], vector_size: int,
                 action_shape: tuple[int, ...], conv_channels: int = 16, hidden: int = 128,
                 recurrent: bool = False, pool_to: int | None = None):
        super().__init__()
        self.action_shape = tuple(action_shape)
        self.hidden = hidden
        self.trunk = _Trunk(in_channels, spatial_shape, vector_size, conv_channels, hidden, pool_to)
        self.gru = nn.GRUCell(hidden, hidden) if recurrent else None
        self.pi = nn.Linear(hidden, math.prod(self.action_shape))
        self.v = nn.Linear(hidden, 1)
        # a zero policy head starts every actor at the uniform distribution
        nn.init.zeros_(self.pi.weight)
        nn.init.zeros_(self.pi.bias)

    @property
    def recurrent(self) -> bool:
        return self.gru is not None

    def initial_state(self, batch: int) -> torch.Tensor | None:
        if self.gru is None:
            return None
        return torch.zeros(batch, self.hidden, dtype=self.pi.weight.dtype)

    def forward(self, spatial, vector, mask=None, state=None):
        """Returns (masked logits, value, next recurrent state)."""
        z = self.trunk(spatial, vector)
        if self.gru is not None:
            z = state = self.gru(z, state if state is not None else self.initial_state(z.shape[0]))
        logits = self.pi(z).view(-1, *self.action_shape)
        return masked_logits(logits, mask), self.v(z).squeeze(-1), state

    def log_prob_entropy(self, logits: torch.Tensor, actions: torch.Tensor):
        """Joint log-probability and entropy summed over independent heads."""
        logp_all = F.log_softmax(logits, dim=-1)
        if len(self.action_shape) == 1:
            logp = logp_all.gather(-1, actions.view(-1, 1)).squeeze(-1)
            return logp, categorical_entropy(logits)
        logp = logp_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1).sum(-1)
        return logp, categorical_entropy(logits).sum(-1)


def agent_network(n_agents: int, **kw) -> ActorCritic:
    return ActorCritic(N_AGENT_CHANNELS, (WINDOW, WINDOW), agent_vector_size(n_agents),
                       (N_AGENT_ACTIONS,), **kw)


def planner_network(n_agents: int, height: int, width: int, **kw) -> ActorCritic:
    kw.setdefault("pool_to", 4)
    return ActorCritic(N_PLANNER_CHANNELS, (height, width), planner_vector_size(n_agents),
                       (N_BRACKETS, N_SETTINGS), **kw)
