"""Clipped-surrogate policy optimisation with a Monte Carlo value baseline."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .networks import ActorCritic

log = logging.getLogger(__name__)


@dataclass
class PPOSettings:
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    entropy_coef: float = 0.1
    value_coef: float = 0.5
    max_grad_norm: float = 1.0


@dataclass
class Batch:
    """Flat samples from any number of actors and episodes."""

    spatial: torch.Tensor
    vector: torch.Tensor
    actions: torch.Tensor
    old_logp: torch.Tensor
    old_values: torch.Tensor
    returns: torch.Tensor
    mask: torch.Tensor | None = None
    state: torch.Tensor | None = None  # recurrent input state per sample

    def __len__(self) -> int:
        return self.actions.shape[0]

    def take(self, idx) -> "Batch":
        pick = lambda x: None if x is None else x[idx]  # noqa: E731
        return Batch(self.spatial[idx], self.vector[idx], self.actions[idx], self.old_logp[idx],
                     self.old_values[idx], self.returns[idx], pick(self.mask), pick(self.state))

    @property
    def advantages(self) -> torch.Tensor:
        return self.returns - self.old_values


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = r_t + gamma * G_{t+1} along axis 0, with G after the last step 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def normalize(adv: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    std = adv.std() if adv.numel() > 1 else adv.new_tensor(0.0)
    if not torch.isfinite(std) or std < eps:
        return adv - adv.mean() if adv.numel() > 1 else adv
    return (adv - adv.mean()) / std


def ppo_loss(net: ActorCritic, batch: Batch, adv: torch.Tensor, settings: PPOSettings,
             value_scale: float = 1.0):
    """Scalar loss and its parts. ``adv`` is the (already normalised) advantage;
    the value error is divided by ``value_scale`` so both terms stay O(1)."""
    logits, values, _ = net(batch.spatial, batch.vector, batch.mask, batch.state)
    logp, entropy = net.log_prob_entropy(logits, batch.actions)
    ratio = torch.exp(logp - batch.old_logp)
    surr = torch.min(ratio * adv, torch.clamp(ratio, 1 - settings.clip, 1 + settings.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = 0.5 * ((values - batch.returns) / value_scale).pow(2).mean()
    ent = entropy.mean()
    total = policy_loss + settings.value_coef * value_loss - settings.entropy_coef * ent
    with torch.no_grad():
        clip_frac = ((ratio - 1).abs() > settings.clip).float().mean()
        kl = (batch.old_logp - logp).mean()
    return total, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(),
                   "entropy": ent.item(), "clip_frac": clip_frac.item(), "approx_kl": kl.item()}


def policy_update(net: ActorCritic, optimizer: torch.optim.Optimizer, batch: Batch,
                  settings: PPOSettings, rng: np.random.Generator) -> dict:
    """Several epochs of minibatch steps. On a non-finite loss the whole update
    is rolled back and ``aborted`` is set in the returned diagnostics."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    saved_net = copy.deepcopy(net.state_dict())
    saved_opt = copy.deepcopy(optimizer.state_dict())
    n = len(batch)
    adv_all = normalize(batch.advantages)
    spread = batch.returns.std().item() if n > 1 else 0.0
    value_scale = spread if math.isfinite(spread) and spread > 1.0 else 1.0
    stats: dict[str, list[float]] = {}
    mb = min(settings.minibatch_size, n)
    for _ in range(settings.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = torch.as_tensor(order[start:start + mb])
            loss, parts = ppo_loss(net, batch.take(idx), adv_all[idx], settings, value_scale)
            if not math.isfinite(loss.item()):
                log.error("non-finite loss %s; update rolled back", loss.item())
                net.load_state_dict(saved_net)
                optimizer.load_state_dict(saved_opt)
                return {"aborted": True, "loss": loss.item(), **parts}
            optimizer.zero_grad()
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(net.parameters(), settings.max_grad_norm)
            optimizer.step()
            parts["loss"] = loss.item()
            parts["grad_norm"] = float(grad_norm)
            for k, v in parts.items():
                stats.setdefault(k, []).append(v)
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["aborted"] = False
    return out
