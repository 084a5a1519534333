"""Rollouts, the two-phase training loop and checkpoints."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..actions import N_BRACKETS
from ..config import ConfigError, ScenarioConfig, config_from_dict
from ..env import Economy
from ..rng import child_seed, stream
from .networks import ActorCritic, agent_network, planner_network
from .ppo import Batch, PPOSettings, discounted_returns, policy_update

log = logging.getLogger(__name__)

CURVE_HEADER = ["iteration", "phase", "tax_scale", "entropy_coef", "mean_agent_reward",
                "mean_planner_reward", "agent_entropy", "agent_policy_loss", "agent_value_loss",
                "planner_entropy", "planner_policy_loss", "planner_value_loss", "aborted", "seconds"]
CHECKPOINT_FORMAT = 1


@dataclass
class TrainerConfig:
    phase1_iterations: int = 100
    phase2_iterations: int = 0
    anneal_iterations: int = 50
    episodes_per_iteration: int = 1
    epochs: int = 4
    minibatch_size: int = 512
    clip: float = 0.2
    lr_agent: float = 1e-3
    lr_planner: float = 3e-4
    gamma: float = 0.998
    entropy_coef: float = 0.1
    planner_entropy_coef: float = 0.1
    entropy_decay: float = 0.5
    entropy_decay_every: int = 100
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    hidden: int = 128
    conv_channels: int = 16
    recurrent: bool = False
    checkpoint_every: int = 0

    def validate(self) -> "TrainerConfig":
        if self.phase1_iterations < 0 or self.phase2_iterations < 0:
            raise ConfigError("phase lengths must be >= 0")
        positive = ["episodes_per_iteration", "epochs", "minibatch_size", "clip", "lr_agent",
                    "lr_planner", "entropy_decay", "entropy_decay_every", "hidden", "conv_channels",
                    "anneal_iterations"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"trainer.{name} must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("trainer.gamma must lie in (0, 1]")
        if self.entropy_coef < 0 or self.planner_entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("loss coefficients must be >= 0")
        return self

    @property
    def total_iterations(self) -> int:
        return self.phase1_iterations + self.phase2_iterations

    def entropy_at(self, iteration: int, base: float | None = None) -> float:
        base = self.entropy_coef if base is None else base
        return base * self.entropy_decay ** (iteration // self.entropy_decay_every)

    def tax_scale_at(self, iteration: int) -> float:
        """0 throughout phase 1, then a linear ramp to 1 over ``anneal_iterations``."""
        k = iteration - self.phase1_iterations
        if k < 0:
            return 0.0
        return min(1.0, (k + 1) / self.anneal_iterations)

    def ppo(self, entropy_coef: float) -> PPOSettings:
        return PPOSettings(self.clip, self.epochs, self.minibatch_size, entropy_coef,
                           self.value_coef, self.max_grad_norm)


def trainer_config_from_dict(d: dict | None) -> TrainerConfig:
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(TrainerConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown trainer keys: {sorted(unknown)}")
    return TrainerConfig(**d).validate()


@dataclass
class PolicyBundle:
    """Shared agent network, planner network and their optimizers."""

    agent: ActorCritic
    planner: ActorCritic
    agent_opt: torch.optim.Optimizer
    planner_opt: torch.optim.Optimizer
    iteration: int = 0

    @classmethod
    def create(cls, cfg: ScenarioConfig, tcfg: TrainerConfig, seed: int) -> "PolicyBundle":
        torch.manual_seed(int(stream(seed, "policy", 0).integers(2**62)))
        kw = dict(hidden=tcfg.hidden, conv_channels=tcfg.conv_channels, recurrent=tcfg.recurrent)
        agent = agent_network(cfg.n_agents, **kw)
        planner = planner_network(cfg.n_agents, cfg.layout.height, cfg.layout.width, **kw)
        return cls(agent, planner, torch.optim.Adam(agent.parameters(), lr=tcfg.lr_agent),
                   torch.optim.Adam(planner.parameters(), lr=tcfg.lr_planner))

    def clone(self) -> "PolicyBundle":
        return copy.deepcopy(self)

    def save(self, path: str | Path, meta: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"format": CHECKPOINT_FORMAT, "iteration": self.iteration,
                    "agent": self.agent.state_dict(), "planner": self.planner.state_dict(),
                    "agent_opt": self.agent_opt.state_dict(),
                    "planner_opt": self.planner_opt.state_dict()}, path)
        manifest = {"format": CHECKPOINT_FORMAT, "iteration": self.iteration, "file": path.name,
                    **(meta or {})}
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path, cfg: ScenarioConfig, tcfg: TrainerConfig) -> "PolicyBundle":
        blob = torch.load(path, weights_only=True)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {blob.get('format')!r}")
        bundle = cls.create(cfg, tcfg, 0)
        bundle.agent.load_state_dict(blob["agent"])
        bundle.planner.load_state_dict(blob["planner"])
        bundle.agent_opt.load_state_dict(blob["agent_opt"])
        bundle.planner_opt.load_state_dict(blob["planner_opt"])
        bundle.iteration = int(blob["iteration"])
        return bundle


# -- sampling ------------------------------------------------------------------------------


def sample_actions(logits: torch.Tensor, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    """One draw per row (and per head) from softmax(logits) using ``rng``."""
    if greedy:
        return logits.argmax(-1).numpy()
    probs = F.softmax(logits.double(), dim=-1).numpy()
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(cdf.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = (cdf <= u).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


@dataclass
class Trajectories:
    agent: Batch | None
    planner: Batch | None
    agent_rewards: np.ndarray  # (episodes, steps, agents)
    planner_rewards: np.ndarray  # (episodes, steps)
    agent_entropy: float = float("nan")
    planner_entropy: float = float("nan")
    seeds: list[int] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.agent_rewards)

    def mean_agent_reward(self) -> float:
        """Mean over episodes and agents of the undiscounted episode reward."""
        if self.n_episodes == 0:
            return float("nan")
        return float(self.agent_rewards.sum(axis=1).mean())

    def mean_planner_reward(self) -> float:
        if self.n_episodes == 0:
            return float("nan")
        return float(self.planner_rewards.sum(axis=1).mean())


def _cat(parts: list[Batch]) -> Batch | None:
    if not parts:
        return None
    cat = lambda xs: None if xs[0] is None else torch.cat(xs)  # noqa: E731
    return Batch(*(cat([getattr(p, f.name) for p in parts]) for f in dataclasses.fields(Batch)))


def _stack_agent_obs(obs):
    spatial = torch.from_numpy(np.stack([o.spatial for o in obs]))
    vector = torch.from_numpy(np.stack([o.vector for o in obs]))
    mask = torch.from_numpy(np.stack([o.mask for o in obs]))
    return spatial, vector, mask


def _planner_tensors(obs):
    return torch.from_numpy(obs.spatial[None]), torch.from_numpy(obs.vector[None])


@torch.no_grad()
def run_policy_episode(env: Economy, bundle: PolicyBundle, rng: np.random.Generator, *,
                       use_planner: bool, greedy: bool = False, gamma: float = 0.998,
                       record: bool = True):
    """Play one episode in ``env`` (already reset). Returns agent and planner
    sample batches plus the raw reward arrays."""
    cfg = env.cfg
    n, T = cfg.n_agents, cfg.episode_length
    net, pnet = bundle.agent, bundle.planner
    state = net.initial_state(n)
    p_state = pnet.initial_state(1)
    buf = {k: [] for k in ("spatial", "vector", "mask", "actions", "logp", "values", "state")}
    pbuf = {k: [] for k in ("spatial", "vector", "actions", "logp", "values", "state")}
    rewards = np.zeros((T, n))
    p_rewards = np.zeros(T)
    decision_steps = []
    ent_sum, p_ent_sum = 0.0, 0.0
    while not env.done:
        t = env.t
        spatial, vector, mask = _stack_agent_obs(env.agent_observations())
        logits, values, new_state = net(spatial, vector, mask, state)
        actions = sample_actions(logits, rng, greedy)
        logp, ent = net.log_prob_entropy(logits, torch.from_numpy(actions))
        ent_sum += float(ent.mean())
        if record:
            for k, v in zip(buf, (spatial, vector, mask, torch.from_numpy(actions), logp, values, state)):
                buf[k].append(v)
        state = new_state

        p_act = None
        if use_planner and env.year_start:
            ps, pv = _planner_tensors(env.planner_observation())
            plogits, pvalue, new_p_state = pnet(ps, pv, None, p_state)
            p_act = sample_actions(plogits, rng, greedy)
            plogp, pent = pnet.log_prob_entropy(plogits, torch.from_numpy(p_act))
            p_ent_sum += float(pent.mean())
            if record:
                for k, v in zip(pbuf, (ps, pv, torch.from_numpy(p_act), plogp, pvalue, p_state)):
                    pbuf[k].append(v)
            p_state = new_p_state
            decision_steps.append(t)
            p_act = p_act[0].tolist()
        res = env.step(actions.tolist(), p_act, observe=False)
        rewards[t] = res.rewards
        p_rewards[t] = res.planner_reward

    agent_batch = planner_batch = None
    if record:
        G = discounted_returns(rewards, gamma)
        agent_batch = Batch(
            torch.cat(buf["spatial"]), torch.cat(buf["vector"]), torch.cat(buf["actions"]),
            torch.cat(buf["logp"]), torch.cat(buf["values"]),
            torch.from_numpy(G.reshape(-1)).float(), torch.cat(buf["mask"]),
            torch.cat(buf["state"]) if net.recurrent else None)
        if decision_steps:
            bounds = decision_steps + [T]
            per_decision = np.array([p_rewards[a:b].sum() for a, b in zip(bounds[:-1], bounds[1:])])
            PG = discounted_returns(per_decision, gamma ** cfg.tax_period)
            planner_batch = Batch(
                torch.cat(pbuf["spatial"]), torch.cat(pbuf["vector"]), torch.cat(pbuf["actions"]),
                torch.cat(pbuf["logp"]), torch.cat(pbuf["values"]), torch.from_numpy(PG).float(),
                None, torch.cat(pbuf["state"]) if pnet.recurrent else None)
    stats = {"agent_entropy": ent_sum / T,
             "planner_entropy": p_ent_sum / len(decision_steps) if decision_steps else float("nan")}
    return agent_batch, planner_batch, rewards, p_rewards, stats


def collect_rollouts(cfg: ScenarioConfig, bundle: PolicyBundle, n_episodes: int, seed: int, *,
                     tax_enabled: bool = True, tax_scale: float = 1.0, use_planner: bool = True,
                     greedy: bool = False, gamma: float = 0.998) -> Trajectories:
    """Sample ``n_episodes`` full episodes; episode e uses ``child_seed(seed, e)``."""
    agents, planners, rs, prs, ents, pents, seeds = [], [], [], [], [], [], []
    for e in range(n_episodes):
        ep_seed = child_seed(seed, e)
        env = Economy(cfg, ep_seed)
        env.tax_enabled = tax_enabled
        env.tax_scale = tax_scale
        rng = stream(ep_seed, "policy", 1)
        a, p, r, pr, st = run_policy_episode(env, bundle, rng, use_planner=use_planner,
                                             greedy=greedy, gamma=gamma)
        agents.append(a)
        if p is not None:
            planners.append(p)
        rs.append(r)
        prs.append(pr)
        ents.append(st["agent_entropy"])
        pents.append(st["planner_entropy"])
        seeds.append(ep_seed)
    T, n = cfg.episode_length, cfg.n_agents
    return Trajectories(
        _cat(agents), _cat(planners),
        np.array(rs) if rs else np.zeros((0, T, n)),
        np.array(prs) if prs else np.zeros((0, T)),
        float(np.mean(ents)) if ents else float("nan"),
        float(np.nanmean(pents)) if pents and not all(np.isnan(pents)) else float("nan"),
        seeds,
    )


# -- training ------------------------------------------------------------------------------


@dataclass
class TrainResult:
    bundle: PolicyBundle
    curve: list[dict]

    def write_curve(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CURVE_HEADER, lineterminator="\n")
            w.writeheader()
            for row in self.curve:
                w.writerow({k: row.get(k, "") for k in CURVE_HEADER})
        return path


def train(cfg: ScenarioConfig, tcfg: TrainerConfig, seed: int, *, objective: str | None = None,
          out_dir: str | Path | None = None, bundle: PolicyBundle | None = None,
          callback=None) -> TrainResult:
    """Phase 1 trains agents with taxes off; phase 2 co-trains the planner while
    the applied rates are scaled up from 0 to 1."""
    tcfg.validate()
    if objective is not None:
        cfg = config_from_dict({**cfg.to_dict(), "objective": objective})
    bundle = bundle or PolicyBundle.create(cfg, tcfg, seed)
    update_rng = stream(seed, "policy", 2)
    curve = []
    out = Path(out_dir) if out_dir is not None else None
    for it in range(bundle.iteration, tcfg.total_iterations):
        t0 = time.time()
        phase = 1 if it < tcfg.phase1_iterations else 2
        scale = tcfg.tax_scale_at(it)
        traj = collect_rollouts(cfg, bundle, tcfg.episodes_per_iteration, child_seed(seed, it),
                                tax_enabled=phase == 2, tax_scale=scale, use_planner=phase == 2,
                                gamma=tcfg.gamma)
        ent = tcfg.entropy_at(it)
        a_diag = policy_update(bundle.agent, bundle.agent_opt, traj.agent, tcfg.ppo(ent), update_rng)
        p_diag = {}
        if phase == 2 and traj.planner is not None:
            p_ent = tcfg.entropy_at(it - tcfg.phase1_iterations, tcfg.planner_entropy_coef)
            p_diag = policy_update(bundle.planner, bundle.planner_opt, traj.planner,
                                   tcfg.ppo(p_ent), update_rng)
        bundle.iteration = it + 1
        row = {"iteration": it, "phase": phase, "tax_scale": scale, "entropy_coef": ent,
               "mean_agent_reward": traj.mean_agent_reward(),
               "mean_planner_reward": traj.mean_planner_reward(),
               "agent_entropy": traj.agent_entropy,
               "agent_policy_loss": a_diag.get("policy_loss"),
               "agent_value_loss": a_diag.get("value_loss"),
               "planner_entropy": traj.planner_entropy if phase == 2 else "",
               "planner_policy_loss": p_diag.get("policy_loss", ""),
               "planner_value_loss": p_diag.get("value_loss", ""),
               "aborted": int(a_diag.get("aborted", False) or p_diag.get("aborted", False)),
               "seconds": round(time.time() - t0, 3)}
        curve.append(row)
        log.info("iter %d phase %d reward %.3f planner %.3f", it, phase, row["mean_agent_reward"],
                 row["mean_planner_reward"])
        if callback is not None:
            callback(row)
        if out is not None and tcfg.checkpoint_every and (it + 1) % tcfg.checkpoint_every == 0:
            bundle.save(out / "checkpoints" / f"iter_{it + 1:05d}.pt", {"seed": seed})
    result = TrainResult(bundle, curve)
    if out is not None:
        result.write_curve(out / "curve.csv")
        bundle.save(out / "checkpoints" / "final.pt",
                    {"seed": seed, "config_hash": cfg.digest(), "trainer": dataclasses.asdict(tcfg)})
    return result


def evaluate(cfg: ScenarioConfig, bundle: PolicyBundle, seeds: list[int], *, tax_enabled: bool = False,
             use_planner: bool = False, greedy: bool = False) -> float:
    """Mean agent episode reward over fixed evaluation seeds."""
    totals = []
    for s in seeds:
        env = Economy(cfg, s)
        env.tax_enabled = tax_enabled
        _, _, r, _, _ = run_policy_episode(env, bundle, stream(s, "policy", 3), use_planner=use_planner,
                                           greedy=greedy, record=False)
        totals.append(r.sum(axis=0).mean())
    return float(np.mean(totals))


# -- episode-runner adapters ---------------------------------------------------------------


class NeuralAgentPolicy:
    """Adapter so a trained bundle can drive :func:`gtbsim.episode.run_episode`."""

    name = "neural"
    needs_obs = True

    def __init__(self, bundle: PolicyBundle, seed: int = 0, greedy: bool = True):
        self.bundle, self.seed, self.greedy = bundle, seed, greedy

    def reset(self, env) -> None:
        self.rng = stream(self.seed, "policy", 4)
        self.state = self.bundle.agent.initial_state(env.cfg.n_agents)

    @torch.no_grad()
    def act(self, env, obs) -> list[int]:
        spatial, vector, mask = _stack_agent_obs(obs)
        logits, _, self.state = self.bundle.agent(spatial, vector, mask, self.state)
        return sample_actions(logits, self.rng, self.greedy).tolist()


class NeuralPlannerPolicy:
    name = "neural_planner"
    needs_obs = True

    def __init__(self, bundle: PolicyBundle, seed: int = 0, greedy: bool = True):
        self.bundle, self.seed, self.greedy = bundle, seed, greedy

    def reset(self, env) -> None:
        self.rng = stream(self.seed, "planner", 4)
        self.state = self.bundle.planner.initial_state(1)

    @torch.no_grad()
    def act(self, env, obs) -> list[int]:
        ps, pv = _planner_tensors(obs)
        logits, _, self.state = self.bundle.planner(ps, pv, None, self.state)
        out = sample_actions(logits, self.rng, self.greedy)[0].tolist()
        assert len(out) == N_BRACKETS
        return out
