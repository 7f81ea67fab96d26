"""DDPG agent: actor/critic networks, replay buffer, soft target updates, training loop."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import __version__
from .control import StatePrepEnv

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"OMRLCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class DDPGConfig:
    """Agent and training hyperparameters (amplitude-like values in units of omega_max)."""

    epochs: int = 800
    warmup: int = 10
    batch: int = 128
    tau: float = 0.1
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    capacity: int = 100_000
    noise: float = 0.2
    noise_decay: float = 0.999
    hidden: tuple[int, ...] = (256, 256)
    seed: int = 0
    checkpoint_every: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1 or self.warmup < 0 or self.batch < 1 or self.capacity < self.batch:
            raise ValueError("need epochs >= 1, warmup >= 0, capacity >= batch >= 1")
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError("tau and gamma must lie in [0, 1]")
        if self.noise < 0 or not 0 < self.noise_decay <= 1:
            raise ValueError("noise must be >= 0 and noise_decay in (0, 1]")


# ---------------------------------------------------------------------------
# networks


class Mlp(nn.Module):
    """Fully connected network; hidden layers ReLU, optional tanh output scaled by ``bound``."""

    def __init__(self, sizes, bound: float | None = None, final_init: float = 3e-3):
        super().__init__()
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = sizes
        self.bound = bound
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        with torch.no_grad():
            self.layers[-1].weight.uniform_(-final_init, final_init)
            self.layers[-1].bias.uniform_(-final_init, final_init)

    @property
    def activations(self):
        return ["relu"] * (len(self.layers) - 1) + ["tanh" if self.bound is not None else "linear"]

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = torch.relu(layer(x))
        x = self.layers[-1](x)
        if self.bound is not None:
            x = self.bound * torch.tanh(x)
        return x


def make_actor(obs_size, n_actions, omega_max, hidden=(256, 256)) -> Mlp:
    return Mlp([obs_size, *hidden, n_actions], bound=float(omega_max))


def make_critic(obs_size, n_actions, hidden=(256, 256)) -> Mlp:
    return Mlp([obs_size + n_actions, *hidden, 1])


def _as_tensor(x, net):
    p = next(net.parameters())
    return torch.as_tensor(np.asarray(x), dtype=p.dtype)


def actor_forward(net: Mlp, obs) -> np.ndarray:
    x = _as_tensor(obs, net)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(f"observation length {x.shape[-1]} != actor input {net.sizes[0]}")
    with torch.no_grad():
        return net(x).numpy().astype(float)


def critic_forward(net: Mlp, obs, action) -> float:
    x = torch.cat([_as_tensor(obs, net).reshape(-1), _as_tensor(action, net).reshape(-1)])
    if x.shape[0] != net.sizes[0]:
        raise ValueError(f"obs+action length {x.shape[0]} != critic input {net.sizes[0]}")
    with torch.no_grad():
        return float(net(x)[0])


def critic_action_gradient(net: Mlp, obs, action) -> np.ndarray:
    """dQ/d(action) by backpropagation."""
    o = _as_tensor(obs, net).reshape(-1)
    a = _as_tensor(action, net).reshape(-1).clone().requires_grad_(True)
    q = net(torch.cat([o, a]))[0]
    (g,) = torch.autograd.grad(q, a)
    return g.detach().numpy().astype(float)


def soft_update(target: nn.Module, source: nn.Module, tau: float):
    """theta' <- tau theta + (1 - tau) theta'."""
    with torch.no_grad():
        for pt, ps in zip(target.parameters(), source.parameters()):
            pt.mul_(1.0 - tau).add_(ps, alpha=tau)


# ---------------------------------------------------------------------------
# replay


class HermitianCodec:
    """Lossless compaction of vectorized Hermitian matrices, 2 D^2 -> D^2 reals."""

    def __init__(self, d: int):
        iu = np.triu_indices(d)
        ius = np.triu_indices(d, 1)
        full = np.arange(d * d).reshape(d, d)
        self.d = d
        self.pick = np.concatenate([full[iu], d * d + full[ius]])
        gather = np.zeros(2 * d * d, dtype=np.int64)
        sign = np.zeros(2 * d * d, dtype=np.float32)
        n_re = len(iu[0])
        pos_re = np.zeros((d, d), dtype=np.int64)
        pos_re[iu] = np.arange(n_re)
        pos_re.T[iu] = np.arange(n_re)
        gather[: d * d] = pos_re.ravel()
        sign[: d * d] = 1.0
        pos_im = np.zeros((d, d), dtype=np.int64)
        sgn_im = np.zeros((d, d), dtype=np.float32)
        pos_im[ius] = n_re + np.arange(len(ius[0]))
        pos_im.T[ius] = n_re + np.arange(len(ius[0]))
        sgn_im[ius] = 1.0
        sgn_im.T[ius] = -1.0
        gather[d * d:] = pos_im.ravel()
        sign[d * d:] = sgn_im.ravel()
        self.gather, self.sign = gather, sign

    @property
    def size(self) -> int:
        return self.d * self.d

    def encode(self, obs):
        return np.asarray(obs)[..., self.pick]

    def decode(self, packed):
        return packed[..., self.gather] * self.sign


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool = False


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform minibatch sampling.

    Observations are stored compacted (Hermitian symmetry) in float32.
    """

    def __init__(self, capacity: int, obs_size: int, n_actions: int):
        d = math.isqrt(obs_size // 2)
        if 2 * d * d != obs_size:
            raise ValueError("observation size must be 2 D^2")
        self.capacity = int(capacity)
        self.codec = HermitianCodec(d)
        self.obs_size = obs_size
        self.n_actions = n_actions
        # np.empty: pages are only committed as they are written
        self._obs = np.empty((self.capacity, self.codec.size), dtype=np.float32)
        self._next = np.empty((self.capacity, self.codec.size), dtype=np.float32)
        self._act = np.empty((self.capacity, n_actions), dtype=np.float32)
        self._rew = np.empty(self.capacity, dtype=np.float32)
        self._done = np.empty(self.capacity, dtype=np.float32)
        self._head = 0
        self._size = 0
        self.total_added = 0

    def __len__(self):
        return self._size

    def add(self, obs, action, reward, next_obs, done=False):
        i = self._head
        self._obs[i] = self.codec.encode(obs)
        self._next[i] = self.codec.encode(next_obs)
        self._act[i] = action
        self._rew[i] = reward
        self._done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.total_added += 1

    def oldest_index(self) -> int:
        """Insertion number of the oldest retained transition."""
        return self.total_added - self._size

    def get(self, k: int) -> Transition:
        """k-th retained transition, oldest first."""
        if not 0 <= k < self._size:
            raise IndexError(k)
        i = (self._head - self._size + k) % self.capacity
        return Transition(self.codec.decode(self._obs[i]), self._act[i].copy(), float(self._rew[i]),
                          self.codec.decode(self._next[i]), bool(self._done[i]))

    def sample(self, batch: int, rng: np.random.Generator):
        if self._size < batch:
            raise ValueError(f"buffer holds {self._size} transitions, need {batch}")
        idx = rng.integers(0, self._size, size=batch)
        return (self.codec.decode(self._obs[idx]), self._act[idx], self._rew[idx],
                self.codec.decode(self._next[idx]), self._done[idx])


# ---------------------------------------------------------------------------
# agent


def noise_sigma(hyper: DDPGConfig, omega_max: float, epoch: int) -> float:
    return hyper.noise * omega_max * hyper.noise_decay ** epoch


def select_action(actor: Mlp, obs, sigma: float, epoch: int, warmup: int, omega_max: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Uniform random during warmup, then actor output plus Gaussian noise, clipped."""
    n_actions = actor.sizes[-1]
    if epoch < warmup:
        return rng.uniform(-omega_max, omega_max, size=n_actions)
    action = actor_forward(actor, obs)
    if sigma > 0:
        action = action + rng.normal(0.0, sigma, size=n_actions)
    return np.clip(action, -omega_max, omega_max)


@dataclass
class Losses:
    critic: float
    actor: float


class DDPGAgent:
    def __init__(self, obs_size: int, n_actions: int, omega_max: float, hyper: DDPGConfig,
                 dtype=torch.float32):
        self.hyper = hyper
        self.omega_max = float(omega_max)
        self.obs_size = obs_size
        self.n_actions = n_actions
        torch.manual_seed(hyper.seed)
        self.actor = make_actor(obs_size, n_actions, omega_max, hyper.hidden).to(dtype)
        self.critic = make_critic(obs_size, n_actions, hyper.hidden).to(dtype)
        self.target_actor = make_actor(obs_size, n_actions, omega_max, hyper.hidden).to(dtype)
        self.target_critic = make_critic(obs_size, n_actions, hyper.hidden).to(dtype)
        self.target_actor.load_state_dict(self.actor.state_dict())
        self.target_critic.load_state_dict(self.critic.state_dict())
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=hyper.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=hyper.critic_lr)

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def update(self, batch, tau=None, gamma=None) -> Losses:
        tau = self.hyper.tau if tau is None else tau
        gamma = self.hyper.gamma if gamma is None else gamma
        return update_networks(self.actor, self.critic, self.target_actor, self.target_critic, batch,
                               tau, gamma, self.actor_opt, self.critic_opt)


def update_networks(actor, critic, target_actor, target_critic, batch, tau, gamma_discount,
                    actor_opt, critic_opt) -> Losses:
    """One DDPG step: critic regression, actor ascent on Q, soft target update."""
    obs, act, rew, nxt, done = (_as_tensor(x, critic) for x in batch)
    rew = rew.reshape(-1, 1)
    done = done.reshape(-1, 1)
    with torch.no_grad():
        q_next = target_critic(torch.cat([nxt, target_actor(nxt)], dim=1))
        y = rew + gamma_discount * (1.0 - done) * q_next
    q = critic(torch.cat([obs, act], dim=1))
    critic_loss = torch.mean((q - y) ** 2)
    critic_opt.zero_grad()
    critic_loss.backward()
    critic_opt.step()

    actor_loss = -critic(torch.cat([obs, actor(obs)], dim=1)).mean()
    actor_opt.zero_grad()
    actor_loss.backward()
    actor_opt.step()

    soft_update(target_actor, actor, tau)
    soft_update(target_critic, critic, tau)
    return Losses(critic_loss.item(), actor_loss.item())


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingReport:
    seed: int
    hyper: dict
    epochs: list = field(default_factory=list)      # dicts: epoch, episode_reward, fidelity, best_fidelity, noise_sigma
    wall_clock: list = field(default_factory=list)  # seconds since start, per epoch
    best_fidelity: float = float("-inf")
    best_epoch: int = -1
    best_amplitudes: np.ndarray | None = None
    checkpoints: list = field(default_factory=list)

    @property
    def fidelities(self):
        return np.array([row["fidelity"] for row in self.epochs])

    @property
    def best_curve(self):
        return np.array([row["best_fidelity"] for row in self.epochs])


def train(env: StatePrepEnv, hyper: DDPGConfig, checkpoint_dir=None, on_epoch=None) -> TrainingReport:
    """Run ``hyper.epochs`` episodes of DDPG on ``env``.

    One network update per environment step once past warmup. The episode
    fidelity is the fidelity at the final time T; the schedule with the best
    such value is kept. ``on_epoch(report)`` may return True to stop early.
    """
    rng = np.random.default_rng(hyper.seed)
    agent = DDPGAgent(env.obs_size, env.n_actions, env.omega_max, hyper)
    buffer = ReplayBuffer(hyper.capacity, env.obs_size, env.n_actions)
    report = TrainingReport(seed=hyper.seed, hyper=asdict(hyper))
    start = time.perf_counter()
    for epoch in range(hyper.epochs):
        sigma = noise_sigma(hyper, env.omega_max, epoch)
        obs = env.reset()
        total = 0.0
        done = False
        while not done:
            action = select_action(agent.actor, obs, sigma, epoch, hyper.warmup, env.omega_max, rng)
            nxt, r, done = env.step(action)
            buffer.add(obs, action, r, nxt, done)
            total += r
            obs = nxt
            if epoch >= hyper.warmup and len(buffer) >= hyper.batch:
                agent.update(buffer.sample(hyper.batch, rng))
        fid = env.fidelity
        if fid > report.best_fidelity:
            report.best_fidelity = fid
            report.best_epoch = epoch
            report.best_amplitudes = env.schedule().amplitudes.copy()
        report.epochs.append({"epoch": epoch, "episode_reward": total, "fidelity": fid,
                              "best_fidelity": report.best_fidelity, "noise_sigma": sigma})
        report.wall_clock.append(time.perf_counter() - start)
        if checkpoint_dir is not None and hyper.checkpoint_every > 0 and (
                (epoch + 1) % hyper.checkpoint_every == 0 or epoch + 1 == hyper.epochs):
            path = Path(checkpoint_dir) / f"checkpoint_{epoch + 1:05d}.ckpt"
            save_checkpoint(path, agent, env, epoch + 1)
            report.checkpoints.append(str(path))
        log.info("epoch %d  F=%.4f  best=%.4f  R=%.2f  sigma=%.4g", epoch, fid, report.best_fidelity, total, sigma)
        if on_epoch is not None and on_epoch(report):
            log.info("stopped by callback after epoch %d", epoch)
            break
    return report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, agent: DDPGAgent, env: StatePrepEnv, epoch: int):
    """Write networks in the self-describing binary layout documented in docs/checkpoint_format.md."""
    tensors, blobs, offset = [], [], 0
    for net_name, net in agent.networks().items():
        for key, val in net.state_dict().items():
            arr = val.detach().cpu().numpy()
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(arr).tobytes()
            tensors.append({"name": f"{net_name}.{key}", "shape": list(arr.shape),
                            "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "D": env.cfg.dim,
        "L": env.n_actions,
        "obs_size": env.obs_size,
        "omega_max": env.omega_max,
        "actor_sizes": agent.actor.sizes,
        "critic_sizes": agent.critic.sizes,
        "activations": {"actor": agent.actor.activations, "critic": agent.critic.activations},
        "seed": agent.hyper.seed,
        "epoch": int(epoch),
        "tensors": tensors,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for raw in blobs:
            fh.write(raw)


class CheckpointError(ValueError):
    pass


def read_checkpoint(path):
    """Return (header dict, {tensor name: numpy array})."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    base = 16 + hlen
    arrays = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        if start + t["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated at tensor {t['name']}")
        raw = data[start:start + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
    return header, arrays


def load_actor(path, expected_obs_size=None, expected_actions=None) -> Mlp:
    header, arrays = read_checkpoint(path)
    if expected_obs_size is not None and header["obs_size"] != expected_obs_size:
        raise CheckpointError(f"checkpoint observation size {header['obs_size']} != {expected_obs_size}")
    if expected_actions is not None and header["L"] != expected_actions:
        raise CheckpointError(f"checkpoint has {header['L']} pulses, config needs {expected_actions}")
    actor = Mlp(header["actor_sizes"], bound=header["omega_max"])
    prefix = "actor."
    state = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
    actor = actor.to(next(iter(state.values())).dtype)
    actor.load_state_dict(state)
    return actor
