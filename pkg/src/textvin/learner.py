"""TD learning: replay memory, behaviour policy, targets, Adam, training loops.

Training follows the round-robin multitask recipe: one episode per
environment in cyclic order, every transition goes to one shared replay
memory, and after each environment step a uniformly sampled minibatch is
used for one gradient step on the squared TD error.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import GameEnv, Transition
from .qnet import ModelConfig, QNetwork
from .repgen import choose_descriptions, observe

log = logging.getLogger(__name__)

LOG_HEADER = ("episode", "env_id", "reward", "length", "epsilon", "lr", "loss_mean")
TARGET_EPSILON = 0.1


class NonFiniteLoss(FloatingPointError):
    pass


class NonFiniteUpdate(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.8
    lr_start: float = 1e-4
    lr_end: float = 5e-5
    lr_anneal_steps: int = 100_000
    minibatch: int = 32
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_anneal_steps: int = 100_000
    eps_fixed: float | None = None
    target_refresh_period: int = 1000
    episodes: int = 1000
    max_steps: int | None = None
    total_steps: int | None = None
    replay_capacity: int = 250_000
    warmup: int = 1000
    grad_clip: float | None = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    annotators: tuple = (1, 2, 3)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        self.annotators = tuple(self.annotators)


def transfer_config(config, epsilon=TARGET_EPSILON):
    """Target-task variant of ``config``: exploration fixed at ``epsilon``."""
    return dataclasses.replace(config, eps_fixed=epsilon)


def linear_schedule(start, end, horizon, step):
    if step >= horizon:
        return end
    return start + (end - start) * (step / horizon)


def learning_rate(config, step):
    return linear_schedule(config.lr_start, config.lr_end, config.lr_anneal_steps, step)


def epsilon_at(config, step):
    if config.eps_fixed is not None:
        return config.eps_fixed
    return linear_schedule(config.eps_start, config.eps_end, config.eps_anneal_steps, step)


# ---------------------------------------------------------------------------
# replay memory
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """FIFO ring of transitions with uniform minibatch sampling."""

    def __init__(self, capacity=250_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data = []
        self._next = 0
        self.inserted = 0

    def __len__(self):
        return len(self._data)

    def push(self, transition):
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._next] = transition
        self._next = (self._next + 1) % self.capacity
        self.inserted += 1

    def items(self):
        """Stored transitions, oldest first."""
        if len(self._data) < self.capacity:
            return list(self._data)
        return self._data[self._next:] + self._data[:self._next]

    def sample(self, size, rng):
        """``size`` distinct transitions drawn uniformly."""
        n = len(self._data)
        if size > n:
            raise ValueError(f"cannot sample {size} from {n} transitions")
        picked = []
        seen = set()
        while len(picked) < size:
            i = int(rng.integers(n))
            if i not in seen:
                seen.add(i)
                picked.append(i)
        return [self._data[i] for i in picked]


# ---------------------------------------------------------------------------
# policy, targets, loss, optimizer
# ---------------------------------------------------------------------------


def epsilon_greedy(q, eps, rng):
    """Uniform action with probability ``eps``, else the lowest-index argmax."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"epsilon {eps} outside [0, 1]")
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def td_targets(batch, frozen, gamma):
    """``r`` for terminal transitions, else ``r + gamma * max_a Q_frozen(s', a)``."""
    if not batch:
        raise ValueError("empty batch")
    r = np.array([t.r for t in batch], dtype=np.float64)
    live = [i for i, t in enumerate(batch) if not t.terminal]
    y = r.copy()
    if live:
        q_next = frozen.q_batch([batch[i].s_next for i in live])
        y[live] += gamma * q_next.max(axis=1)
    return y


def loss_and_grads(batch, targets, model):
    """Mean squared TD error over the minibatch and its gradient."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(batch) != len(targets):
        raise ValueError("batch and targets differ in length")
    q, cache = model.forward([t.s for t in batch], keep=True)
    idx = np.arange(len(batch))
    actions = np.array([t.a for t in batch])
    err = q[idx, actions] - targets
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    gq = np.zeros_like(q)
    gq[idx, actions] = 2.0 * err / len(batch)
    return loss, model.backward(cache, gq)


def _grow_like(moment, param):
    if moment.shape == param.shape:
        return moment
    out = np.zeros_like(param)
    out[:moment.shape[0]] = moment
    return out


def optimizer_step(model, grads, config):
    """One Adam update at the scheduled learning rate; increments ``model.step``."""
    params = model.params()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteUpdate(f"non-finite gradient for {name}")
    if config.grad_clip:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
    st = model.opt_state
    m = st.setdefault("m", {})
    v = st.setdefault("v", {})
    t = model.step + 1
    lr = learning_rate(config, model.step)
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        mn = _grow_like(m.get(name, np.zeros_like(p)), p)
        vn = _grow_like(v.get(name, np.zeros_like(p)), p)
        mn *= config.beta1
        mn += (1.0 - config.beta1) * g
        vn *= config.beta2
        vn += (1.0 - config.beta2) * g * g
        m[name], v[name] = mn, vn
        p -= lr * (mn / c1) / (np.sqrt(vn / c2) + config.adam_eps)
        if not np.all(np.isfinite(p)):
            raise NonFiniteUpdate(f"parameter {name} became non-finite")
    model.step = t
    return model


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def to_csv(self):
        lines = [",".join(LOG_HEADER)]
        for r in self.records:
            lines.append(",".join(_fmt(r[k]) for k in LOG_HEADER))
        return "\n".join(lines) + "\n"

    def reward_log(self):
        from .evaluate import RewardLog

        return RewardLog.from_records(
            (r["global_step"], r["episode"], r["env_id"], r["reward"]) for r in self.records)


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "nan"
    return str(x)


def register_envs(model, envs):
    """Create embedding rows for every symbol and word of ``envs`` in sorted order."""
    symbols = sorted({s for spec, _ in envs for s in spec.symbols()})
    words = sorted({w for _, corp in envs if corp is not None
                    for d in corp.descriptions for w in d.text})
    model.register(symbols, words)


def run_episode(model, env, corpus, episode_seed, eps, rng, annotators=(1, 2, 3),
                max_steps=None, on_transition=None):
    """Roll out one episode; returns ``(total_reward, length)``.

    ``eps`` may be a float or a zero-argument callable re-read every step.
    """
    state = env.reset()
    descs = choose_descriptions(env.spec.symbols(), corpus, episode_seed,
                                annotators) if model.config.uses_text else {}
    obs = observe(state, descs)
    total = 0.0
    length = 0
    for _ in range(max_steps or env.spec.max_steps):
        q = model.q_batch([obs])[0]
        a = epsilon_greedy(q, eps() if callable(eps) else eps, rng)
        state, r, done = env.step(a)
        nxt = observe(state, descs)
        total += r
        length += 1
        if on_transition is not None:
            on_transition(obs, a, r, nxt, done)
        if done:
            break
        obs = nxt
    return total, length


def multitask_train(envs, config, model=None, model_config=None, callback=None,
                    dump_path=None):
    """Round-robin multitask TD training over ``envs = [(GameSpec, Corpus), ...]``.

    Returns ``(model, TrainingLog)``. Training stops after ``config.episodes``
    episodes or once ``config.total_steps`` environment steps are reached.
    """
    if not envs:
        raise ValueError("need at least one environment")
    if model is None:
        model = QNetwork.create(model_config or ModelConfig(
            rows=envs[0][0].rows, cols=envs[0][0].cols, seed=config.seed))
    register_envs(model, envs)
    games = [GameEnv(spec, seed=config.seed * 100_003 + 7919 * k)
             for k, (spec, _) in enumerate(envs)]
    ids = [spec.name for spec, _ in envs]
    if len(set(ids)) != len(ids):
        ids = [f"{name}#{k}" for k, name in enumerate(ids)]
    rng = np.random.default_rng([config.seed, 11])
    replay = ReplayBuffer(config.replay_capacity)
    frozen = model.frozen_copy()
    train_log = TrainingLog()
    global_step = 0

    for episode in range(config.episodes):
        k = episode % len(envs)
        spec, corp = envs[k]
        eps = epsilon_at(config, global_step)
        lr = learning_rate(config, model.step)
        losses = []

        def on_transition(obs, a, r, nxt, done, k=k):
            nonlocal global_step, frozen
            replay.push(Transition(obs, a, r, nxt, done, k))
            global_step += 1
            if len(replay) >= max(config.warmup, config.minibatch):
                batch = replay.sample(config.minibatch, rng)
                y = td_targets(batch, frozen, config.gamma)
                try:
                    loss, grads = loss_and_grads(batch, y, model)
                except NonFiniteLoss:
                    if dump_path is not None:
                        save_checkpoint(model, dump_path)
                    raise
                optimizer_step(model, grads, config)
                losses.append(loss)
            if global_step % config.target_refresh_period == 0:
                frozen = model.frozen_copy()

        episode_seed = config.seed * 1_000_003 + episode
        reward, length = run_episode(
            model, games[k], corp, episode_seed, lambda: epsilon_at(config, global_step),
            rng, config.annotators, config.max_steps, on_transition)
        rec = dict(episode=episode, env_id=ids[k], reward=float(reward), length=length,
                   epsilon=float(eps), lr=float(lr),
                   loss_mean=float(np.mean(losses)) if losses else float("nan"),
                   global_step=global_step)
        train_log.append(**rec)
        if callback is not None:
            callback(rec)
        if config.total_steps and global_step >= config.total_steps:
            break
    return model, train_log


def evaluate_policy(model, envs, episodes=1, eps=0.05, seed=0, annotators=(1, 2, 3)):
    """Mean return of near-greedy rollouts per environment (parameters untouched)."""
    rng = np.random.default_rng([seed, 23])
    out = {}
    for k, (spec, corp) in enumerate(envs):
        env = GameEnv(spec, seed=seed * 31 + k)
        returns = [run_episode(model, env, corp, seed * 7_919 + 13 * e + k, eps, rng,
                               annotators)[0]
                   for e in range(episodes)]
        out[spec.name] = float(np.mean(returns))
    return out


def transfer_init(source, target_specs, target_corpus, seed=0):
    """Target-task model: planner, Q head and encoder copied bit-exactly, seen
    embeddings kept, unseen entities and words drawn fresh from ``seed``."""
    model = source.copy()
    model.opt_state = {}
    model.step = 0
    model.table.entities.frozen = False
    model.table.words.frozen = False
    model.table.entities.rng = np.random.default_rng([seed, 101])
    model.table.words.rng = np.random.default_rng([seed, 102])
    register_envs(model, [(spec, target_corpus) for spec in target_specs])
    return model


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"TEXTVIN\x00"
CKPT_VERSION = 1


def _rng_state(rng):
    return rng.bit_generator.state


def save_checkpoint(model, path, extra=None):
    """Write the binary container plus a ``.manifest.txt`` sidecar."""
    path = Path(path)
    tensors = dict(sorted(model.params().items()))
    for kind in ("m", "v"):
        for name, arr in sorted(model.opt_state.get(kind, {}).items()):
            tensors[f"adam.{kind}/{name}"] = arr
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "dtype": "<f8", "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": "textvin-checkpoint",
        "version": CKPT_VERSION,
        "config": dataclasses.asdict(model.config),
        "step": model.step,
        "reactive_pads": [model.reactive.pad1, model.reactive.pad2],
        "k": model.vin.k,
        "entity_keys": list(model.table.entities.index),
        "word_keys": list(model.table.words.index),
        "embedding_seed": model.table.seed,
        "rng": {"entities": _rng_state(model.table.entities.rng),
                "words": _rng_state(model.table.words.rng)},
        "tensors": entries,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    lines = [f"textvin checkpoint v{CKPT_VERSION}", f"step {model.step}",
             f"model_seed {model.config.seed}", f"embedding_seed {model.table.seed}"]
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key} {value}")
    for e in entries:
        lines.append(f"{e['name']} {'x'.join(map(str, e['shape'])) or 'scalar'} {e['dtype']}")
    Path(str(path) + ".manifest.txt").write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a textvin checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    body = raw[20 + hlen:]
    cfg = ModelConfig(**header["config"])
    model = QNetwork.create(cfg, zero=True)
    model.step = header["step"]
    model.vin.k = header["k"]
    model.reactive.pad1, model.reactive.pad2 = header["reactive_pads"]
    model.table.seed = header["embedding_seed"]
    model.table.entities.index = {k: i for i, k in enumerate(header["entity_keys"])}
    model.table.words.index = {k: i for i, k in enumerate(header["word_keys"])}
    model.table.entities.rng.bit_generator.state = header["rng"]["entities"]
    model.table.words.rng.bit_generator.state = header["rng"]["words"]
    opt = {"m": {}, "v": {}}
    for e in header["tensors"]:
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(e["shape"])),
                            offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
        if e["name"].startswith("adam."):
            kind, name = e["name"][5:].split("/", 1)
            opt[kind][name] = arr
        else:
            model.set_param(e["name"], arr)
    model.opt_state = opt if opt["m"] else {}
    return model
