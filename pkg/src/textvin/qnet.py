"""Action-value network: a value-iteration planner plus a reactive Q head.

The planner maps the representation tensor to a reward map with one 3x3
convolution, then alternates a 3x3 convolution over ``[reward; value]`` and a
max over action channels ``k`` times. The Q-vector at the avatar's cell is
added to the output of a small convolutional Q head that looks at the same
tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .engine import N_ACTIONS
from .repgen import (EmbeddingTable, TextEncoderParams, choose_descriptions, observe,
                     phi_channels, slot_vectors, slot_vectors_backward)

SUPPORTED_K = (1, 2, 3, 5, 10)


class ShapeMismatch(ValueError):
    pass


class OutOfBounds(IndexError):
    pass


class LengthMismatch(ValueError):
    pass


def _uniform(rng, fan_in, shape):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


@dataclass
class VinParams:
    r_w: np.ndarray  # (1, C, 3, 3)
    r_b: np.ndarray  # (1,)
    t_w: np.ndarray  # (A, 2, 3, 3)
    t_b: np.ndarray  # (A,)
    k: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def init(cls, channels, n_actions, k, rng):
        return cls(_uniform(rng, channels * 9, (1, channels, 3, 3)), np.zeros(1),
                   _uniform(rng, 18, (n_actions, 2, 3, 3)), np.zeros(n_actions), k)

    @classmethod
    def zeros(cls, channels, n_actions, k):
        return cls(np.zeros((1, channels, 3, 3)), np.zeros(1),
                   np.zeros((n_actions, 2, 3, 3)), np.zeros(n_actions), k)

    def arrays(self):
        return {"r_w": self.r_w, "r_b": self.r_b, "t_w": self.t_w, "t_b": self.t_b}


def _covers(size, k, stride, pad):
    out = kernels.conv_out_size(size, k, stride, pad)
    return out >= 1 and (out - 1) * stride + k - 1 - pad >= size - 1


def _full_cover_pad(sizes, k, stride):
    """Smallest symmetric padding whose windows reach every input cell."""
    for pad in range(k):
        if all(_covers(s, k, stride, pad) for s in sizes):
            return pad
    raise ShapeMismatch(f"no padding lets a k={k}, stride={stride} conv cover {sizes}")


def reactive_geometry(rows, cols):
    """Paddings for the (kernel 4, stride 3) and (kernel 2, stride 2) layers.

    Each padding is the smallest that keeps every cell inside some window, so
    the head sees the whole grid, edge rows included.
    """
    pad1 = _full_cover_pad((rows, cols), 4, 3)
    h1 = kernels.conv_out_size(rows, 4, 3, pad1), kernels.conv_out_size(cols, 4, 3, pad1)
    pad2 = _full_cover_pad(h1, 2, 2)
    h2 = kernels.conv_out_size(h1[0], 2, 2, pad2), kernels.conv_out_size(h1[1], 2, 2, pad2)
    return pad1, pad2, h2


@dataclass
class ReactiveParams:
    c1_w: np.ndarray
    c1_b: np.ndarray
    c2_w: np.ndarray
    c2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    pad1: int = 1
    pad2: int = 0

    @classmethod
    def init(cls, channels, rows, cols, n_actions, rng, c1=16, c2=16):
        pad1, pad2, (h, w) = reactive_geometry(rows, cols)
        return cls(_uniform(rng, channels * 16, (c1, channels, 4, 4)), np.zeros(c1),
                   _uniform(rng, c1 * 4, (c2, c1, 2, 2)), np.zeros(c2),
                   _uniform(rng, c2 * h * w, (c2 * h * w, n_actions)), np.zeros(n_actions),
                   pad1, pad2)

    @classmethod
    def zeros(cls, channels, rows, cols, n_actions, c1=16, c2=16):
        pad1, pad2, (h, w) = reactive_geometry(rows, cols)
        return cls(np.zeros((c1, channels, 4, 4)), np.zeros(c1), np.zeros((c2, c1, 2, 2)),
                   np.zeros(c2), np.zeros((c2 * h * w, n_actions)), np.zeros(n_actions),
                   pad1, pad2)

    def arrays(self):
        return {"c1_w": self.c1_w, "c1_b": self.c1_b, "c2_w": self.c2_w,
                "c2_b": self.c2_b, "fc_w": self.fc_w, "fc_b": self.fc_b}


# ---------------------------------------------------------------------------
# planner
# ---------------------------------------------------------------------------


def vin_iterate(p, r):
    """``k`` sweeps from a reward map ``r`` of shape ``(B, 1, m, n)``."""
    r = np.ascontiguousarray(r[:, 0])
    q, v_hist, am_hist = kernels.vin_sweeps(r, p.t_w, p.t_b, p.k)
    v = np.take_along_axis(q, am_hist[-1][:, None], axis=1)[:, 0]
    return q, v, (r, v_hist, am_hist)


def vin_iterate_backward(p, cache, gq):
    """Returns ``(grad_r, grad_t_w, grad_t_b)``; max routes to the argmax action."""
    r, v_hist, am_hist = cache
    gr, gtw, gtb = kernels.vin_sweeps_backward(r, p.t_w, v_hist, am_hist, gq)
    return gr[:, None], gtw, gtb


def vin_forward_batch(p, phi):
    """``phi`` is ``(B, C, m, n)``; returns ``(q_map (B,A,m,n), v_map (B,m,n), cache)``."""
    if phi.ndim != 4 or phi.shape[1] != p.r_w.shape[1]:
        raise ShapeMismatch(f"phi channels {phi.shape} do not match f_R {p.r_w.shape}")
    r = kernels.conv2d_forward(phi, p.r_w, p.r_b, 1, 1)
    q, v, it = vin_iterate(p, r)
    return q, v, (phi, it)


def vin_backward_batch(p, cache, gq):
    """Gradients for ``gq = dL/dq_map``; returns ``(gphi, grads)``."""
    phi, it = cache
    gr, gtw, gtb = vin_iterate_backward(p, it, gq)
    gphi, grw, grb = kernels.conv2d_backward(phi, p.r_w, gr, 1, 1)
    return gphi, {"r_w": grw, "r_b": grb, "t_w": gtw, "t_b": gtb}


def vin_forward(params, phi):
    """Planner on one ``m x n x C`` tensor; returns ``(q_map m x n x A, v_map m x n)``."""
    values = getattr(phi, "values", phi)
    if values.ndim != 3:
        raise ShapeMismatch("expected an m x n x C tensor")
    q, v, _ = vin_forward_batch(params, values.transpose(2, 0, 1)[None].copy())
    return q[0].transpose(1, 2, 0), v[0]


def select_at(q_map, pos):
    """Action values at ``pos`` of an ``m x n x A`` map."""
    r, c = pos
    m, n = q_map.shape[:2]
    if not (0 <= r < m and 0 <= c < n):
        raise OutOfBounds(f"{pos} outside {m}x{n} grid")
    return q_map[r, c]


# ---------------------------------------------------------------------------
# reactive head
# ---------------------------------------------------------------------------


def _check_reactive(p, channels):
    if channels != p.c1_w.shape[1]:
        raise ShapeMismatch(f"phi has {channels} channels, conv1 expects {p.c1_w.shape[1]}")


def reactive_tail(p, z1):
    """Everything after the first convolution; returns ``(q (B, A), cache)``."""
    h1 = np.maximum(z1, 0.0)
    z2 = kernels.conv2d_forward(h1, p.c2_w, p.c2_b, 2, p.pad2)
    h2 = np.maximum(z2, 0.0)
    flat = h2.reshape(h2.shape[0], -1)
    if flat.shape[1] != p.fc_w.shape[0]:
        raise ShapeMismatch(f"conv stack yields {flat.shape[1]} features, fc expects "
                            f"{p.fc_w.shape[0]}")
    return flat @ p.fc_w + p.fc_b, (z1, h1, z2, h2, flat)


def reactive_tail_backward(p, cache, gq):
    """Returns ``(grad_z1, grads)`` for everything after the first convolution."""
    z1, h1, z2, h2, flat = cache
    gfc_w = flat.T @ gq
    gfc_b = gq.sum(axis=0)
    gh2 = (gq @ p.fc_w.T).reshape(h2.shape) * (z2 > 0)
    gh1, gc2_w, gc2_b = kernels.conv2d_backward(h1, p.c2_w, gh2, 2, p.pad2)
    return gh1 * (z1 > 0), {"c2_w": gc2_w, "c2_b": gc2_b, "fc_w": gfc_w, "fc_b": gfc_b}


def reactive_forward_batch(p, phi):
    if phi.ndim != 4:
        raise ShapeMismatch(f"expected (B, C, m, n), got {phi.shape}")
    _check_reactive(p, phi.shape[1])
    z1 = kernels.conv2d_forward(phi, p.c1_w, p.c1_b, 3, p.pad1)
    q, tail = reactive_tail(p, z1)
    return q, (phi, tail)


def reactive_backward_batch(p, cache, gq):
    phi, tail = cache
    gz1, grads = reactive_tail_backward(p, tail, gq)
    gphi, grads["c1_w"], grads["c1_b"] = kernels.conv2d_backward(phi, p.c1_w, gz1, 3, p.pad1)
    return gphi, grads


def reactive_forward(params, phi):
    values = getattr(phi, "values", phi)
    q, _ = reactive_forward_batch(params, values.transpose(2, 0, 1)[None].copy())
    return q[0]


def compose(q_vin, q_r):
    """Default composition: component-wise sum."""
    q_vin = np.asarray(q_vin, dtype=np.float64)
    q_r = np.asarray(q_r, dtype=np.float64)
    if q_vin.shape != q_r.shape:
        raise LengthMismatch(f"{q_vin.shape} vs {q_r.shape}")
    return q_vin + q_r


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    rows: int = 16
    cols: int = 16
    d: int = 30
    k: int = 3
    n_actions: int = N_ACTIONS
    representation: str = "full"
    use_vin: bool = True
    use_reactive: bool = True
    c1: int = 16
    c2: int = 16
    seed: int = 0

    @property
    def channels(self):
        return phi_channels(self.d, self.representation)

    @property
    def uses_text(self):
        return self.representation in ("full", "text")


@dataclass
class ForwardCache:
    vecs: np.ndarray
    phi_cache: object
    pos: np.ndarray
    q_map: np.ndarray = None
    v_map: np.ndarray = None
    vin: tuple = None
    q_r: np.ndarray = None
    reactive: tuple = None


@dataclass
class QOutput:
    q_vin: np.ndarray
    q_r: np.ndarray
    q: np.ndarray
    v_map: np.ndarray
    q_map: np.ndarray


@dataclass
class QNetwork:
    """All learnable parameters plus optimizer bookkeeping."""

    config: ModelConfig
    table: EmbeddingTable
    enc: TextEncoderParams
    vin: VinParams
    reactive: ReactiveParams
    step: int = 0
    opt_state: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config, zero=False):
        rng = np.random.default_rng([config.seed, 7])
        C, A, d = config.channels, config.n_actions, config.d
        if zero:
            enc = TextEncoderParams.zeros(d, d)
            vin = VinParams.zeros(C, A, config.k)
            reactive = ReactiveParams.zeros(C, config.rows, config.cols, A,
                                            config.c1, config.c2)
        else:
            enc = TextEncoderParams.init(d, d, rng)
            vin = VinParams.init(C, A, config.k, rng)
            reactive = ReactiveParams.init(C, config.rows, config.cols, A, rng,
                                           config.c1, config.c2)
        net = cls(config, EmbeddingTable(d, config.seed), enc, vin, reactive)
        return net

    # -- parameter access ---------------------------------------------------

    def params(self):
        """Flat ``name -> array`` view over every learnable tensor."""
        out = {"emb.entity": self.table.entities.matrix, "emb.word": self.table.words.matrix}
        out.update({f"enc.{k}": v for k, v in self.enc.arrays().items()})
        out.update({f"vin.{k}": v for k, v in self.vin.arrays().items()})
        out.update({f"dqn.{k}": v for k, v in self.reactive.arrays().items()})
        return out

    def set_param(self, name, value):
        group, key = name.split(".", 1)
        if group == "emb":
            target = self.table.entities if key == "entity" else self.table.words
            target.matrix = value
        else:
            obj = {"enc": self.enc, "vin": self.vin, "dqn": self.reactive}[group]
            setattr(obj, key, value)

    def copy(self):
        import copy

        return QNetwork(
            config=self.config,
            table=self.table.copy(),
            enc=copy.deepcopy(self.enc),
            vin=copy.deepcopy(self.vin),
            reactive=copy.deepcopy(self.reactive),
            step=self.step,
            opt_state={k: {n: a.copy() for n, a in v.items()} if isinstance(v, dict) else v
                       for k, v in self.opt_state.items()},
        )

    def frozen_copy(self):
        """Snapshot whose embedding tables refuse to grow."""
        net = self.copy()
        net.table.freeze()
        net.opt_state = {}
        return net

    def register(self, symbols=(), words=()):
        """Create embedding rows up front in a deterministic order."""
        for s in symbols:
            self.table.entities.row(s)
        if self.config.uses_text:
            for w in words:
                self.table.words.row(w)

    # -- forward / backward -------------------------------------------------

    def forward(self, obs_list, keep=False):
        """Q-values ``(B, A)`` for a batch of :class:`~textvin.repgen.Obs`.

        Both first-layer convolutions act directly on the per-slot cell
        vectors, so the mostly-empty ``phi`` tensor is never built here.
        """
        cfg = self.config
        vecs, phi_cache = slot_vectors(obs_list, self.table, self.enc, cfg.representation)
        place = (phi_cache.bidx, phi_cache.rows, phi_cache.cols, phi_cache.slot)
        B = len(obs_list)
        m, n = obs_list[0].shape
        q = np.zeros((B, cfg.n_actions))
        pos = np.array([ob.avatar for ob in obs_list])
        cache = ForwardCache(vecs, phi_cache, pos)
        if cfg.use_vin:
            r = kernels.sparse_conv_forward(vecs, place, (B, m, n), self.vin.r_w,
                                            self.vin.r_b, 1, 1)
            cache.q_map, cache.v_map, cache.vin = vin_iterate(self.vin, r)
            q += cache.q_map[np.arange(B), :, pos[:, 0], pos[:, 1]]
        if cfg.use_reactive:
            _check_reactive(self.reactive, vecs.shape[1])
            z1 = kernels.sparse_conv_forward(vecs, place, (B, m, n), self.reactive.c1_w,
                                             self.reactive.c1_b, 3, self.reactive.pad1)
            cache.q_r, cache.reactive = reactive_tail(self.reactive, z1)
            q += cache.q_r
        return q, (cache if keep else None)

    def backward(self, cache, gq):
        """Gradients of a scalar loss given ``gq = dL/dQ`` of shape ``(B, A)``."""
        cfg = self.config
        pc = cache.phi_cache
        place = (pc.bidx, pc.rows, pc.cols, pc.slot)
        B = gq.shape[0]
        gvecs = np.zeros_like(cache.vecs)
        grads = {}
        if cfg.use_vin:
            gqm = np.zeros_like(cache.q_map)
            gqm[np.arange(B), :, cache.pos[:, 0], cache.pos[:, 1]] = gq
            gr, grads["vin.t_w"], grads["vin.t_b"] = vin_iterate_backward(self.vin, cache.vin, gqm)
            g, grads["vin.r_w"], grads["vin.r_b"] = kernels.sparse_conv_backward(
                cache.vecs, place, self.vin.r_w, gr, 1, 1)
            gvecs += g
        if cfg.use_reactive:
            gz1, gr = reactive_tail_backward(self.reactive, cache.reactive, gq)
            grads.update({f"dqn.{k}": v for k, v in gr.items()})
            g, grads["dqn.c1_w"], grads["dqn.c1_b"] = kernels.sparse_conv_backward(
                cache.vecs, place, self.reactive.c1_w, gz1, 3, self.reactive.pad1)
            gvecs += g
        grads.update(slot_vectors_backward(gvecs, pc, self.table, self.enc, cfg.representation))
        for name, value in self.params().items():
            grads.setdefault(name, np.zeros_like(value))
        return grads

    def q_batch(self, obs_list):
        return self.forward(obs_list)[0]


def q_values(model, state, corpus, episode_seed, annotators=None):
    """Full diagnostic output for one state."""
    symbols = sorted({s for _, _, s in state.occupants()})
    descs = choose_descriptions(symbols, corpus, episode_seed, annotators) \
        if model.config.uses_text else {}
    ob = observe(state, descs)
    _, cache = model.forward([ob], keep=True)
    A = model.config.n_actions
    m, n = ob.shape
    if cache.q_map is not None:
        q_map = cache.q_map[0].transpose(1, 2, 0)
        v_map = cache.v_map[0]
        q_vin = select_at(q_map, state.avatar_pos).copy()
    else:
        q_map = np.zeros((m, n, A))
        v_map = np.zeros((m, n))
        q_vin = np.zeros(A)
    q_r = cache.q_r[0] if cache.q_r is not None else np.zeros(A)
    return QOutput(q_vin, q_r, compose(q_vin, q_r), v_map, q_map)
