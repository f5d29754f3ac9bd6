"""Factorised per-cell state representation.

Every occupied cell becomes ``[v_o ; v_z]``: a learned vector for the entity's
identity and an LSTM encoding of its text description. Empty cells are zero,
entities without text get ``v_z = 0`` and co-located entities are summed.

Internally everything is batched: a minibatch of observations is reduced to
a small set of unique ``(symbol, description)`` *slots*, slot vectors are
computed once and scattered into an NCHW tensor.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .engine import AVATAR

REPRESENTATIONS = ("full", "text", "id")


class EmptySequence(ValueError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------


class VectorTable:
    """Keyed vectors, lazily initialised from a seeded uniform(-0.1, 0.1) stream."""

    def __init__(self, dim, seed=0, scale=0.1):
        self.dim = dim
        self.scale = scale
        self.rng = np.random.default_rng(seed)
        self.index = {}
        self.matrix = np.zeros((0, dim))
        self.frozen = False

    def __len__(self):
        return len(self.index)

    def __contains__(self, key):
        return key in self.index

    def row(self, key):
        i = self.index.get(key)
        if i is None:
            if self.frozen:
                raise KeyError(f"{key!r} not in frozen table")
            i = len(self.index)
            vec = self.rng.uniform(-self.scale, self.scale, size=(1, self.dim))
            self.matrix = np.vstack([self.matrix, vec])
            self.index[key] = i
        return i

    def vector(self, key):
        i = self.row(key)
        return self.matrix[i]

    def copy(self):
        t = VectorTable(self.dim, 0, self.scale)
        t.rng = np.random.default_rng()
        t.rng.bit_generator.state = self.rng.bit_generator.state
        t.index = dict(self.index)
        t.matrix = self.matrix.copy()
        return t


class EmbeddingTable:
    """Entity-identity vectors and word input vectors for the text encoder."""

    def __init__(self, dim, seed=0):
        self.dim = dim
        self.seed = seed
        self.entities = VectorTable(dim, [seed, 0])
        self.words = VectorTable(dim, [seed, 1])

    def copy(self):
        t = EmbeddingTable.__new__(EmbeddingTable)
        t.dim, t.seed = self.dim, self.seed
        t.entities = self.entities.copy()
        t.words = self.words.copy()
        return t

    def freeze(self):
        self.entities.frozen = True
        self.words.frozen = True
        return self


def embed_entity(table, symbol):
    """Stored vector for ``symbol``; first access draws a fresh seeded vector."""
    return table.entities.vector(symbol)


# ---------------------------------------------------------------------------
# LSTM text encoder
# ---------------------------------------------------------------------------


@dataclass
class TextEncoderParams:
    wx: np.ndarray  # (d_in, 4d), gate order i, f, g, o
    wh: np.ndarray  # (d, 4d)
    b: np.ndarray   # (4d,)

    @property
    def dim(self):
        return self.wh.shape[0]

    @classmethod
    def init(cls, d_in, d, rng):
        s = 1.0 / np.sqrt(d)
        b = np.zeros(4 * d)
        b[d:2 * d] = 1.0
        return cls(rng.uniform(-s, s, (d_in, 4 * d)), rng.uniform(-s, s, (d, 4 * d)), b)

    @classmethod
    def zeros(cls, d_in, d):
        return cls(np.zeros((d_in, 4 * d)), np.zeros((d, 4 * d)), np.zeros(4 * d))

    def arrays(self):
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def lstm_forward(p, X, lengths):
    """Final hidden state of each padded sequence.

    ``X`` is ``(S, T, d_in)``, ``lengths`` ``(S,)``; steps past a sequence's
    length leave its state unchanged.
    """
    S, T, _ = X.shape
    d = p.dim
    h = np.zeros((S, d))
    c = np.zeros((S, d))
    steps = []
    for t in range(T):
        m = (t < lengths)[:, None].astype(np.float64)
        z = X[:, t] @ p.wx + h @ p.wh + p.b
        i = _sigmoid(z[:, :d])
        f = _sigmoid(z[:, d:2 * d])
        g = np.tanh(z[:, 2 * d:3 * d])
        o = _sigmoid(z[:, 3 * d:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((m, h, c, i, f, g, o, tc))
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
    return h, (X, steps)


def lstm_backward(p, cache, dh):
    """Gradients ``(dX, {wx, wh, b})`` given ``dL/dh_final``."""
    X, steps = cache
    dwx = np.zeros_like(p.wx)
    dwh = np.zeros_like(p.wh)
    db = np.zeros_like(p.b)
    dX = np.zeros_like(X)
    dc = np.zeros_like(dh)
    dh = dh.copy()
    for t in range(len(steps) - 1, -1, -1):
        m, h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1 - tc * tc)
        dz = np.concatenate([
            dc_new * g * i * (1 - i),
            dc_new * c_prev * f * (1 - f),
            dc_new * i * (1 - g * g),
            dh_new * tc * o * (1 - o),
        ], axis=1)
        dwx += X[:, t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dX[:, t] = dz @ p.wx.T
        dh = dz @ p.wh.T + (1 - m) * dh
        dc = dc_new * f + (1 - m) * dc
    return dX, {"wx": dwx, "wh": dwh, "b": db}


def encode_description(params, tokens, table):
    """``v_z`` for one token sequence (words looked up in ``table.words``)."""
    if len(tokens) == 0:
        raise EmptySequence("cannot encode an empty description")
    rows = [table.words.row(t) for t in tokens]
    X = table.words.matrix[rows][None]
    h, _ = lstm_forward(params, X, np.array([len(rows)]))
    return h[0]


# ---------------------------------------------------------------------------
# description choice and observations
# ---------------------------------------------------------------------------


def choose_descriptions(symbols, corpus, episode_seed, annotators=None):
    """One description per symbol for an episode; ``None`` where absent."""
    chosen = {}
    for sym in symbols:
        options = corpus.for_entity(sym, annotators) if corpus is not None else []
        if not options:
            chosen[sym] = None
            continue
        rng = np.random.default_rng([episode_seed, zlib.crc32(sym.encode())])
        chosen[sym] = options[int(rng.integers(len(options)))].text
    return chosen


class Obs(NamedTuple):
    """Compact model input for one state."""

    rows: np.ndarray     # (E,) int64
    cols: np.ndarray     # (E,) int64
    kidx: np.ndarray     # (E,) index into keys
    keys: tuple          # unique (symbol, tokens-or-None)
    avatar: tuple
    shape: tuple


def observe(state, descriptions):
    """Encode a State plus per-episode description choice as an :class:`Obs`."""
    occ = state.occupants()
    keys = {}
    kidx = np.empty(len(occ), dtype=np.int64)
    rows = np.empty(len(occ), dtype=np.int64)
    cols = np.empty(len(occ), dtype=np.int64)
    for j, (r, c, sym) in enumerate(occ):
        key = (sym, descriptions.get(sym))
        kidx[j] = keys.setdefault(key, len(keys))
        rows[j] = r
        cols[j] = c
    return Obs(rows, cols, kidx, tuple(keys), state.avatar_pos,
               (state.spec.rows, state.spec.cols))


# ---------------------------------------------------------------------------
# batched phi
# ---------------------------------------------------------------------------


@dataclass
class PhiCache:
    slot_keys: list
    ent_rows: np.ndarray
    desc_of_slot: np.ndarray
    word_rows: np.ndarray
    lstm_cache: object
    bidx: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    slot: np.ndarray


def phi_channels(d, representation):
    return 2 * d if representation == "full" else d


def slot_vectors(obs_list, table, enc, representation="full"):
    """Per-slot cell vectors ``(S, C)`` for a batch, plus placement and cache.

    A slot is one unique ``(symbol, description)`` pair in the batch; every
    occupied cell ``e`` receives ``vecs[cache.slot[e]]`` at
    ``(cache.bidx[e], cache.rows[e], cache.cols[e])``.
    """
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}")
    d = table.dim
    use_id = representation in ("full", "id")
    use_text = representation in ("full", "text")
    slot_of = {}
    slot_keys = []
    b_parts, r_parts, c_parts, s_parts = [], [], [], []
    for b, ob in enumerate(obs_list):
        local = np.empty(len(ob.keys), dtype=np.int64)
        for j, key in enumerate(ob.keys):
            s = slot_of.get(key)
            if s is None:
                s = slot_of[key] = len(slot_keys)
                slot_keys.append(key)
            local[j] = s
        b_parts.append(np.full(len(ob.rows), b, dtype=np.int64))
        r_parts.append(ob.rows)
        c_parts.append(ob.cols)
        s_parts.append(local[ob.kidx])
    bidx = np.concatenate(b_parts)
    rows = np.concatenate(r_parts)
    cols = np.concatenate(c_parts)
    slot = np.concatenate(s_parts)

    S = len(slot_keys)
    parts = []
    ent_rows = np.empty(0, dtype=np.int64)
    desc_of_slot = np.full(S, -1, dtype=np.int64)
    word_rows = np.empty((0, 0), dtype=np.int64)
    lstm_cache = None
    if use_id:
        ent_rows = np.array([table.entities.row(k[0]) for k in slot_keys], dtype=np.int64)
        parts.append(table.entities.matrix[ent_rows])
    if use_text:
        descs = {}
        for s, (_, toks) in enumerate(slot_keys):
            if toks:
                desc_of_slot[s] = descs.setdefault(toks, len(descs))
        vz = np.zeros((S, d))
        if descs:
            seqs = list(descs)
            T = max(len(t) for t in seqs)
            lengths = np.array([len(t) for t in seqs])
            word_rows = np.zeros((len(seqs), T), dtype=np.int64)
            for u, toks in enumerate(seqs):
                word_rows[u, :len(toks)] = [table.words.row(w) for w in toks]
            X = table.words.matrix[word_rows]
            hz, lstm_cache = lstm_forward(enc, X, lengths)
            has = desc_of_slot >= 0
            vz[has] = hz[desc_of_slot[has]]
        parts.append(vz)
    vecs = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
    cache = PhiCache(slot_keys, ent_rows, desc_of_slot, word_rows, lstm_cache,
                     bidx, rows, cols, slot)
    return np.ascontiguousarray(vecs), cache


def slot_vectors_backward(gslot, cache, table, enc, representation="full"):
    """Gradients w.r.t. entity rows, word rows and encoder weights from ``dL/dvecs``."""
    d = table.dim
    grads = {}
    off = 0
    if representation in ("full", "id"):
        ge = np.zeros_like(table.entities.matrix)
        np.add.at(ge, cache.ent_rows, gslot[:, :d])
        grads["emb.entity"] = ge
        off = d
    if representation in ("full", "text"):
        gw = np.zeros_like(table.words.matrix)
        genc = {k: np.zeros_like(v) for k, v in enc.arrays().items()}
        if cache.lstm_cache is not None:
            U = cache.word_rows.shape[0]
            ghz = np.zeros((U, d))
            has = cache.desc_of_slot >= 0
            np.add.at(ghz, cache.desc_of_slot[has], gslot[has, off:off + d])
            dX, genc = lstm_backward(enc, cache.lstm_cache, ghz)
            np.add.at(gw, cache.word_rows.ravel(), dX.reshape(-1, d))
        grads["emb.word"] = gw
        for k, v in genc.items():
            grads[f"enc.{k}"] = v
    return grads


def build_phi_batch(obs_list, table, enc, representation="full"):
    """``(B, C, m, n)`` representation tensor plus a cache for the backward pass."""
    vecs, cache = slot_vectors(obs_list, table, enc, representation)
    m, n = obs_list[0].shape
    phi = np.zeros((len(obs_list), vecs.shape[1], m, n))
    kernels.scatter_cells(phi, cache.bidx, cache.rows, cache.cols, cache.slot, vecs)
    return phi, cache


def build_phi_backward(gphi, cache, table, enc, representation="full"):
    """Gradients w.r.t. entity rows, word rows and encoder weights."""
    gslot = kernels.gather_cells(np.ascontiguousarray(gphi), cache.bidx, cache.rows,
                                 cache.cols, cache.slot, len(cache.slot_keys))
    return slot_vectors_backward(gslot, cache, table, enc, representation)


@dataclass
class PhiTensor:
    values: np.ndarray                     # (m, n, C)
    provenance: dict = field(default_factory=dict)  # (row, col) -> [(symbol, tokens)]


def build_phi(state, corpus, table, enc, episode_seed, representation="full",
              annotators=None):
    """Single-state ``m x n x C`` representation with per-cell provenance."""
    symbols = sorted({s for _, _, s in state.occupants()} - {AVATAR})
    descs = choose_descriptions(symbols, corpus, episode_seed, annotators)
    ob = observe(state, descs)
    phi, _ = build_phi_batch([ob], table, enc, representation)
    prov = {}
    for r, c, sym in state.occupants():
        prov.setdefault((r, c), []).append((sym, descs.get(sym)))
    return PhiTensor(phi[0].transpose(1, 2, 0).copy(), prov)
