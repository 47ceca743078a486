"""Motif convolutional network layers with hand-written backward passes.

A layer embeds its input per head (``Z = H W``), lets every node pick one
(motif, step) propagation row from a bank of motif matrices, and
aggregates neighbors with self-attention weighted by the chosen row.
GCN (fixed normalized weights, no attention) and GAT (edge motif,
unweighted self-loops, self-attention) are special configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .matrices import MotifBank

LEAKY_SLOPE = 0.2


# ------------------------------------------------------------------ utils

def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0)))


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x):
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def counter_uniform(seed, layer, epoch, stream, nodes):
    """Uniform [0, 1) draws that depend only on (seed, layer, epoch, stream, node)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    for part in (layer, epoch, stream):
        key = _splitmix64(key ^ np.uint64(part & 0xFFFFFFFFFFFFFFFF))
    bits = _splitmix64(key ^ np.asarray(nodes, dtype=np.uint64))
    bits = _splitmix64(bits)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


# ------------------------------------------------------------ structures

@dataclass
class ModelSpec:
    in_dim: int
    n_classes: int
    hidden: tuple = (8,)
    heads: tuple = (8, 1)
    self_attention: bool = True
    count_dim: int = 0
    n_motifs: int = 1
    k_max: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.heads = tuple(int(h) for h in self.heads)
        if len(self.heads) != len(self.hidden) + 1:
            raise ValueError("need one head count per layer (len(hidden) + 1)")

    @property
    def n_layers(self) -> int:
        return len(self.heads)

    @property
    def motif_attention(self) -> bool:
        return self.n_motifs * self.k_max > 1

    def layer_dims(self, layer: int):
        """(input width, per-head output width, heads) of a layer."""
        if layer == 0:
            d_in = self.in_dim
        else:
            d_in = self.hidden[layer - 1] * self.heads[layer - 1]
        last = layer == self.n_layers - 1
        d_out = self.n_classes if last else self.hidden[layer]
        return d_in, d_out, self.heads[layer]

    def state_dim(self, layer: int) -> int:
        _, d_out, heads = self.layer_dims(layer)
        return d_out * heads + self.count_dim


@dataclass
class LayerParams:
    W: list  # per head, (D_in, D_out)
    a: list  # per head, (2 D_out,): source half then neighbor half
    b: list  # per head, (D_out,)
    f_W: np.ndarray  # (S, T)
    f_b: np.ndarray  # (T,)
    fp_W: np.ndarray  # (S + T, K)
    fp_b: np.ndarray  # (K,)

    @property
    def n_heads(self) -> int:
        return len(self.W)


class ModelParams:
    def __init__(self, layers):
        self.layers = list(layers)

    @classmethod
    def init(cls, spec: ModelSpec, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        layers = []
        for l in range(spec.n_layers):
            d_in, d_out, heads = spec.layer_dims(l)
            s_dim = spec.state_dim(l)
            t, k = spec.n_motifs, spec.k_max
            layers.append(LayerParams(
                W=[glorot(rng, d_in, d_out) for _ in range(heads)],
                a=[glorot(rng, 2 * d_out, 1, shape=(2 * d_out,)) for _ in range(heads)],
                b=[np.zeros(d_out) for _ in range(heads)],
                f_W=np.zeros((s_dim, t)), f_b=np.zeros(t),
                fp_W=np.zeros((s_dim + t, k)), fp_b=np.zeros(k),
            ))
        return cls(layers)

    def named(self) -> dict:
        """Name -> array mapping sharing memory with the parameters."""
        out = {}
        for l, lp in enumerate(self.layers):
            for h in range(lp.n_heads):
                out[f"l{l}.h{h}.W"] = lp.W[h]
                out[f"l{l}.h{h}.a"] = lp.a[h]
                out[f"l{l}.h{h}.b"] = lp.b[h]
            out[f"l{l}.f.W"] = lp.f_W
            out[f"l{l}.f.b"] = lp.f_b
            out[f"l{l}.fp.W"] = lp.fp_W
            out[f"l{l}.fp.b"] = lp.fp_b
        return out

    @classmethod
    def from_named(cls, spec: ModelSpec, arrays: dict) -> "ModelParams":
        params = cls.init(spec, seed=0)
        for name, target in params.named().items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != target.shape:
                raise ValueError(f"parameter {name}: shape {src.shape}, model expects {target.shape}")
            target[...] = src
        return params

    def copy(self) -> "ModelParams":
        return ModelParams([LayerParams(
            W=[w.copy() for w in lp.W], a=[a.copy() for a in lp.a], b=[b.copy() for b in lp.b],
            f_W=lp.f_W.copy(), f_b=lp.f_b.copy(), fp_W=lp.fp_W.copy(), fp_b=lp.fp_b.copy())
            for lp in self.layers])

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.named().items()}


@dataclass
class ActionSelection:
    t: np.ndarray
    k: np.ndarray
    probs_f: np.ndarray
    probs_f_prime: np.ndarray
    mode: str


@dataclass
class HeadTrace:
    u: np.ndarray | None  # pre-LeakyReLU logits per stored entry
    w: np.ndarray  # combined weights per stored entry (before coefficient dropout)
    coef_mask: np.ndarray | None
    out: np.ndarray


@dataclass
class LayerTrace:
    h_in: object
    h_drop: object
    in_mask: np.ndarray | None
    z: np.ndarray  # (N, heads * D_out)
    state: np.ndarray | None
    policy_in: np.ndarray | None
    selection: ActionSelection
    a_hat: sp.csr_matrix
    rows: np.ndarray
    heads: list = field(default_factory=list)
    pre: np.ndarray | None = None  # concatenated head outputs (hidden) or averaged logits (output)
    out: np.ndarray | None = None


@dataclass
class ForwardTrace:
    layers: list
    probs: np.ndarray

    @property
    def logits(self):
        return self.layers[-1].pre


# ------------------------------------------------------------ operations

def compute_state(z, local, counts):
    """Node states: locally propagated embeddings next to the motif counts."""
    left = local @ z
    if counts is None or counts.shape[1] == 0:
        return np.asarray(left)
    if counts.shape[0] != z.shape[0]:
        raise ValueError("motif count matrix has the wrong number of rows")
    return np.hstack([left, counts])


def policy_probs(state, lp: LayerParams):
    pf = softmax(state @ lp.f_W + lp.f_b)
    policy_in = np.hstack([state, pf])
    pfp = softmax(policy_in @ lp.fp_W + lp.fp_b)
    return pf, pfp, policy_in


def select_actions(state, lp: LayerParams, mode="greedy", epsilon=0.0, seed=0, layer=0, epoch=0):
    """Pick a motif and a step size for every node.

    Greedy mode takes the argmax (lowest index on ties). In
    ``"epsilon_greedy"`` mode each node independently replaces both choices
    by uniform random ones with probability ``epsilon``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    pf, pfp, _ = policy_probs(state, lp)
    t = np.argmax(pf, axis=1)
    k = np.argmax(pfp, axis=1)
    if mode == "epsilon_greedy" and epsilon > 0:
        nodes = np.arange(state.shape[0])
        explore = counter_uniform(seed, layer, epoch, 0, nodes) < epsilon
        rand_t = np.minimum((counter_uniform(seed, layer, epoch, 1, nodes) * pf.shape[1]).astype(np.int64),
                            pf.shape[1] - 1)
        rand_k = np.minimum((counter_uniform(seed, layer, epoch, 2, nodes) * pfp.shape[1]).astype(np.int64),
                            pfp.shape[1] - 1)
        t = np.where(explore, rand_t, t)
        k = np.where(explore, rand_k, k)
    elif mode not in ("greedy", "epsilon_greedy"):
        raise ValueError(f"unknown selection mode {mode!r}")
    return ActionSelection(t, k, pf, pfp, mode)


def build_propagation_matrix(sel: ActionSelection, bank: MotifBank) -> sp.csr_matrix:
    """Row i is row i of the bank matrix for node i's chosen (motif, step)."""
    n = sel.t.size
    blocks = []
    for t in range(bank.n_motifs):
        for k in range(bank.k_max):
            chosen = (sel.t == t) & (sel.k == k)
            if not chosen.any():
                continue
            try:
                src = bank[t, k].matrix
            except IndexError:
                raise KeyError(f"bank has no matrix for motif {t}, step {k + 1}") from None
            blocks.append(sp.diags(chosen.astype(np.float64)) @ src)
    out = blocks[0] if len(blocks) == 1 else sum(blocks[1:], blocks[0])
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    out.sort_indices()
    if out.shape != (n, n):
        raise ValueError("bank matrix shape does not match node count")
    return out


def _segment_softmax(g, rows, indptr, n):
    if np.any(np.diff(indptr) == 0):
        raise ValueError("propagation matrix has an empty row")
    gmax = np.maximum.reduceat(g, indptr[:-1])
    ex = np.exp(g - gmax[rows])
    den = np.bincount(rows, weights=ex, minlength=n)
    return ex / den[rows]


def attention_weights(z, a, a_hat, rows, self_attention=True):
    """Per-entry neighbor weights for one head.

    With self-attention the weight is softmax_j(LeakyReLU(a . [z_i, z_j])) * A_ij
    renormalized over the row, i.e. a softmax of logit + log A_ij. Without it
    the stored entries of the propagation matrix are used unchanged.
    """
    if not self_attention:
        return None, a_hat.data.copy()
    d = z.shape[1]
    u = (z @ a[:d])[rows] + (z @ a[d:])[a_hat.indices]
    e = np.where(u > 0, u, LEAKY_SLOPE * u)
    w = _segment_softmax(e + np.log(a_hat.data), rows, a_hat.indptr, a_hat.shape[0])
    return u, w


def self_attention_propagate(z, a, b, a_hat, rows, self_attention=True, coef_mask=None):
    """Weighted neighbor aggregation plus bias; the nonlinearity is applied by the caller."""
    u, w = attention_weights(z, a, a_hat, rows, self_attention)
    wd = w if coef_mask is None else w * coef_mask
    agg = sp.csr_matrix((wd, a_hat.indices, a_hat.indptr), shape=a_hat.shape)
    return HeadTrace(u, w, coef_mask, agg @ z + b)


def _dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ----------------------------------------------------------------- model

class MCN:
    """Stacked motif convolution layers sharing one motif bank.

    ``local`` is the fixed matrix used for the state's propagated-embedding
    block and ``counts`` the per-node motif count features; both are only
    needed when the action space has more than one (motif, step) pair.
    """

    def __init__(self, spec: ModelSpec, bank: MotifBank, params: ModelParams | None = None,
                 local=None, counts=None, seed: int = 0):
        if bank.n_motifs != spec.n_motifs or bank.k_max != spec.k_max:
            raise ValueError("motif bank does not match the model's action space")
        self.spec = spec
        self.bank = bank
        self.params = params if params is not None else ModelParams.init(spec, seed)
        self.local = None if local is None else sp.csr_matrix(local)
        self.counts = None if counts is None else np.asarray(counts, dtype=np.float64)
        if spec.motif_attention:
            width = 0 if self.counts is None else self.counts.shape[1]
            if self.local is None or width != spec.count_dim:
                raise ValueError("motif attention needs a local matrix and count features of width count_dim")

    @property
    def n_nodes(self) -> int:
        return self.bank[0, 0].matrix.shape[0]

    # forward ------------------------------------------------------------

    def forward(self, x, mode="greedy", dropout=0.0, epsilon=0.0, seed=0, epoch=0,
                frozen_actions=None, rng=None):
        """Class probabilities and the trace needed for both backward passes.

        ``frozen_actions`` is an optional per-layer list of ``(t, k)`` arrays
        that overrides action selection.
        """
        n = self.n_nodes
        spec = self.spec
        if dropout > 0 and rng is None:
            rng = np.random.default_rng([seed, epoch, 0xD0])
        h = x
        layers = []
        for l, lp in enumerate(self.params.layers):
            d_in, d_out, n_heads = spec.layer_dims(l)
            if h.shape != (n, d_in):
                raise ValueError(f"layer {l} expects input of shape {(n, d_in)}, got {h.shape}")
            h_drop, in_mask = h, None
            if dropout > 0:
                if sp.issparse(h):
                    h_drop = sp.csr_matrix(h, copy=True)
                    in_mask = _dropout_mask(rng, h_drop.data.shape, dropout)
                    h_drop.data *= in_mask
                else:
                    in_mask = _dropout_mask(rng, h.shape, dropout)
                    h_drop = h * in_mask
            w_cat = np.hstack(lp.W)
            z = np.asarray(h_drop @ w_cat)

            state = policy_in = None
            if spec.motif_attention:
                state = compute_state(z, self.local, self.counts)
                if frozen_actions is not None:
                    pf, pfp, policy_in = policy_probs(state, lp)
                    t, k = frozen_actions[l]
                    sel = ActionSelection(np.asarray(t), np.asarray(k), pf, pfp, "frozen")
                else:
                    sel = select_actions(state, lp, mode, epsilon, seed, l, epoch)
                    policy_in = np.hstack([state, sel.probs_f])
            else:
                ones = np.ones((n, 1))
                sel = ActionSelection(np.zeros(n, np.int64), np.zeros(n, np.int64), ones, ones, mode)
            a_hat = build_propagation_matrix(sel, self.bank)
            rows = np.repeat(np.arange(n), np.diff(a_hat.indptr))

            heads = []
            for hd in range(n_heads):
                coef_mask = None
                if dropout > 0 and spec.self_attention:
                    coef_mask = _dropout_mask(rng, a_hat.nnz, dropout)
                zh = z[:, hd * d_out:(hd + 1) * d_out]
                heads.append(self_attention_propagate(zh, lp.a[hd], lp.b[hd], a_hat, rows,
                                                      spec.self_attention, coef_mask))
            lt = LayerTrace(h, h_drop, in_mask, z, state, policy_in, sel, a_hat, rows, heads)
            if l < spec.n_layers - 1:
                lt.pre = np.hstack([ht.out for ht in heads])
                lt.out = elu(lt.pre)
            else:
                lt.pre = sum(ht.out for ht in heads) / n_heads
                lt.out = softmax(lt.pre)
            layers.append(lt)
            h = lt.out
        return h, ForwardTrace(layers, h)

    def predict(self, x):
        probs, _ = self.forward(x, mode="greedy")
        return probs

    # backward -----------------------------------------------------------

    def backward(self, trace: ForwardTrace, dlogits) -> dict:
        """Gradients of a loss given its gradient w.r.t. the output logits."""
        spec = self.spec
        grads = self.params.zeros_like()
        d_layer_out = None
        for l in range(spec.n_layers - 1, -1, -1):
            lt = trace.layers[l]
            lp = self.params.layers[l]
            _, d_out, n_heads = spec.layer_dims(l)
            if l == spec.n_layers - 1:
                d_heads = [dlogits / n_heads] * n_heads
            else:
                d_pre = d_layer_out * elu_grad(lt.pre)
                d_heads = [d_pre[:, h * d_out:(h + 1) * d_out] for h in range(n_heads)]
            dz = np.zeros_like(lt.z)
            for h in range(n_heads):
                zh = lt.z[:, h * d_out:(h + 1) * d_out]
                dzh, da, db = _head_backward(zh, lp.a[h], lt.a_hat, lt.rows, lt.heads[h], d_heads[h],
                                             spec.self_attention)
                dz[:, h * d_out:(h + 1) * d_out] = dzh
                grads[f"l{l}.h{h}.a"] += da
                grads[f"l{l}.h{h}.b"] += db
            _accumulate_w(grads, l, lt, dz, d_out, n_heads)
            if l > 0:
                w_cat = np.hstack(lp.W)
                d_in = dz @ w_cat.T
                if lt.in_mask is not None:
                    d_in = d_in * lt.in_mask
                d_layer_out = d_in
        return grads

    def policy_backward(self, trace: ForwardTrace, weights) -> tuple:
        """Loss ``-sum_l sum_i weights[l][i] (log f_i[t_i] + log f'_i[k_i])`` and its gradient.

        The gradient reaches the policy maps and, through each layer's
        state, that layer's embedding matrices. It does not flow into the
        attention vectors or into earlier layers.
        """
        spec = self.spec
        grads = self.params.zeros_like()
        loss = 0.0
        if not spec.motif_attention:
            return loss, grads
        for l, lt in enumerate(trace.layers):
            w = np.asarray(weights[l], dtype=np.float64)
            if not np.any(w):
                continue
            lp = self.params.layers[l]
            sel = lt.selection
            n = w.size
            idx = np.arange(n)
            pf, pfp = sel.probs_f, sel.probs_f_prime
            loss -= float(np.sum(w * (np.log(pf[idx, sel.t]) + np.log(pfp[idx, sel.k]))))

            onehot_k = np.zeros_like(pfp)
            onehot_k[idx, sel.k] = 1.0
            d_fp_logits = -w[:, None] * (onehot_k - pfp)
            grads[f"l{l}.fp.W"] += lt.policy_in.T @ d_fp_logits
            grads[f"l{l}.fp.b"] += d_fp_logits.sum(axis=0)
            d_policy_in = d_fp_logits @ lp.fp_W.T
            s_dim = lt.state.shape[1]
            d_state = d_policy_in[:, :s_dim]
            d_pf = d_policy_in[:, s_dim:]

            onehot_t = np.zeros_like(pf)
            onehot_t[idx, sel.t] = 1.0
            d_f_logits = -w[:, None] * (onehot_t - pf)
            d_f_logits += pf * (d_pf - np.sum(pf * d_pf, axis=1, keepdims=True))
            grads[f"l{l}.f.W"] += lt.state.T @ d_f_logits
            grads[f"l{l}.f.b"] += d_f_logits.sum(axis=0)
            d_state += d_f_logits @ lp.f_W.T

            _, d_out, n_heads = spec.layer_dims(l)
            d_left = d_state[:, :d_out * n_heads]
            dz = np.asarray(self.local.T @ d_left)
            _accumulate_w(grads, l, lt, dz, d_out, n_heads)
        return loss, grads


def _accumulate_w(grads, l, lt, dz, d_out, n_heads):
    dw_cat = np.asarray(lt.h_drop.T @ dz)
    for h in range(n_heads):
        grads[f"l{l}.h{h}.W"] += dw_cat[:, h * d_out:(h + 1) * d_out]


def _head_backward(z, a, a_hat, rows, ht: HeadTrace, dout, self_attention):
    n = z.shape[0]
    cols = a_hat.indices
    db = dout.sum(axis=0)
    wd = ht.w if ht.coef_mask is None else ht.w * ht.coef_mask
    agg_t = sp.csr_matrix((wd, cols, a_hat.indptr), shape=a_hat.shape).T
    dz = np.asarray(agg_t @ dout)
    if not self_attention:
        return dz, np.zeros_like(a), db
    # d out_i / d w_ij = z_j
    dwd = np.einsum("ef,ef->e", dout[rows], z[cols])
    dw = dwd if ht.coef_mask is None else dwd * ht.coef_mask
    row_dot = np.bincount(rows, weights=ht.w * dw, minlength=n)
    dg = ht.w * (dw - row_dot[rows])
    du = dg * np.where(ht.u > 0, 1.0, LEAKY_SLOPE)
    d = z.shape[1]
    ds_src = np.bincount(rows, weights=du, minlength=n)
    ds_dst = np.bincount(cols, weights=du, minlength=n)
    dz += np.outer(ds_src, a[:d]) + np.outer(ds_dst, a[d:])
    da = np.concatenate([z.T @ ds_src, z.T @ ds_dst])
    return dz, da, db
