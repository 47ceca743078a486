"""Joint training of the classifier and the motif-selection policy."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import UNLABELED, Dataset, LabelSet, row_normalize, wl_features
from .matrices import MotifBank, PsiKind, degenerate_gcn_matrix
from .model import MCN, ForwardTrace, ModelParams, ModelSpec
from .motifs import MotifKind, node_motif_counts

LOG_FLOOR = 1e-12
BASELINE_DECAY = 0.95


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


# ----------------------------------------------------------------- config

def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_ints(v: str) -> tuple:
    return tuple(int(p) for p in v.replace(",", " ").split())


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters. ``model`` selects the full model or a GCN/GAT special case."""

    model: str = "mcn"
    motifs: tuple = (MotifKind.EDGE, MotifKind.TRIANGLE)
    k_max: int = 1
    psi: PsiKind = PsiKind.SYMNORM
    lr: float = 0.005
    dropout: float = 0.6
    l2: float = 0.0005
    epsilon: float = 0.1
    patience: int = 100
    heads: tuple = (8, 1)
    hidden: tuple = (8,)
    max_epochs: int = 1000
    seed: int = 0
    advantage_baseline: bool = False
    c_log_transform: bool = True
    feature_norm: str = "row"
    wl_iterations: int = 3
    wl_max_colors: int = 1024

    def __post_init__(self):
        if self.model not in ("mcn", "gat", "gcn"):
            raise ConfigError(f"model must be mcn, gat or gcn, got {self.model!r}")
        if len(self.motifs) < 1:
            raise ConfigError("at least one motif is required")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        for name in ("dropout", "epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.dropout >= 1.0:
            raise ConfigError("dropout must be < 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.patience < 0 or self.max_epochs < 1:
            raise ConfigError("patience must be >= 0 and max_epochs >= 1")
        if len(self.heads) != len(self.hidden) + 1:
            raise ConfigError("heads needs one entry per layer (len(hidden) + 1)")
        if self.feature_norm not in ("row", "none"):
            raise ConfigError("feature_norm must be 'row' or 'none'")
        if self.model != "mcn":
            # gat / gcn fix the action space to the edge motif, one step
            object.__setattr__(self, "motifs", (MotifKind.EDGE,))
            object.__setattr__(self, "k_max", 1)
            object.__setattr__(self, "psi", PsiKind.UNWEIGHTED)

    @property
    def self_attention(self) -> bool:
        return self.model != "gcn"

    @classmethod
    def gat(cls, **kw) -> "TrainConfig":
        base = dict(model="gat", motifs=(MotifKind.EDGE,), k_max=1, psi=PsiKind.UNWEIGHTED)
        base.update(kw)
        return cls(**base)

    @classmethod
    def gcn(cls, **kw) -> "TrainConfig":
        base = dict(model="gcn", motifs=(MotifKind.EDGE,), k_max=1, psi=PsiKind.UNWEIGHTED,
                    heads=(1, 1), hidden=(16,), lr=0.01, dropout=0.5, patience=10, max_epochs=200)
        base.update(kw)
        return cls(**base)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    # key=value text format ------------------------------------------------

    _PARSERS = {
        "model": str.strip,
        "motifs": lambda v: tuple(MotifKind.parse(p) for p in v.replace(",", " ").split()),
        "k_max": int, "psi": PsiKind.parse, "lr": float, "dropout": float, "l2": float,
        "epsilon": float, "patience": int, "heads": _parse_ints, "hidden": _parse_ints,
        "max_epochs": int, "seed": int, "advantage_baseline": _parse_bool,
        "c_log_transform": _parse_bool, "feature_norm": str.strip,
        "wl_iterations": int, "wl_max_colors": int,
    }

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in cls._PARSERS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = cls._PARSERS[key](value)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, source=str(path))

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "motifs":
                v = [m.value for m in v]
            elif isinstance(v, PsiKind):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_text(self) -> str:
        lines = []
        for key, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(p) for p in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls.from_text("\n".join(
            f"{k} = {','.join(map(str, v)) if isinstance(v, list) else v}" for k, v in d.items()))


# -------------------------------------------------------------- model setup

def prepare_features(data: Dataset, config: TrainConfig):
    if data.features.needs_wl or data.features.d == 0:
        x = wl_features(data.graph, config.wl_iterations, config.wl_max_colors).values
    else:
        x = data.features.values
    x = sp.csr_matrix(x, dtype=np.float64)
    if config.feature_norm == "row":
        x = sp.csr_matrix(row_normalize(x))
    return x


def build_bank(data: Dataset, config: TrainConfig) -> MotifBank:
    if config.model == "gcn":
        return MotifBank.single(data.graph, degenerate_gcn_matrix(data.graph))
    if config.model == "gat":
        return MotifBank(data.graph, (MotifKind.EDGE,), 1, PsiKind.UNWEIGHTED)
    return MotifBank(data.graph, config.motifs, config.k_max, config.psi)


def build_model(data: Dataset, config: TrainConfig, x=None, bank=None, params=None) -> MCN:
    if x is None:
        x = prepare_features(data, config)
    if bank is None:
        bank = build_bank(data, config)
    motif_attention = bank.n_motifs * bank.k_max > 1
    local = counts = None
    count_dim = 0
    if motif_attention:
        local = degenerate_gcn_matrix(data.graph).matrix
        counts = node_motif_counts(data.graph, config.motifs).counts
        if config.c_log_transform:
            counts = np.log1p(counts)
        count_dim = counts.shape[1]
    spec = ModelSpec(in_dim=x.shape[1], n_classes=data.labels.n_classes, hidden=config.hidden,
                     heads=config.heads, self_attention=config.self_attention, count_dim=count_dim,
                     n_motifs=bank.n_motifs, k_max=bank.k_max)
    return MCN(spec, bank, params=params, local=local, counts=counts, seed=config.seed)


# ------------------------------------------------------------ loss pieces

def cross_entropy_loss(probs, labels, idx):
    """Summed cross-entropy over ``idx`` and its gradient w.r.t. the pre-softmax logits."""
    lab = labels.labels if isinstance(labels, LabelSet) else np.asarray(labels)
    idx = np.asarray(idx, dtype=np.int64)
    y = lab[idx]
    if np.any(y == UNLABELED):
        raise ValueError("cross-entropy over an unlabeled node")
    loss = -float(np.sum(np.log(np.maximum(probs[idx, y], LOG_FLOOR))))
    grad = np.zeros_like(probs)
    grad[idx] = probs[idx]
    grad[idx, y] -= 1.0
    return loss, grad


@dataclass
class RewardLedger:
    """Per layer: summed rewards of all credited paths and the path counts."""

    rewards: list
    paths: list

    def weights(self, baseline: float = 0.0) -> list:
        return [r - baseline * p for r, p in zip(self.rewards, self.paths)]

    def credited(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.paths[layer])


def assign_rewards(trace: ForwardTrace, labels, train_idx, preds=None) -> RewardLedger:
    """Credit +1 / -1 per training node and spread it backward through the chosen rows.

    A node receives one contribution for every rewarded path that reaches it
    through the nonzero pattern of the next layer's propagation matrix.
    """
    lab = labels.labels if isinstance(labels, LabelSet) else np.asarray(labels)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if preds is None:
        preds = np.argmax(trace.probs, axis=1)
    n = trace.probs.shape[0]
    n_layers = len(trace.layers)
    top_r = np.zeros(n)
    top_p = np.zeros(n)
    np.add.at(top_r, train_idx, np.where(preds[train_idx] == lab[train_idx], 1.0, -1.0))
    np.add.at(top_p, train_idx, 1.0)
    rewards = [None] * n_layers
    paths = [None] * n_layers
    rewards[-1], paths[-1] = top_r, top_p
    for l in range(n_layers - 1, 0, -1):
        a_hat = trace.layers[l].a_hat
        support = sp.csr_matrix((np.ones(a_hat.nnz), a_hat.indices, a_hat.indptr), shape=a_hat.shape)
        rewards[l - 1] = support.T @ rewards[l]
        paths[l - 1] = support.T @ paths[l]
    return RewardLedger(rewards, paths)


def attention_loss_gradient(model: MCN, trace: ForwardTrace, ledger: RewardLedger, baseline: float = 0.0):
    """Policy-gradient loss and gradient for the motif/step choices in ``trace``."""
    return model.policy_backward(trace, ledger.weights(baseline))


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, only=None):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            if only is not None and k not in only:
                continue
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def is_decayed(name: str) -> bool:
    """Weight decay covers embedding matrices and attention vectors only."""
    return name.endswith(".W") and ".h" in name or name.endswith(".a")


def total_gradient(model: MCN, trace: ForwardTrace, labels, train_idx, *, baseline=0.0,
                   ledger=None, l2=0.0, scale=1.0):
    """Gradient of L_C + L_A (times ``scale``) plus the l2 term; also returns both losses."""
    l_c, dlogits = cross_entropy_loss(trace.probs, labels, train_idx)
    g_c = model.backward(trace, dlogits)
    if ledger is None:
        ledger = assign_rewards(trace, labels, train_idx)
    l_a, g_a = attention_loss_gradient(model, trace, ledger, baseline)
    named = model.params.named()
    grads = {}
    for k in g_c:
        g = scale * (g_c[k] + g_a[k])
        if l2 and is_decayed(k):
            g = g + l2 * named[k]
        grads[k] = g
    return grads, l_c, l_a, ledger


# ---------------------------------------------------------------- metrics

@dataclass
class Metrics:
    accuracy: float
    micro_f1: float
    loss: float = float("nan")
    n: int = 0
    per_class: dict = field(default_factory=dict)


def micro_f1_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        return float("nan")
    classes = np.union1d(y_true, y_pred)
    tp = sum(int(np.sum((y_pred == c) & (y_true == c))) for c in classes)
    fp = sum(int(np.sum((y_pred == c) & (y_true != c))) for c in classes)
    fn = sum(int(np.sum((y_pred != c) & (y_true == c))) for c in classes)
    return 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0


def split_metrics(probs, labels, idx) -> Metrics:
    lab = labels.labels if isinstance(labels, LabelSet) else np.asarray(labels)
    idx = np.asarray(idx, dtype=np.int64)
    idx = idx[lab[idx] != UNLABELED]
    if idx.size == 0:
        return Metrics(float("nan"), float("nan"), float("nan"), 0)
    pred = np.argmax(probs[idx], axis=1)
    y = lab[idx]
    loss, _ = cross_entropy_loss(probs, lab, idx)
    per_class = {}
    for c in np.unique(np.concatenate([y, pred])):
        per_class[int(c)] = {"support": int(np.sum(y == c)), "predicted": int(np.sum(pred == c)),
                             "correct": int(np.sum((y == c) & (pred == c)))}
    return Metrics(float(np.mean(pred == y)), micro_f1_score(y, pred), loss / idx.size, int(idx.size), per_class)


# ------------------------------------------------------------------ train

@dataclass
class TrainResult:
    model: MCN
    config: TrainConfig
    history: list
    best_epoch: int
    x: object
    wall_clock: float = 0.0

    def history_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=False) + "\n" for rec in self.history)


def train(data: Dataset, config: TrainConfig, log=None, x=None, bank=None) -> TrainResult:
    """Train with early stopping; returns the best-validation-accuracy parameters.

    Each epoch runs one epsilon-greedy forward pass with dropout, one Adam
    step on the gradient of the summed cross-entropy plus the policy loss
    (both divided by the number of training nodes) plus l2 decay, and a
    greedy, dropout-free validation pass.
    """
    start = time.perf_counter()
    if x is None:
        x = prepare_features(data, config)
    model = build_model(data, config, x=x, bank=bank)
    labels = data.labels
    train_idx, val_idx = data.splits.train, data.splits.val
    if train_idx.size == 0:
        raise ValueError("empty training split")
    named = model.params.named()
    opt = Adam(named, config.lr)
    baseline = 0.0
    best_loss, best_acc = math.inf, -math.inf
    ckpt_acc, ckpt_loss = -math.inf, math.inf
    best_params, best_epoch = model.params.copy(), 0
    bad_epochs = 0
    history = []
    scale = 1.0 / train_idx.size

    for epoch in range(config.max_epochs):
        probs, trace = model.forward(x, mode="epsilon_greedy", dropout=config.dropout,
                                     epsilon=config.epsilon, seed=config.seed, epoch=epoch)
        b = 0.0
        if config.advantage_baseline:
            correct = np.argmax(probs[train_idx], 1) == labels.labels[train_idx]
            mean_reward = float(np.mean(np.where(correct, 1.0, -1.0)))
            # the running mean starts at the first observation rather than 0
            b = mean_reward if epoch == 0 else baseline
            baseline = BASELINE_DECAY * b + (1 - BASELINE_DECAY) * mean_reward
        grads, l_c, l_a, _ = total_gradient(model, trace, labels, train_idx, baseline=b,
                                            l2=config.l2, scale=scale)
        if not (math.isfinite(l_c) and math.isfinite(l_a)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}: L_C={l_c}, L_A={l_a}")
        opt.step(grads)
        if not all(np.all(np.isfinite(v)) for v in named.values()):
            raise DivergenceError(f"non-finite parameters after epoch {epoch}")

        train_acc = float(np.mean(np.argmax(probs[train_idx], 1) == labels.labels[train_idx]))
        val_probs, _ = model.forward(x, mode="greedy")
        val = split_metrics(val_probs, labels, val_idx)
        rec = {"epoch": epoch, "L_C": l_c, "L_A": l_a, "train_acc": train_acc,
               "val_acc": val.accuracy, "val_loss": val.loss, "epsilon": config.epsilon}
        history.append(rec)
        if log is not None:
            log(rec)

        improved = val.loss < best_loss or val.accuracy > best_acc
        if val.accuracy > ckpt_acc or (val.accuracy == ckpt_acc and val.loss < ckpt_loss):
            ckpt_acc, ckpt_loss = val.accuracy, val.loss
            best_params, best_epoch = model.params.copy(), epoch
        if improved:
            best_loss = min(best_loss, val.loss)
            best_acc = max(best_acc, val.accuracy)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break

    model.params = best_params
    return TrainResult(model, config, history, best_epoch, x, time.perf_counter() - start)


def evaluate(model: MCN, data: Dataset, split: str = "test", x=None, config: TrainConfig | None = None) -> Metrics:
    if x is None:
        x = prepare_features(data, config or TrainConfig())
    probs = model.predict(x)
    return split_metrics(probs, data.labels, data.splits.get(split))


# ---------------------------------------------------------- policy probes

def rigged_policy_probe(bank: MotifBank, rigged_reward_motif: MotifKind | None, epochs: int = 300,
                        epsilon: float = 0.1, lr: float = 0.05, seed: int = 0, in_dim: int = 8,
                        return_history: bool = False):
    """Train only the layer-1 policy with a synthetic reward.

    Every node earns +1 when its layer-1 motif choice equals
    ``rigged_reward_motif`` and 0 otherwise (0 everywhere when it is None).
    Returns greedy action frequencies over the bank's motifs.
    """
    g = bank.graph
    n = g.n_nodes
    if bank.n_motifs < 2:
        raise ValueError("probe needs at least two motifs")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, in_dim))
    counts = np.log1p(node_motif_counts(g, bank.motifs).counts)
    spec = ModelSpec(in_dim=in_dim, n_classes=2, hidden=(), heads=(1,), count_dim=counts.shape[1],
                     n_motifs=bank.n_motifs, k_max=bank.k_max)
    model = MCN(spec, bank, local=degenerate_gcn_matrix(g).matrix, counts=counts, seed=seed)
    target = None if rigged_reward_motif is None else bank.motifs.index(rigged_reward_motif)
    named = model.params.named()
    policy_keys = {k for k in named if ".f." in k or ".fp." in k}
    opt = Adam(named, lr)
    history = []
    for epoch in range(epochs):
        _, trace = model.forward(x, mode="epsilon_greedy", epsilon=epsilon, seed=seed, epoch=epoch)
        sel = trace.layers[0].selection
        reward = np.zeros(n) if target is None else (sel.t == target).astype(np.float64)
        _, grads = model.policy_backward(trace, [reward / n])
        opt.step(grads, only=policy_keys)
        _, greedy = model.forward(x, mode="greedy")
        freq = np.bincount(greedy.layers[0].selection.t, minlength=bank.n_motifs) / n
        history.append(freq)
    final = history[-1] if history else np.bincount(np.zeros(n, np.int64), minlength=bank.n_motifs) / n
    probs = model.forward(x, mode="greedy")[1].layers[0].selection.probs_f.mean(axis=0)
    out = {"frequencies": dict(zip([m.value for m in bank.motifs], final.tolist())),
           "mean_probs": dict(zip([m.value for m in bank.motifs], probs.tolist()))}
    if return_history:
        out["history"] = np.array(history)
    return out
