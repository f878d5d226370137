"""Frame-level encoder, balanced sampling, SGD and the training loop.

The encoder applies per-frame ``tanh`` affine layers, averages the last
hidden layer over frames, and maps the pooled vector to the embedding with
an affine head. Parameters live in a plain ``dict`` of float64 arrays.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .formats import EmbeddingSet
from .interreg import RegConfig, combined_loss, inter_loss, sep_energy
from .losses import (
    AnnealConfig,
    MarginConfig,
    angular_loss,
    anneal_schedule,
    blended_loss,
    modified_softmax,
    softmax_ce,
)

log = logging.getLogger(__name__)

LOSS_KINDS = ("softmax", "angular")


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; ``log`` holds the records up to the last good epoch."""

    def __init__(self, msg, log_records):
        super().__init__(msg)
        self.log = log_records


@dataclass(frozen=True)
class TrainingConfig:
    emb_dim: int = 512
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 10
    lr_init: float = 0.1
    lr_final: float = 0.001
    milestones: tuple[int, ...] | None = None  # default: 50% and 75% of epochs
    momentum: float = 0.9
    P: int = 8
    K: int = 4
    loss: str = "angular"
    margin: MarginConfig = field(default_factory=MarginConfig)
    lambda_inter: float = 0.0
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    head_init_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.milestones is not None:
            object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not self.lr_init > self.lr_final > 0:
            raise ValueError("need lr_init > lr_final > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.P * self.K < 2 or self.P < 1 or self.K < 1:
            raise ValueError("need P, K >= 1 and P*K >= 2")
        if self.epochs < 0 or self.emb_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("epochs, emb_dim and hidden widths must be positive")
        ms = self.milestones
        if ms is not None and any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {ms}")
        RegConfig(self.lambda_inter)

    def resolved_milestones(self):
        if self.milestones is not None:
            return self.milestones
        return tuple(sorted({int(0.5 * self.epochs), int(0.75 * self.epochs)}))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    lambda_a: float
    lambda_blend: float
    sep_energy: float

    def line(self):
        return (
            f"{self.epoch} {self.loss!r} {self.lr!r} {self.lambda_a!r} "
            f"{self.lambda_blend!r} {self.sep_energy!r}"
        )


LOG_HEADER = "#epoch loss lr lambda lambda_blend sep_energy"


def format_log(records):
    return "".join(line + "\n" for line in [LOG_HEADER] + [r.line() for r in records])


# -- encoder -----------------------------------------------------------------

def init_encoder(frames_dim, hidden, emb_dim, rng, head_init_std=0.1):
    params = {}
    fan_in = frames_dim
    for i, width in enumerate(hidden):
        params[f"A{i}"] = rng.standard_normal((fan_in, width)) / math.sqrt(fan_in)
        params[f"b{i}"] = np.zeros(width)
        fan_in = width
    params["head_A"] = head_init_std * rng.standard_normal((fan_in, emb_dim))
    params["head_b"] = np.zeros(emb_dim)
    return params


def init_weights(emb_dim, n_classes, rng):
    W = rng.standard_normal((emb_dim, n_classes))
    return W / np.linalg.norm(W, axis=0)


def _n_layers(params):
    return sum(1 for k in params if k.startswith("A"))


def _canonical(frames):
    # fixed row order makes pooling bitwise invariant to frame permutation
    frames = np.asarray(frames, dtype=np.float64)
    return frames[np.lexsort(frames.T[::-1])]


def _forward(params, utterances):
    frames = []
    for u in utterances:
        f = u.frames if hasattr(u, "frames") else u
        if len(f) == 0:
            raise ValueError(f"empty utterance {getattr(u, 'utt_id', '')!r}".strip())
        frames.append(_canonical(f))
    lengths = np.array([len(f) for f in frames])
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    h = np.concatenate(frames, axis=0)
    acts = [h]
    for i in range(_n_layers(params)):
        h = np.tanh(h @ params[f"A{i}"] + params[f"b{i}"])
        acts.append(h)
    pooled = np.add.reduceat(h, offsets, axis=0) / lengths[:, None]
    emb = pooled @ params["head_A"] + params["head_b"]
    return emb, (acts, pooled, lengths)


def _backward(params, cache, g_emb):
    acts, pooled, lengths = cache
    grads = {
        "head_A": pooled.T @ g_emb,
        "head_b": g_emb.sum(axis=0),
    }
    g_h = np.repeat((g_emb @ params["head_A"].T) / lengths[:, None], lengths, axis=0)
    for i in reversed(range(_n_layers(params))):
        h = acts[i + 1]
        g_a = g_h * (1.0 - h * h)
        grads[f"A{i}"] = acts[i].T @ g_a
        grads[f"b{i}"] = g_a.sum(axis=0)
        if i:
            g_h = g_a @ params[f"A{i}"].T
    return grads


def encode(utterance, params):
    """Embedding of one utterance (object with ``frames``, or a frame array)."""
    emb, _ = _forward(params, [utterance])
    return emb[0]


def encode_batch(utterances, params):
    return _forward(params, utterances)[0]


def extract_embeddings(dataset, params, emb_dim=None):
    if emb_dim is None:
        emb_dim = params["head_b"].shape[0]
    ids = [u.utt_id for u in dataset.utterances]
    vecs = [encode(u, params) for u in dataset.utterances]
    return EmbeddingSet(ids, np.array(vecs).reshape(len(ids), emb_dim))


# -- sampling and optimization -------------------------------------------------

def balanced_batches(dataset, P, K, seed):
    """One epoch of P-speaker x K-utterance batches (lists of utterance indices).

    Utterances are shuffled per speaker and cut into K-chunks; each batch
    takes one chunk from P distinct speakers, preferring speakers with the
    most chunks left. Leftover chunks that cannot fill a batch are dropped.
    """
    groups = dataset.by_speaker()
    if P > len(groups):
        raise ValueError(f"P={P} exceeds the {len(groups)} speakers available")
    rng = np.random.default_rng(seed)
    chunks = []
    for members in groups.values():
        perm = rng.permutation(members)
        chunks.append([perm[i:i + K].tolist() for i in range(0, len(perm) - K + 1, K)])
    if sum(1 for c in chunks if c) < P:
        raise ValueError(f"fewer than P={P} speakers have K={K} utterances")

    batches = []
    while True:
        live = np.flatnonzero([len(c) > 0 for c in chunks])
        if live.size < P:
            break
        live = rng.permutation(live)
        left = np.array([len(chunks[s]) for s in live])
        chosen = live[np.argsort(-left, kind="stable")[:P]]
        batches.append([i for s in chosen for i in chunks[s].pop()])
    return batches


def sgd_step(params, grads, lr, momentum, velocity):
    """Momentum SGD: ``v = momentum*v + g; p = p - lr*v``. Returns new dicts."""
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        v = momentum * velocity[name] + g if name in velocity else g.copy()
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


def lr_schedule(epoch, cfg):
    """Step decay by 0.1 at each milestone, floored at ``lr_final``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for m in cfg.resolved_milestones() if epoch >= m)
    lr = cfg.lr_init * 0.1 ** passed
    if lr <= cfg.lr_final or math.isclose(lr, cfg.lr_final, rel_tol=1e-9):
        return cfg.lr_final
    return lr


# -- training ------------------------------------------------------------------

def loss_and_grads(params, W, utterances, y, cfg, state):
    """Total loss for one batch and gradients for encoder params and ``W``."""
    X, cache = _forward(params, utterances)
    m = cfg.margin
    if cfg.loss == "softmax":
        la = softmax_ce(X, y, W)
    elif m.variant == "asoftmax":
        la = angular_loss(X, y, W, m, lambda_a=state.lambda_a)
    elif m.variant in ("am", "aam"):
        la = blended_loss(X, y, W, m, state.lambda_blend)
    else:
        la = modified_softmax(X, y, W)
    if cfg.lambda_inter > 0:
        la = combined_loss(la, inter_loss(W), RegConfig(cfg.lambda_inter))
    grads = _backward(params, cache, la.grad_X)
    grads["W"] = la.grad_W
    return la.value, grads


@dataclass
class TrainResult:
    params: dict
    W: np.ndarray
    log: list[EpochRecord]
    classes: list[str]


def init_model(dataset, cfg):
    rng = np.random.default_rng(cfg.seed)
    params = init_encoder(dataset.frames_dim, cfg.hidden, cfg.emb_dim, rng, cfg.head_init_std)
    W = init_weights(cfg.emb_dim, len(dataset.speakers()), rng)
    return params, W


def train(dataset, cfg):
    classes = dataset.speakers()
    if len(classes) < 2:
        raise ValueError("training needs at least 2 speakers")
    label_of = {s: i for i, s in enumerate(classes)}
    params, W = init_model(dataset, cfg)
    records = []
    if cfg.epochs == 0:
        return TrainResult(params, W, records, classes)

    state_p = dict(params, W=W)
    velocity = {}
    step = 0
    steps_per_epoch = None
    for epoch in range(cfg.epochs):
        batches = balanced_batches(dataset, cfg.P, cfg.K, seed=(cfg.seed, epoch + 1))
        if steps_per_epoch is None:
            steps_per_epoch = len(batches)
        lr = lr_schedule(epoch, cfg)
        total = 0.0
        for idx in batches:
            utts = [dataset.utterances[i] for i in idx]
            y = np.array([label_of[u.speaker_id] for u in utts])
            state = anneal_schedule(step, cfg.anneal, steps_per_epoch)
            enc = {k: v for k, v in state_p.items() if k != "W"}
            # overflow shows up as a non-finite loss, handled below
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = loss_and_grads(enc, state_p["W"], utts, y, cfg, state)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}", records)
            try:
                state_p, velocity = sgd_step(state_p, grads, lr, cfg.momentum, velocity)
            except FloatingPointError as e:
                raise TrainingDiverged(f"{e} at epoch {epoch}, step {step}", records) from None
            total += value
            step += 1
        rec = EpochRecord(
            epoch,
            total / max(len(batches), 1),
            lr,
            state.lambda_a,
            state.lambda_blend,
            sep_energy(state_p["W"]),
        )
        records.append(rec)
        log.debug("epoch %d loss %.4f lr %g sep %.4f", epoch, rec.loss, lr, rec.sep_energy)

    W = state_p.pop("W")
    return TrainResult(state_p, W, records, classes)
