"""Small feed-forward networks over embedding vectors, trained by hand-rolled
backprop with seeded mini-batch SGD.

Two heads share the same machinery: a softmax classifier used for top-mu
pseudo-label prediction, and a twin scorer that encodes two inputs with
shared weights, merges them by element-wise absolute difference, and maps
the merge through a linear layer and a sigmoid to a similarity score in
(0, 1). The absolute-difference merge makes the score exactly symmetric in
its two arguments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingSet

HEAD_SOFTMAX = "softmax"
HEAD_SIGMOID = "sigmoid"

_PAIR_BATCH = 32


@dataclass
class ClassifierConfig:
    hidden_dims: tuple = (64,)
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    seed: int = 0


@dataclass
class SiameseConfig:
    hidden_dims: tuple = (64,)
    epochs: int = 30
    pairs_per_epoch: int = 2048
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass
class TopMuPrediction:
    candidates: list  # (pseudo_label, probability), descending probability


class FeedForwardNet:
    """ReLU-hidden fully-connected net with a softmax or sigmoid head.

    For the sigmoid head all layers but the last form the shared encoder and
    the final (dims -> 1) layer scores the absolute difference of the two
    encodings.
    """

    def __init__(self, layer_dims, head: str, seed, classes=None):
        if head not in (HEAD_SOFTMAX, HEAD_SIGMOID):
            raise ValueError(f"unknown head {head!r}")
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        self.layer_dims = [int(v) for v in layer_dims]
        self.head = head
        self.classes = list(classes) if classes is not None else None
        self.seed = seed
        self.loss_trace: list[float] = []
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for din, dout in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.weights.append(rng.normal(0.0, np.sqrt(2.0 / din), size=(din, dout)))
            self.biases.append(np.zeros(dout))

    # -- shared plumbing ---------------------------------------------------

    def params(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def _hidden_forward(self, x: np.ndarray):
        """Activations through every layer but the last; returns the list of
        post-ReLU activations including the input."""
        acts = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        return acts

    # -- classifier head ---------------------------------------------------

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = self._hidden_forward(x)[-1]
        logits = h @ self.weights[-1] + self.biases[-1]
        logits -= logits.max(axis=1, keepdims=True)
        ex = np.exp(logits)
        return ex / ex.sum(axis=1, keepdims=True)

    # -- twin head ----------------------------------------------------------

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._hidden_forward(x)[-1]

    def pair_scores(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        merged = np.abs(self.encode(a) - self.encode(b))
        logits = (merged @ self.weights[-1] + self.biases[-1]).ravel()
        return _sigmoid(logits)

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        """JSON header line plus a little-endian float32 parameter block."""
        header = {
            "layer_dims": self.layer_dims,
            "head": self.head,
            "seed": self.seed,
            "classes": self.classes,
        }
        with open(path, "wb") as fh:
            raw = (json.dumps(header) + "\n").encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            for p in self.params():
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FeedForwardNet":
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            net = cls(header["layer_dims"], header["head"], header["seed"], header["classes"])
            for p in net.params():
                raw = fh.read(4 * p.size)
                p[...] = np.frombuffer(raw, dtype="<f4").reshape(p.shape)
        return net


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# loss + gradients (the same code paths training and the gradient checks use)
# ---------------------------------------------------------------------------


def classifier_loss_and_grads(net: FeedForwardNet, x: np.ndarray, y_idx: np.ndarray):
    """Mean cross-entropy and gradients for a batch of class indices."""
    n = x.shape[0]
    acts = net._hidden_forward(x)
    logits = acts[-1] @ net.weights[-1] + net.biases[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(n), y_idx].mean())

    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), y_idx] -= 1.0
    d_logits /= n
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    grads_w[-1] = acts[-1].T @ d_logits
    grads_b[-1] = d_logits.sum(axis=0)
    delta = d_logits @ net.weights[-1].T
    for layer in range(len(net.weights) - 2, -1, -1):
        delta = delta * (acts[layer + 1] > 0.0)
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = delta @ net.weights[layer].T
    return loss, grads_w, grads_b


def siamese_loss_and_grads(net: FeedForwardNet, a: np.ndarray, b: np.ndarray, t: np.ndarray):
    """Mean binary cross-entropy on pair targets t (1 same, 0 different)."""
    n = a.shape[0]
    acts_a = net._hidden_forward(a)
    acts_b = net._hidden_forward(b)
    diff = acts_a[-1] - acts_b[-1]
    merged = np.abs(diff)
    logits = (merged @ net.weights[-1] + net.biases[-1]).ravel()
    # stable BCE-with-logits: max(x,0) - x t + log(1 + exp(-|x|))
    loss = float(
        (np.maximum(logits, 0.0) - logits * t + np.log1p(np.exp(-np.abs(logits)))).mean()
    )

    d_logits = (_sigmoid(logits) - t) / n
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    grads_w[-1] = merged.T @ d_logits[:, None]
    grads_b[-1] = np.array([d_logits.sum()])
    d_merged = d_logits[:, None] @ net.weights[-1].T
    delta_a = d_merged * np.sign(diff)
    delta_b = -delta_a
    for layer in range(len(net.weights) - 2, -1, -1):
        delta_a = delta_a * (acts_a[layer + 1] > 0.0)
        delta_b = delta_b * (acts_b[layer + 1] > 0.0)
        grads_w[layer] = acts_a[layer].T @ delta_a + acts_b[layer].T @ delta_b
        grads_b[layer] = delta_a.sum(axis=0) + delta_b.sum(axis=0)
        if layer:
            delta_a = delta_a @ net.weights[layer].T
            delta_b = delta_b @ net.weights[layer].T
    return loss, grads_w, grads_b


def _sgd_step(net: FeedForwardNet, grads_w, grads_b, lr: float) -> None:
    for w, b, gw, gb in zip(net.weights, net.biases, grads_w, grads_b):
        w -= lr * gw
        b -= lr * gb


def _child_seeds(seed) -> tuple[int, int]:
    """Two independent checkpoint-serializable integer seeds."""
    state = np.random.SeedSequence(seed).generate_state(2)
    return int(state[0]), int(state[1])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_classifier(train: EmbeddingSet, config: ClassifierConfig | None = None) -> FeedForwardNet:
    """Cross-entropy training over the pseudo-labeled (or labeled) set."""
    config = config or ClassifierConfig()
    if train.labels is None:
        raise ValueError("training set has no labels")
    classes = sorted(set(train.labels))
    if len(classes) < 2:
        raise ValueError("training set has a single class")
    class_idx = {c: i for i, c in enumerate(classes)}
    x = np.asarray(train.vectors, dtype=np.float64)
    y = np.array([class_idx[l] for l in train.labels], dtype=np.int64)

    init_seed, shuffle_seed = _child_seeds(config.seed)
    net = FeedForwardNet(
        [train.d, *config.hidden_dims, len(classes)], HEAD_SOFTMAX, init_seed, classes=classes
    )
    rng = np.random.default_rng(shuffle_seed)
    for epoch in range(config.epochs):
        perm = rng.permutation(train.n)
        losses = []
        for start in range(0, train.n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            loss, gw, gb = classifier_loss_and_grads(net, x[batch], y[batch])
            _sgd_step(net, gw, gb, config.learning_rate)
            losses.append(loss)
        net.loss_trace.append(float(np.mean(losses)))
        if not net.all_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch + 1}")
    return net


def train_siamese(train: EmbeddingSet, config: SiameseConfig | None = None) -> FeedForwardNet:
    """Train the twin scorer on balanced same/different pseudo-label pairs."""
    config = config or SiameseConfig()
    if train.labels is None:
        raise ValueError("training set has no labels")
    classes = sorted(set(train.labels))
    if len(classes) < 2:
        raise ValueError("training set has a single class")
    members = {c: np.flatnonzero(np.asarray(train.labels) == c) for c in classes}
    rich = [c for c in classes if members[c].size >= 2]
    if not rich:
        raise ValueError("no class has 2 or more samples; cannot form same-class pairs")
    x = np.asarray(train.vectors, dtype=np.float64)

    init_seed, pair_seed = _child_seeds(config.seed)
    net = FeedForwardNet([train.d, *config.hidden_dims, 1], HEAD_SIGMOID, init_seed)
    rng = np.random.default_rng(pair_seed)
    n_same = config.pairs_per_epoch // 2
    n_diff = config.pairs_per_epoch - n_same
    for epoch in range(config.epochs):
        ia = np.empty(config.pairs_per_epoch, dtype=np.int64)
        ib = np.empty(config.pairs_per_epoch, dtype=np.int64)
        t = np.zeros(config.pairs_per_epoch)
        t[:n_same] = 1.0
        for p in range(n_same):
            c = rich[rng.integers(len(rich))]
            ia[p], ib[p] = rng.choice(members[c], size=2, replace=False)
        for p in range(n_same, n_same + n_diff):
            ca, cb = rng.choice(len(classes), size=2, replace=False)
            ia[p] = rng.choice(members[classes[ca]])
            ib[p] = rng.choice(members[classes[cb]])
        order = rng.permutation(config.pairs_per_epoch)
        ia, ib, t = ia[order], ib[order], t[order]
        losses = []
        for start in range(0, config.pairs_per_epoch, _PAIR_BATCH):
            sl = slice(start, start + _PAIR_BATCH)
            loss, gw, gb = siamese_loss_and_grads(net, x[ia[sl]], x[ib[sl]], t[sl])
            _sgd_step(net, gw, gb, config.learning_rate)
            losses.append(loss)
        net.loss_trace.append(float(np.mean(losses)))
        if not net.all_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch + 1}")
    return net


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def predict_top_mu(net: FeedForwardNet, x: np.ndarray, mu: int) -> TopMuPrediction:
    """The mu most probable classes, ties breaking toward the lower index."""
    if net.head != HEAD_SOFTMAX or net.classes is None:
        raise ValueError("top-mu prediction needs a trained classifier")
    if not 1 <= mu <= len(net.classes):
        raise ValueError(f"mu must be in [1, {len(net.classes)}], got {mu}")
    probs = net.predict_proba(x)[0]
    order = np.argsort(-probs, kind="stable")[:mu]
    return TopMuPrediction([(net.classes[i], float(probs[i])) for i in order])


def siamese_class_score(net: FeedForwardNet, x: np.ndarray, members: np.ndarray) -> float:
    """Mean pairwise twin score between `x` and every member of a class."""
    members = np.atleast_2d(np.asarray(members, dtype=np.float64))
    if members.shape[0] == 0:
        raise ValueError("empty member list")
    tiled = np.broadcast_to(np.asarray(x, dtype=np.float64), members.shape)
    return float(net.pair_scores(tiled, members).mean())
