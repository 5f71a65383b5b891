"""Feature synthesis for unseen classes and the test-time classifiers: a
linear softmax classifier and the cascade of a seen/unseen gate with two
expert classifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ndcore as nd
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AttributeTable, batch_iter
from .ndcore import AdamState, Tape, adam_step


class EmptyInputError(ValueError):
    pass


class UnknownLabelError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    n_per_class: int = 200
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    gate_threshold: float = 0.5
    seen_synthetic: bool = False  # also train the seen expert on G(z, a_seen)

    def to_dict(self) -> dict:
        return asdict(self)


def synthesize_unseen(G, attributes: AttributeTable, n_per_class: int, rng, dtype=nd.DEFAULT_DTYPE):
    """``n_per_class`` features G(z, a_c) per unseen class c, fresh z per row."""
    return synthesize(G, attributes, attributes.unseen_classes, n_per_class, rng, dtype)


def synthesize(G, attributes: AttributeTable, classes, n_per_class: int, rng, dtype=nd.DEFAULT_DTYPE):
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    labels = np.repeat(np.asarray(classes, dtype=np.int64), n_per_class)
    a = attributes.lookup(labels).astype(dtype)
    z = nd.sample_gaussian(len(labels), attributes.k, rng, dtype=dtype)
    return G(z, a).value, labels


@dataclass
class SoftmaxClassifier:
    W: np.ndarray  # (d_in, n_classes)
    b: np.ndarray  # (1, n_classes)
    classes: tuple[int, ...]  # ascending, column j predicts classes[j]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise nd.ShapeError(f"input shape {x.shape}, expected (*, {self.W.shape[0]})")
        return x @ self.W + self.b

    def predict_proba(self, x) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Class ids and probability rows; ties go to the lowest class id."""
        p = self.predict_proba(x)
        # argmax returns the first maximum and classes are ascending
        return np.asarray(self.classes)[np.argmax(p, axis=1)], p

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            f"{prefix}W": self.W,
            f"{prefix}b": self.b,
            f"{prefix}classes": np.asarray(self.classes, dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> SoftmaxClassifier:
        return cls(arrays[f"{prefix}W"], arrays[f"{prefix}b"], tuple(int(c) for c in arrays[f"{prefix}classes"]))


def cross_entropy(W, b, x, targets) -> nd.Tensor:
    """Mean negative log-likelihood; ``targets`` are column indices."""
    logp = nd.log_softmax(nd.as_tensor(x) @ W + b)
    onehot = np.zeros(logp.shape, dtype=logp.dtype)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -nd.mean(nd.sum_(logp * onehot, axis=1))


def train_softmax(
    features,
    labels,
    rng,
    classes=None,
    lr: float = 1e-3,
    epochs: int = 100,
    batch_size: int | None = 64,
) -> SoftmaxClassifier:
    """Multinomial logistic regression fitted with Adam from zero weights."""
    x = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise EmptyInputError("no training features")
    if len(labels) != len(x):
        raise nd.ShapeError("features and labels differ in length")
    classes = tuple(sorted(set(int(c) for c in (np.unique(labels) if classes is None else classes))))
    col = {c: j for j, c in enumerate(classes)}
    unknown = set(np.unique(labels).tolist()) - set(col)
    if unknown:
        raise UnknownLabelError(f"labels not in the class list: {sorted(unknown)}")
    targets = np.array([col[int(y)] for y in labels])
    params = {
        "W": np.zeros((x.shape[1], len(classes)), dtype=x.dtype),
        "b": np.zeros((1, len(classes)), dtype=x.dtype),
    }
    state = AdamState()
    bs = len(x) if batch_size is None else batch_size
    for _ in range(epochs):
        for idx in batch_iter(len(x), bs, rng):
            tape = Tape()
            W = tape.watch(params["W"])
            b = tape.watch(params["b"])
            loss = cross_entropy(W, b, x[idx], targets[idx])
            gW, gb = nd.grad(tape, loss, [W, b])
            adam_step(params, {"W": gW.value, "b": gb.value}, state, lr)
    return SoftmaxClassifier(params["W"], params["b"], classes)


@dataclass
class Gate:
    """Seen (0) vs unseen (1) logistic classifier."""

    clf: SoftmaxClassifier

    def prob_unseen(self, x) -> np.ndarray:
        return self.clf.predict_proba(x)[:, 1]


@dataclass
class ConstantGate:
    p: float

    def prob_unseen(self, x) -> np.ndarray:
        return np.full(len(x), float(self.p))


def train_gate(seen_features, unseen_features, rng, lr: float = 1e-3, epochs: int = 100, batch_size: int | None = 64) -> Gate:
    """Binary classifier with the real seen features as class 0 and the real
    unlabeled unseen features as class 1."""
    xs = np.asarray(seen_features)
    xu = np.asarray(unseen_features)
    if len(xs) == 0 or len(xu) == 0:
        raise EmptyInputError("the gate needs both seen and unseen features")
    x = np.concatenate([xs, xu])
    y = np.concatenate([np.zeros(len(xs), np.int64), np.ones(len(xu), np.int64)])
    return Gate(train_softmax(x, y, rng, classes=(0, 1), lr=lr, epochs=epochs, batch_size=batch_size))


@dataclass
class CascadeClassifier:
    gate: Gate | ConstantGate
    seen_clf: SoftmaxClassifier
    unseen_clf: SoftmaxClassifier
    gate_threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.gate_threshold < 1:
            raise ValueError("gate_threshold must lie in (0, 1)")
        if set(self.seen_clf.classes) & set(self.unseen_clf.classes):
            raise ValueError("expert class lists overlap")

    def save(self, path, meta: dict | None = None) -> None:
        arrays = {**self.seen_clf.arrays("seen/"), **self.unseen_clf.arrays("unseen/")}
        info = {"gate_threshold": self.gate_threshold, **(meta or {})}
        if isinstance(self.gate, Gate):
            arrays.update(self.gate.clf.arrays("gate/"))
        else:
            info["constant_gate"] = self.gate.p
        save_checkpoint(path, "cascade", arrays, info)

    @classmethod
    def load(cls, path) -> CascadeClassifier:
        _, arrays, meta = load_checkpoint(path, "cascade")
        if "constant_gate" in meta:
            gate = ConstantGate(meta["constant_gate"])
        else:
            gate = Gate(SoftmaxClassifier.from_arrays(arrays, "gate/"))
        return cls(
            gate,
            SoftmaxClassifier.from_arrays(arrays, "seen/"),
            SoftmaxClassifier.from_arrays(arrays, "unseen/"),
            meta["gate_threshold"],
        )


def cascaded_predict(cascade: CascadeClassifier, x) -> np.ndarray:
    """Route rows with gate >= threshold to the unseen expert, the rest to
    the seen expert."""
    x = np.asarray(x)
    to_unseen = cascade.gate.prob_unseen(x) >= cascade.gate_threshold
    out = np.empty(len(x), dtype=np.int64)
    if to_unseen.any():
        out[to_unseen] = cascade.unseen_clf.predict(x[to_unseen])[0]
    if (~to_unseen).any():
        out[~to_unseen] = cascade.seen_clf.predict(x[~to_unseen])[0]
    return out
