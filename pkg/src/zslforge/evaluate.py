"""Per-class top-1 accuracy, seen/unseen accuracies and their harmonic mean."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classify import CascadeClassifier, SoftmaxClassifier, cascaded_predict
from .data import SplitDataset


class MissingLabelsError(ValueError):
    pass


def per_class_top1(predictions, true_labels, class_list) -> float:
    """Unweighted mean over classes of the accuracy among each class's true
    instances. Classes without instances are left out of the mean."""
    return _per_class(predictions, true_labels, class_list)[0]


def _per_class(predictions, true_labels, class_list) -> tuple[float, dict[int, float]]:
    pred = np.asarray(predictions)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    known = set(int(c) for c in class_list)
    unknown = set(np.unique(true).tolist()) - known
    if unknown:
        raise ValueError(f"true labels outside the class list: {sorted(unknown)}")
    exact = {}
    for c in sorted(known):
        mask = true == c
        n = int(mask.sum())
        if n:
            exact[c] = Fraction(int((pred[mask] == c).sum()), n)
    accs = {c: float(v) for c, v in exact.items()}
    if not exact:
        return 0.0, accs
    # exact rational mean, rounded once, so the result is independent of
    # summation order
    return float(sum(exact.values()) / len(exact)), accs


def harmonic_mean(U: float, S: float) -> float:
    if U < 0 or S < 0:
        raise ValueError(f"accuracies must be non-negative, got U={U}, S={S}")
    if U + S == 0:
        return 0.0
    # lo / (lo + hi) <= 1, so the product cannot underflow the way U * S
    # does; sorting keeps the result symmetric bit for bit
    lo, hi = sorted((float(U), float(S)))
    return 2.0 * hi * (lo / (lo + hi))


@dataclass
class EvalReport:
    protocol: str  # "czsl" or "gzsl"
    U: float  # percent; for czsl the unseen-only accuracy
    S: float | None = None
    H: float | None = None
    per_class: dict[int, float] = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_json(self) -> str:
        body = {
            "protocol": self.protocol,
            "U": self.U,
            "S": self.S,
            "H": self.H,
            "per_class": {str(c): a for c, a in sorted(self.per_class.items())},
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        body = json.loads(text)
        return cls(
            body["protocol"],
            body["U"],
            body["S"],
            body["H"],
            {int(c): a for c, a in body["per_class"].items()},
            body["config_hash"],
            body["seed"],
        )

    def render(self) -> str:
        if self.protocol == "czsl":
            return f"CZSL  acc = {self.U:.1f}"
        return f"GZSL  U = {self.U:.1f}  S = {self.S:.1f}  H = {self.H:.1f}"


def evaluate_czsl(unseen_clf: SoftmaxClassifier, dataset: SplitDataset, config_hash: str = "", seed: int = 0) -> EvalReport:
    if dataset.unseen_test_labels is None:
        raise MissingLabelsError("dataset has no unseen test labels")
    pred = unseen_clf.predict(dataset.x_unseen)[0]
    acc, per = _per_class(pred, dataset.unseen_test_labels, dataset.attributes.unseen_classes)
    return EvalReport("czsl", 100.0 * acc, per_class=per, config_hash=config_hash, seed=seed)


def evaluate_gzsl(cascade: CascadeClassifier, dataset: SplitDataset, config_hash: str = "", seed: int = 0) -> EvalReport:
    if dataset.unseen_test_labels is None:
        raise MissingLabelsError("dataset has no unseen test labels")
    if len(dataset.x_seen_test) == 0:
        raise MissingLabelsError("dataset has no seen test split")
    table = dataset.attributes
    u_acc, u_per = _per_class(cascaded_predict(cascade, dataset.x_unseen), dataset.unseen_test_labels, table.unseen_classes)
    s_acc, s_per = _per_class(cascaded_predict(cascade, dataset.x_seen_test), dataset.y_seen_test, table.seen_classes)
    U, S = 100.0 * u_acc, 100.0 * s_acc
    return EvalReport("gzsl", U, S, harmonic_mean(U, S), {**u_per, **s_per}, config_hash, seed)
