"""Glue: the full two-stage run, the stage-1-only baseline, and classifier
fitting plus evaluation on a trained generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classify import (
    CascadeClassifier,
    ClassifierConfig,
    SoftmaxClassifier,
    synthesize,
    synthesize_unseen,
    train_gate,
    train_softmax,
)
from .data import SplitDataset
from .evaluate import EvalReport, evaluate_czsl, evaluate_gzsl
from .models import ModelSet
from .ndcore import derive_rng
from .training import TrainConfig, TrainHistory, train_stage1, train_stage2


@dataclass
class TwoStageResult:
    stage1: ModelSet
    history1: TrainHistory
    stage2: ModelSet
    history2: TrainHistory


def train_two_stage(dataset: SplitDataset, cfg: TrainConfig) -> TwoStageResult:
    m1, h1 = train_stage1(dataset, cfg)
    m2, h2 = train_stage2(dataset, m1, cfg)
    return TwoStageResult(m1, h1, m2, h2)


def train_stage1_only(dataset: SplitDataset, cfg: TrainConfig) -> tuple[ModelSet, TrainHistory]:
    """Baseline: stage 2 replaced by continued unconditional training, same
    total epoch count."""
    return train_stage1(dataset, cfg, epochs=cfg.epochs_stage1 + cfg.epochs_stage2)


def fit_classifiers(
    models: ModelSet, dataset: SplitDataset, ccfg: ClassifierConfig, seed: int
) -> tuple[SoftmaxClassifier, CascadeClassifier]:
    table = dataset.attributes
    dtype = models.G.params["W1"].dtype
    x_syn, y_syn = synthesize_unseen(models.G, table, ccfg.n_per_class, derive_rng(seed, "synthesize"), dtype)
    x_syn = x_syn.astype(np.float64)
    unseen_clf = train_softmax(
        x_syn, y_syn, derive_rng(seed, "unseen-clf"), table.unseen_classes, ccfg.lr, ccfg.epochs, ccfg.batch_size
    )
    xs, ys = dataset.x_seen_train, dataset.y_seen_train
    if ccfg.seen_synthetic:
        x_ss, y_ss = synthesize(models.G, table, table.seen_classes, ccfg.n_per_class, derive_rng(seed, "synthesize-seen"), dtype)
        xs = np.concatenate([xs, x_ss.astype(np.float64)])
        ys = np.concatenate([ys, y_ss])
    seen_clf = train_softmax(xs, ys, derive_rng(seed, "seen-clf"), table.seen_classes, ccfg.lr, ccfg.epochs, ccfg.batch_size)
    gate = train_gate(
        dataset.x_seen_train, dataset.x_unseen, derive_rng(seed, "gate"), ccfg.lr, ccfg.epochs, ccfg.batch_size
    )
    return unseen_clf, CascadeClassifier(gate, seen_clf, unseen_clf, ccfg.gate_threshold)


def evaluate_models(
    models: ModelSet, dataset: SplitDataset, ccfg: ClassifierConfig, seed: int, config_hash: str = ""
) -> tuple[EvalReport, EvalReport, CascadeClassifier]:
    unseen_clf, cascade = fit_classifiers(models, dataset, ccfg, seed)
    czsl = evaluate_czsl(unseen_clf, dataset, config_hash, seed)
    gzsl = evaluate_gzsl(cascade, dataset, config_hash, seed)
    return czsl, gzsl, cascade


def pseudo_attribute_fidelity(models: ModelSet, dataset: SplitDataset, clamp: bool = True, seed: int = 0) -> tuple[float, float]:
    """Mean L1 distance from Dec(x_u) to the true unseen attribute, and the
    same distance under a uniformly random unseen attribute assignment."""
    from .training import pseudo_attributes

    table = dataset.attributes
    pred = pseudo_attributes(models.Dec, dataset.x_unseen.astype(models.Dec.params["W1"].dtype), clamp)
    true = table.lookup(dataset.unseen_test_labels)
    decoded = float(np.abs(pred - true).sum(axis=1).mean())
    # expectation over a uniform draw from the unseen attribute rows
    unseen = table.unseen_matrix
    rand = float(np.mean([np.abs(unseen[None, j] - true).sum(axis=1).mean() for j in range(len(unseen))]))
    return decoded, rand
