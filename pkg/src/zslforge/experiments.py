"""Multi-seed experiments on the synthetic benchmark.

One stage-1 run per seed, long enough for the stage-1-only baseline, supplies
every stage-1 snapshot the experiments need: a run of E epochs is a prefix of
any longer run with the same seed, so a snapshot at epoch E equals an
independent E-epoch run bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .classify import ClassifierConfig
from .data import SplitDataset
from .models import ModelSet
from .pipeline import evaluate_models, pseudo_attribute_fidelity
from .training import TrainConfig, TrainHistory, train_stage1, train_stage2


@dataclass
class SeedResult:
    seed: int
    two_stage: float  # CZSL accuracy, percent
    stage1_only: float
    fidelity: float  # mean L1 of Dec(x_u) to the true unseen attribute
    fidelity_random: float  # same under a random unseen attribute
    l_r_first: float
    l_r_last: float
    ablation: dict[int, float] = field(default_factory=dict)  # stage-1 epochs -> accuracy
    seconds: float = 0.0
    stage1_seconds: float = 0.0  # the long stage-1 run plus the baseline evaluation
    stage2_seconds: dict[int, float] = field(default_factory=dict)  # per snapshot, with evaluation
    models: ModelSet | None = field(default=None, repr=False)  # two-stage result
    baseline_models: ModelSet | None = field(default=None, repr=False)

    @property
    def gain(self) -> float:
        return self.two_stage - self.stage1_only

    @property
    def fidelity_ratio(self) -> float:
        return self.fidelity / self.fidelity_random


def stage1_snapshots(
    dataset: SplitDataset, cfg: TrainConfig, epochs: int, keep
) -> tuple[dict[int, ModelSet], ModelSet, TrainHistory]:
    """Train stage 1 for ``epochs`` and copy the models at every epoch in
    ``keep`` (0 means the initialized models)."""
    snaps = {}
    keep = set(keep)
    if 0 in keep:
        snaps[0] = train_stage1(dataset, cfg, epochs=0)[0]

    def on_epoch(epoch, models):
        if epoch in keep:
            snaps[epoch] = models.copy()

    final, hist = train_stage1(dataset, cfg, epochs=epochs, on_epoch=on_epoch)
    return snaps, final, hist


def run_seed(
    dataset: SplitDataset,
    cfg: TrainConfig,
    ccfg: ClassifierConfig,
    grid=(),
) -> SeedResult:
    """Two-stage pipeline against the stage-1-only baseline on one seed, plus
    the stage-1 epoch ablation over ``grid`` when given."""
    t0 = time.perf_counter()
    e1, e2 = cfg.epochs_stage1, cfg.epochs_stage2
    keep = set(grid) | {e1}
    snaps, baseline, hist = stage1_snapshots(dataset, cfg, e1 + e2, keep)

    def czsl(models):
        return evaluate_models(models, dataset, ccfg, cfg.seed)[0].U

    stage1_only = czsl(baseline)
    t1 = time.perf_counter() - t0
    stage2, trained, timing = {}, {}, {}
    for e in sorted(keep):
        t = time.perf_counter()
        trained[e] = train_stage2(dataset, snaps[e], cfg)[0]
        stage2[e] = czsl(trained[e])
        timing[e] = time.perf_counter() - t
    fid, fid_rand = pseudo_attribute_fidelity(snaps[e1], dataset)
    h1 = hist.records[:e1]
    return SeedResult(
        seed=cfg.seed,
        two_stage=stage2[e1],
        stage1_only=stage1_only,
        fidelity=fid,
        fidelity_random=fid_rand,
        l_r_first=h1[0].L_R if h1 else float("nan"),
        l_r_last=h1[-1].L_R if h1 else float("nan"),
        ablation={e: stage2[e] for e in grid},
        seconds=time.perf_counter() - t0,
        stage1_seconds=t1,
        stage2_seconds=timing,
        models=trained[e1],
        baseline_models=baseline,
    )


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties; 0 when either side is
    constant."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=np.float64)
        for u in np.unique(v):
            tie = v == u
            r[tie] = r[tie].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    if rx.std() == 0 or ry.std() == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])
