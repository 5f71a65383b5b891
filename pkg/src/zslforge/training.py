"""Adversarial objectives with gradient penalty, the attribute reconstruction
loss, and the two training stages.

Sign convention: critics ascend ``E[D(real)] - E[D(fake)] - lambda * GP``
(they descend its negation); the generator descends
``-E[D_s(fake_s)] - E[D_u(fake_u)] + w * L_R``; the decoder descends
``w * L_R``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import ndcore as nd
from .data import SplitDataset, TrainingView, batch_iter
from .models import ModelSet, _Net, init_models
from .ndcore import AdamState, Tape, Tensor, adam_step, derive_rng

DIVERGENCE_LIMIT = 1e6
# full-scale networks are 4096 wide; desk-scale runs use 256 to stay in minutes
DESK_HIDDEN_DIM = 256
# the desk benchmark has few samples, hence few Adam steps per epoch
DESK_LR = 1e-3


class NumericDivergenceError(RuntimeError):
    pass


class MissingDecoderError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda_gp: float = 5.0
    w: float = 0.1
    w_prime: float = 0.1
    lr: float = 1e-4
    batch_size: int = 64
    critic_iters: int = 5
    epochs_stage1: int = 300
    epochs_stage2: int = 300
    hidden_dim: int = 4096
    seed: int = 0
    pseudo_attr_clamp: bool = True
    dtype: str = "float64"

    def validate(self) -> None:
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.w < 0 or self.w_prime < 0:
            raise ValueError("w and w_prime must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.critic_iters < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValueError("critic_iters, batch_size and hidden_dim must be >= 1")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        """Defaults for the desk-scale synthetic benchmark."""
        return cls(**{"hidden_dim": DESK_HIDDEN_DIM, "lr": DESK_LR, **overrides})


@dataclass
class EpochRecord:
    epoch: int
    L_S: float
    L_U: float
    L_R: float
    gp_s: float
    gp_u: float
    seconds: float


@dataclass
class TrainHistory:
    stage: int
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        u = "L_U" if self.stage == 1 else "L'_U"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"epoch,L_S,{u},L_R,gp_s,gp_u,seconds\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch},{r.L_S:.10g},{r.L_U:.10g},{r.L_R:.10g},{r.gp_s:.10g},{r.gp_u:.10g},{r.seconds:.4f}\n"
                )


class AdvObjective(NamedTuple):
    value: Tensor  # E[D(real)] - E[D(fake)] - lambda * GP
    gp: Tensor  # penalty before lambda scaling


def _check(name: str, t: Tensor) -> float:
    v = float(t.value)
    if not math.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
        raise NumericDivergenceError(f"{name} diverged: {v}")
    return v


def _rows(x) -> int:
    return x.shape[0]


# --------------------------------------------------------------------------
# Losses


def gradient_penalty(D: _Net, real, fake, cond=None, rng=None, *, alpha=None) -> Tensor:
    """Mean over rows of (||grad_xhat D(xhat[, a])||_2 - 1)^2, with
    xhat = alpha * real + (1 - alpha) * fake and one alpha ~ U(0, 1) per row.

    The gradient is taken with respect to the interpolated features only. The
    result is differentiable in D's parameters when D is bound to a tape.
    """
    real = nd.as_tensor(real)
    fake = nd.as_tensor(fake, real)
    if real.shape != fake.shape:
        raise nd.ShapeError(f"real {real.shape} and fake {fake.shape} differ")
    if (cond is not None) != D.conditional:
        from .models import ConditioningMismatchError

        raise ConditioningMismatchError("conditioning rows must be given iff the critic is conditional")
    if alpha is None:
        alpha = nd.sample_uniform01(_rows(real), rng, dtype=real.dtype)
    alpha = nd.as_tensor(np.asarray(alpha).reshape(-1, 1), real)
    xhat = alpha * real + (1.0 - alpha) * fake
    tape = getattr(D, "tape", None) or xhat.tape or Tape()
    if xhat.tape is None:
        xhat = tape.watch(xhat.value, name="xhat")
    score = D(xhat, cond)
    g = nd.input_gradient(tape, score, xhat)
    return nd.mean(nd.square(nd.row_norm(g) - 1.0))


def seen_adv_objective(D_s: _Net, G: _Net, x_s, a_s, lam: float, rng, *, z=None, alpha=None) -> AdvObjective:
    """L_S with fake_s = G(z, a_s), z ~ N(0, 1). Draw order: z, then alpha."""
    x_s = nd.as_tensor(x_s)
    if z is None:
        z = nd.sample_gaussian(_rows(x_s), G.spec.cond_dim, rng, dtype=x_s.dtype)
    fake = G(z, a_s)
    gp = gradient_penalty(D_s, x_s, fake, a_s, rng, alpha=alpha)
    value = nd.mean(D_s(x_s, a_s)) - nd.mean(D_s(fake, a_s)) - lam * gp
    return AdvObjective(value, gp)


def unseen_adv_objective_stage1(D_u: _Net, G: _Net, x_u, a_u, lam: float, rng, *, z=None, alpha=None) -> AdvObjective:
    """L_U: D_u sees features only; fakes are G(z, a_u) for sampled unseen
    attributes ``a_u`` (one row per fake)."""
    x_u = nd.as_tensor(x_u)
    if _rows(a_u) != _rows(x_u):
        raise nd.ShapeError("need one sampled unseen attribute per unseen feature row")
    if z is None:
        z = nd.sample_gaussian(_rows(x_u), G.spec.cond_dim, rng, dtype=x_u.dtype)
    fake = G(z, a_u)
    gp = gradient_penalty(D_u, x_u, fake, None, rng, alpha=alpha)
    value = nd.mean(D_u(x_u)) - nd.mean(D_u(fake)) - lam * gp
    return AdvObjective(value, gp)


def pseudo_attributes(Dec: _Net, x_u, clamp: bool = True) -> np.ndarray:
    """Dec(x_u) as a plain array, detached from any tape."""
    net = getattr(Dec, "mlp", Dec)
    a = net(x_u).value
    return np.clip(a, 0.0, 1.0) if clamp else a


def unseen_adv_objective_stage2(
    D_u: _Net,
    G: _Net,
    Dec: _Net,
    x_u,
    lam: float,
    rng,
    *,
    clamp: bool = True,
    a_tilde=None,
    z=None,
    alpha=None,
) -> AdvObjective:
    """L'_U: D_u conditioned on pseudo-attributes Dec(x_u), which are treated
    as constants. ``a_tilde`` skips recomputing them."""
    if not D_u.conditional:
        raise ValueError("stage-2 objective needs a conditional unseen critic")
    x_u = nd.as_tensor(x_u)
    if a_tilde is None:
        a_tilde = pseudo_attributes(Dec, x_u.value, clamp)
    if z is None:
        z = nd.sample_gaussian(_rows(x_u), G.spec.cond_dim, rng, dtype=x_u.dtype)
    fake = G(z, a_tilde)
    gp = gradient_penalty(D_u, x_u, fake, a_tilde, rng, alpha=alpha)
    value = nd.mean(D_u(x_u, a_tilde)) - nd.mean(D_u(fake, a_tilde)) - lam * gp
    return AdvObjective(value, gp)


def l1_rows(pred: Tensor, target) -> Tensor:
    """Sum of absolute differences over columns, averaged over rows."""
    return nd.mean(nd.sum_(nd.abs_(pred - target), axis=1))


def reconstruction_loss(
    Dec: _Net,
    G: _Net,
    x_s,
    a_s,
    a_u_cond,
    rng=None,
    stage: int = 1,
    *,
    fake_s=None,
    fake_u=None,
) -> Tensor:
    """E|Dec(x_s) - a_s|_1 + E|Dec(fake_s) - a_s|_1 + E|Dec(fake_u) - a_u_cond|_1.

    In stage 1 ``a_u_cond`` are sampled true unseen attributes, in stage 2 the
    pseudo-attributes. Missing fakes are drawn from G (seen first).
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    x_s = nd.as_tensor(x_s)
    if fake_s is None:
        fake_s = G(nd.sample_gaussian(_rows(x_s), G.spec.cond_dim, rng, dtype=x_s.dtype), a_s)
    if fake_u is None:
        fake_u = G(nd.sample_gaussian(_rows(a_u_cond), G.spec.cond_dim, rng, dtype=x_s.dtype), a_u_cond)
    return l1_rows(Dec(x_s), a_s) + l1_rows(Dec(fake_s), a_s) + l1_rows(Dec(fake_u), a_u_cond)


# --------------------------------------------------------------------------
# Optimization


def _grads_by_name(bound, grads) -> dict[str, np.ndarray]:
    return {k: g.value for k, g in zip(bound.leaves, grads)}


def critic_step(models: ModelSet, opt: dict[str, AdamState], x_s, a_s, x_u, u_cond, cfg: TrainConfig, rng):
    """One ascent step of D_s and D_u. ``u_cond`` is the sampled unseen
    attribute batch in stage 1 and the pseudo-attribute batch in stage 2."""
    tape = Tape()
    D_s = models.D_s.bind(tape)
    D_u = models.D_u.bind(tape)
    ls = seen_adv_objective(D_s, models.G, x_s, a_s, cfg.lambda_gp, rng)
    if models.stage == 1:
        lu = unseen_adv_objective_stage1(D_u, models.G, x_u, u_cond, cfg.lambda_gp, rng)
    else:
        lu = unseen_adv_objective_stage2(D_u, models.G, models.Dec, x_u, cfg.lambda_gp, rng, a_tilde=u_cond)
    loss = -(ls.value + lu.value)
    _check("critic loss", loss)
    leaves = D_s.leaf_list() + D_u.leaf_list()
    grads = nd.grad(tape, loss, leaves)
    n = len(D_s.leaves)
    adam_step(models.D_s.params, _grads_by_name(D_s, grads[:n]), opt["D_s"], cfg.lr)
    adam_step(models.D_u.params, _grads_by_name(D_u, grads[n:]), opt["D_u"], cfg.lr)
    return ls, lu


def generator_step(models: ModelSet, opt: dict[str, AdamState], x_s, a_s, u_cond, w: float, cfg: TrainConfig, rng):
    """One descent step of G on -E[D_s(fake_s)] - E[D_u(fake_u)] + w * L_R and
    of Dec on w * L_R."""
    tape = Tape()
    G = models.G.bind(tape)
    Dec = models.Dec.bind(tape)
    dtype = x_s.dtype
    fake_s = G(nd.sample_gaussian(_rows(x_s), models.k, rng, dtype=dtype), a_s)
    fake_u = G(nd.sample_gaussian(_rows(u_cond), models.k, rng, dtype=dtype), u_cond)
    adv = -nd.mean(models.D_s(fake_s, a_s))
    if models.stage == 1:
        adv = adv - nd.mean(models.D_u(fake_u))
    else:
        adv = adv - nd.mean(models.D_u(fake_u, u_cond))
    l_r = reconstruction_loss(Dec, G, x_s, a_s, u_cond, stage=models.stage, fake_s=fake_s, fake_u=fake_u)
    loss = adv + w * l_r
    _check("generator loss", loss)
    _check("reconstruction loss", l_r)
    leaves = G.leaf_list() + Dec.leaf_list()
    grads = nd.grad(tape, loss, leaves)
    n = len(G.leaves)
    adam_step(models.G.params, _grads_by_name(G, grads[:n]), opt["G"], cfg.lr)
    adam_step(models.Dec.params, _grads_by_name(Dec, grads[n:]), opt["Dec"], cfg.lr)
    return float(l_r.value)


def _fresh_opt() -> dict[str, AdamState]:
    return {n: AdamState() for n in ("G", "D_s", "D_u", "Dec")}


def _run_epochs(
    models: ModelSet, view: TrainingView, cfg: TrainConfig, epochs: int, rng, history: TrainHistory, on_epoch=None
):
    dtype = np.dtype(cfg.dtype)
    x_seen = view.x_seen.astype(dtype, copy=False)
    a_seen = view.a_seen.astype(dtype, copy=False)
    x_unseen = view.x_unseen.astype(dtype, copy=False)
    a_unseen = view.unseen_attributes.astype(dtype, copy=False)
    n_u = len(x_unseen)
    w = cfg.w if models.stage == 1 else cfg.w_prime
    opt = _fresh_opt()
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(5)
        n_critic = n_gen = 0
        u_perm = np.resize(rng.permutation(n_u), max(n_u, len(x_seen)))
        pos = 0
        for idx in batch_iter(len(x_seen), cfg.batch_size, rng):
            x_s, a_s = x_seen[idx], a_seen[idx]
            u_idx = u_perm[pos : pos + len(idx)]
            if len(u_idx) < len(idx):
                u_idx = np.concatenate([u_idx, rng.integers(n_u, size=len(idx) - len(u_idx))])
            pos += len(idx)
            x_u = x_unseen[u_idx]
            if models.stage == 2:
                # live decoder, detached; fixed for this batch
                u_cond = pseudo_attributes(models.Dec, x_u, cfg.pseudo_attr_clamp)
            for _ in range(cfg.critic_iters):
                if models.stage == 1:
                    u_cond = a_unseen[rng.integers(len(a_unseen), size=len(idx))]
                ls, lu = critic_step(models, opt, x_s, a_s, x_u, u_cond, cfg, rng)
                sums[0] += ls.value.item()
                sums[1] += lu.value.item()
                sums[3] += ls.gp.item()
                sums[4] += lu.gp.item()
                n_critic += 1
            if models.stage == 1:
                u_cond = a_unseen[rng.integers(len(a_unseen), size=len(idx))]
            sums[2] += generator_step(models, opt, x_s, a_s, u_cond, w, cfg, rng)
            n_gen += 1
        history.records.append(
            EpochRecord(
                epoch=len(history.records) + 1,
                L_S=sums[0] / n_critic,
                L_U=sums[1] / n_critic,
                L_R=sums[2] / n_gen,
                gp_s=sums[3] / n_critic,
                gp_u=sums[4] / n_critic,
                seconds=time.perf_counter() - t0,
            )
        )
        if on_epoch is not None:
            on_epoch(epoch, models)


def _view(dataset) -> TrainingView:
    return dataset.training_view() if isinstance(dataset, SplitDataset) else dataset


def train_stage1(
    dataset, cfg: TrainConfig, epochs: int | None = None, on_epoch=None
) -> tuple[ModelSet, TrainHistory]:
    """Stage 1: unconditional unseen critic, decoder trained jointly.

    ``epochs`` overrides ``cfg.epochs_stage1`` (used by the stage-1-only
    baseline, which keeps training this stage). ``on_epoch(epoch, models)``
    is called after every epoch with the live models; copy them to keep a
    snapshot. A run of E epochs is a prefix of any longer run with the same
    seed, so snapshots equal independent shorter runs.
    """
    cfg.validate()
    view = _view(dataset)
    epochs = cfg.epochs_stage1 if epochs is None else epochs
    models = init_models(
        view.x_seen.shape[1], view.attributes.k, cfg.hidden_dim, 1, derive_rng(cfg.seed, "init", 1), np.dtype(cfg.dtype)
    )
    history = TrainHistory(stage=1)
    _run_epochs(models, view, cfg, epochs, derive_rng(cfg.seed, "train", 1), history, on_epoch)
    return models, history


def reinitialize_for_stage2(stage1: ModelSet, cfg: TrainConfig) -> ModelSet:
    """Fresh G, D_s and a conditional D_u; Dec copied from stage 1."""
    if stage1.Dec is None:
        raise MissingDecoderError("stage-1 models carry no attribute decoder")
    fresh = init_models(stage1.d, stage1.k, cfg.hidden_dim, 2, derive_rng(cfg.seed, "init", 2), np.dtype(cfg.dtype))
    fresh.Dec = stage1.Dec.copy()
    return fresh


def train_stage2(dataset, stage1_models: ModelSet, cfg: TrainConfig, on_epoch=None) -> tuple[ModelSet, TrainHistory]:
    cfg.validate()
    if stage1_models is None or getattr(stage1_models, "Dec", None) is None:
        raise MissingDecoderError("train_stage2 needs stage-1 models with a trained decoder")
    view = _view(dataset)
    models = reinitialize_for_stage2(stage1_models, cfg)
    history = TrainHistory(stage=2)
    _run_epochs(models, view, cfg, cfg.epochs_stage2, derive_rng(cfg.seed, "train", 2), history, on_epoch)
    return models, history
