"""The four networks: generator G(z, a), seen critic D_s(x, a), unseen critic
D_u (x only in stage 1, x and a in stage 2) and attribute decoder Dec(x).

All are two-layer fully connected nets with a leaky-ReLU hidden layer.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .checkpoint import load_checkpoint, save_checkpoint
from .ndcore import Tape, Tensor

LEAKY_SLOPE = 0.2
NETS = ("G", "D_s", "D_u", "Dec")


class ConditioningMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dim: int
    output_dim: int
    output_activation: str = "identity"  # or "relu"
    cond_dim: int = 0  # trailing input columns that come from an attribute

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError(f"MLP dims must be >= 1: {self}")
        if self.output_activation not in ("identity", "relu"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0 <= self.cond_dim < self.input_dim:
            raise ValueError(f"cond_dim {self.cond_dim} out of range for input_dim {self.input_dim}")


def _forward(spec: MLPSpec, p: dict[str, Tensor], x: Tensor) -> Tensor:
    h = nd.leaky_relu(x @ p["W1"] + p["b1"], LEAKY_SLOPE)
    out = h @ p["W2"] + p["b2"]
    if spec.output_activation == "relu":
        out = nd.relu(out)
    return out


class _Net:
    spec: MLPSpec

    def _tensors(self) -> dict[str, Tensor]:
        raise NotImplementedError

    @property
    def conditional(self) -> bool:
        return self.spec.cond_dim > 0

    def __call__(self, x, a=None) -> Tensor:
        x = nd.as_tensor(x)
        if self.conditional:
            if a is None:
                raise ConditioningMismatchError("conditional network called without attributes")
            a = nd.as_tensor(a, x)
            if a.shape[0] != x.shape[0]:
                raise nd.ShapeError(f"{x.shape[0]} input rows but {a.shape[0]} attribute rows")
            if a.shape[1] != self.spec.cond_dim:
                raise nd.ShapeError(f"attribute width {a.shape[1]}, expected {self.spec.cond_dim}")
            inp = nd.concat_cols(x, a)
        else:
            if a is not None:
                raise ConditioningMismatchError("unconditional network given attributes")
            inp = x
        if inp.shape[1] != self.spec.input_dim:
            raise nd.ShapeError(f"input width {inp.shape[1]}, expected {self.spec.input_dim}")
        return _forward(self.spec, self._tensors(), inp)


class MLP(_Net):
    def __init__(self, spec: MLPSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec: MLPSpec, rng: np.random.Generator, dtype=nd.DEFAULT_DTYPE) -> MLP:
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
        def uniform(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

        params = {
            "W1": uniform(spec.input_dim, spec.hidden_dim),
            "b1": np.zeros((1, spec.hidden_dim), dtype=dtype),
            "W2": uniform(spec.hidden_dim, spec.output_dim),
            "b2": np.zeros((1, spec.output_dim), dtype=dtype),
        }
        return cls(spec, params)

    def _tensors(self):
        return {k: Tensor(v) for k, v in self.params.items()}

    def bind(self, tape: Tape, prefix: str = "") -> BoundMLP:
        return BoundMLP(self, tape, tape.watch_all(self.params, prefix))

    def copy(self) -> MLP:
        return MLP(self.spec, {k: v.copy() for k, v in self.params.items()})


class BoundMLP(_Net):
    """An MLP whose parameters are leaves on a tape."""

    def __init__(self, mlp: MLP, tape: Tape, leaves: dict[str, Tensor]):
        self.mlp = mlp
        self.spec = mlp.spec
        self.tape = tape
        self.leaves = leaves

    def _tensors(self):
        return self.leaves

    def leaf_list(self) -> list[Tensor]:
        return list(self.leaves.values())


def generate(G: _Net, z, a) -> Tensor:
    """Synthesize feature rows G(z, a); rectified, so never negative."""
    z = nd.as_tensor(z)
    a = nd.as_tensor(a, z)
    if z.shape[0] != a.shape[0]:
        raise nd.ShapeError(f"noise has {z.shape[0]} rows but attributes have {a.shape[0]}")
    return G(z, a)


def decode_attributes(Dec: _Net, x) -> Tensor:
    return Dec(x)


def critic_score(D: _Net, x, a=None) -> Tensor:
    return D(x, a)


@dataclass
class ModelSet:
    G: MLP
    D_s: MLP
    D_u: MLP
    Dec: MLP
    stage: int
    d: int
    k: int
    hidden_dim: int

    @property
    def noise_dim(self) -> int:
        return self.k

    def nets(self) -> dict[str, MLP]:
        return {"G": self.G, "D_s": self.D_s, "D_u": self.D_u, "Dec": self.Dec}

    def copy(self) -> ModelSet:
        return copy.deepcopy(self)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}": v for n, net in self.nets().items() for k, v in net.params.items()}

    def save(self, path, meta: dict | None = None) -> None:
        info = {"stage": self.stage, "d": self.d, "k": self.k, "hidden_dim": self.hidden_dim}
        info.update(meta or {})
        save_checkpoint(path, "models", self.to_arrays(), info)

    @classmethod
    def load(cls, path) -> tuple[ModelSet, dict]:
        _, arrays, meta = load_checkpoint(path, "models")
        specs = model_specs(meta["d"], meta["k"], meta["hidden_dim"], meta["stage"])
        nets = {
            n: MLP(specs[n], {k: arrays[f"{n}/{k}"] for k in ("W1", "b1", "W2", "b2")})
            for n in NETS
        }
        ms = cls(**nets, stage=meta["stage"], d=meta["d"], k=meta["k"], hidden_dim=meta["hidden_dim"])
        return ms, meta


def model_specs(d: int, k: int, hidden_dim: int, stage: int) -> dict[str, MLPSpec]:
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    return {
        "G": MLPSpec(k + k, hidden_dim, d, "relu", cond_dim=k),
        "D_s": MLPSpec(d + k, hidden_dim, 1, cond_dim=k),
        "D_u": MLPSpec(d if stage == 1 else d + k, hidden_dim, 1, cond_dim=0 if stage == 1 else k),
        "Dec": MLPSpec(d, hidden_dim, k),
    }


def init_models(d: int, k: int, hidden_dim: int, stage: int, rng: np.random.Generator, dtype=nd.DEFAULT_DTYPE) -> ModelSet:
    if min(d, k, hidden_dim) < 1:
        raise ValueError(f"dims must be >= 1, got d={d}, k={k}, hidden_dim={hidden_dim}")
    specs = model_specs(d, k, hidden_dim, stage)
    nets = {n: MLP.init(specs[n], rng, dtype) for n in NETS}
    return ModelSet(**nets, stage=stage, d=d, k=k, hidden_dim=hidden_dim)
