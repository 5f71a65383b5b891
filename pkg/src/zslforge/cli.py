"""Command line: ``zslforge {gen-data,train,evaluate,ablate,plot}``.

Config precedence, lowest to highest: built-in defaults, the JSON file given
by ``--config``, then command-line flags. Every command writes the fully
resolved config as ``config.json`` in its output directory; passing that
file back with ``--config`` reproduces the run.
"""

from __future__ import annotations

import os

# bit-identical reruns need a single BLAS thread; set before numpy loads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from dataclasses import asdict, dataclass, field, fields  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .checkpoint import config_hash  # noqa: E402
from .classify import CascadeClassifier, ClassifierConfig, synthesize_unseen  # noqa: E402
from .data import SplitDataset, SyntheticSpec, dataset_fingerprint, load_dataset, make_synthetic, save_dataset  # noqa: E402
from .evaluate import EvalReport  # noqa: E402
from .experiments import stage1_snapshots  # noqa: E402
from .models import ModelSet  # noqa: E402
from .ndcore import derive_rng  # noqa: E402
from .pipeline import evaluate_models  # noqa: E402
from .plot import plot_embedding  # noqa: E402
from .training import TrainConfig, train_stage1, train_stage2  # noqa: E402


class CLIError(Exception):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig.desk)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    data: str | None = None  # dataset directory; None means generate from ``synthetic``
    seed: int = 0
    grid: list[int] = field(default_factory=lambda: [0, 75, 150, 300])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    plot_per_class: int = 100

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, body: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(body) - known
        if unknown:
            raise CLIError(f"unknown config keys: {sorted(unknown)}")
        out = cls()
        for name, sub in (("train", TrainConfig), ("classifier", ClassifierConfig), ("synthetic", SyntheticSpec)):
            if name in body:
                merged = {**asdict(getattr(out, name)), **body[name]}
                bad = set(merged) - {f.name for f in fields(sub)}
                if bad:
                    raise CLIError(f"unknown {name} keys: {sorted(bad)}")
                setattr(out, name, sub(**merged))
        for name in ("data", "seed", "grid", "seeds", "plot_per_class"):
            if name in body:
                setattr(out, name, body[name])
        return out

    def resolved_train(self) -> TrainConfig:
        cfg = TrainConfig(**asdict(self.train))
        cfg.seed = self.seed
        return cfg

    def run_hash(self, ds: SplitDataset) -> str:
        """Hash of the settings and the dataset contents, not its location."""
        body = self.to_dict()
        body["data"] = dataset_fingerprint(ds)
        return config_hash(body)

    def dataset(self) -> SplitDataset:
        if self.data:
            return load_dataset(self.data)
        return make_synthetic(self.synthetic, self.seed)


# --------------------------------------------------------------------------
# helpers


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise CLIError(f"{out}: output directory is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _threads() -> int:
    raw = os.environ.get("ZSLFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(f"ZSLFORGE_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, out: Path) -> Path:
    ds = make_synthetic(cfg.synthetic, cfg.seed)
    save_dataset(ds, out)
    return out


def cmd_train(cfg: RunConfig, out: Path) -> dict[str, Path]:
    ds = cfg.dataset()
    tcfg = cfg.resolved_train()
    h = cfg.run_hash(ds)
    m1, h1 = train_stage1(ds, tcfg)
    m2, h2 = train_stage2(ds, m1, tcfg)
    paths = {
        "stage1": out / "stage1.ckpt",
        "stage2": out / "stage2.ckpt",
        "history1": out / "history_stage1.csv",
        "history2": out / "history_stage2.csv",
    }
    m1.save(paths["stage1"], {"config_hash": h})
    m2.save(paths["stage2"], {"config_hash": h})
    h1.to_csv(paths["history1"])
    h2.to_csv(paths["history2"])
    return paths


def cmd_evaluate(cfg: RunConfig, checkpoint: Path, out: Path) -> tuple[EvalReport, EvalReport]:
    if not checkpoint.is_file():
        raise CLIError(f"{checkpoint}: checkpoint not found")
    models, _ = ModelSet.load(checkpoint)
    ds = cfg.dataset()
    h = cfg.run_hash(ds)
    czsl, gzsl, cascade = evaluate_models(models, ds, cfg.classifier, cfg.seed, h)
    (out / "report_czsl.json").write_text(czsl.to_json(), encoding="utf-8")
    (out / "report_gzsl.json").write_text(gzsl.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(czsl.render() + "\n" + gzsl.render() + "\n", encoding="utf-8")
    cascade.save(out / "cascade.ckpt", {"config_hash": h})
    return czsl, gzsl


def ablate_one_seed(cfg: RunConfig, seed: int) -> list[tuple[int, int, float]]:
    """Conventional ZSL accuracy for every stage-1 epoch count in the grid.

    One stage-1 run to the largest grid value supplies all snapshots; by
    determinism each equals an independent run of that length.
    """
    run = RunConfig.from_dict({**cfg.to_dict(), "seed": seed})
    ds = run.dataset()
    tcfg = run.resolved_train()
    snaps, _, _ = stage1_snapshots(ds, tcfg, max(run.grid), run.grid)
    rows = []
    for e in run.grid:
        m2, _ = train_stage2(ds, snaps[e], tcfg)
        czsl, _, _ = evaluate_models(m2, ds, run.classifier, seed)
        rows.append((seed, e, czsl.U))
    return rows


def cmd_ablate(cfg: RunConfig, out: Path) -> list[tuple[int, int, float]]:
    if len(cfg.grid) < 2:
        raise CLIError("ablate needs a grid of at least two stage-1 epoch counts")
    if any(e < 0 for e in cfg.grid):
        raise CLIError("grid values must be >= 0")
    workers = min(_threads(), len(cfg.seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            per_seed = list(pool.map(ablate_one_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        per_seed = [ablate_one_seed(cfg, s) for s in cfg.seeds]
    rows = [r for chunk in per_seed for r in chunk]
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("seed,stage1_epochs,accuracy\n")
        for seed, e, acc in rows:
            fh.write(f"{seed},{e},{acc!r}\n")
    means = [(e, float(np.mean([a for _, g, a in rows if g == e]))) for e in cfg.grid]
    table = "stage1_epochs | " + " | ".join(str(e) for e, _ in means) + "\n"
    table += "acc           | " + " | ".join(f"{a:.1f}" for _, a in means) + "\n"
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    return rows


def cmd_plot(cfg: RunConfig, checkpoint: Path, out: Path) -> np.ndarray:
    if not checkpoint.is_file():
        raise CLIError(f"{checkpoint}: checkpoint not found")
    models, _ = ModelSet.load(checkpoint)
    ds = cfg.dataset()
    x, y = synthesize_unseen(
        models.G, ds.attributes, cfg.plot_per_class, derive_rng(cfg.seed, "plot"), models.G.params["W1"].dtype
    )
    return plot_embedding(x, y, out, title="synthesized unseen features (PCA)")


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zslforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--force", action="store_true", help="allow a non-empty output directory")
        sp.add_argument("--data", type=Path, help="dataset directory (default: generate the synthetic benchmark)")

    def train_flags(sp):
        sp.add_argument("--epochs-stage1", type=int)
        sp.add_argument("--epochs-stage2", type=int)
        sp.add_argument("--hidden-dim", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--dtype", choices=["float64", "float32"])

    g = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    common(g)
    g.add_argument("--noise", type=float, help="cluster noise std-dev")

    t = sub.add_parser("train", help="stage 1 then stage 2; checkpoints and histories")
    common(t)
    train_flags(t)

    e = sub.add_parser("evaluate", help="CZSL and GZSL reports for a checkpoint")
    common(e)
    e.add_argument("--checkpoint", type=Path, required=True)

    a = sub.add_parser("ablate", help="accuracy against stage-1 epochs")
    common(a)
    train_flags(a)
    a.add_argument("--grid", type=int, nargs="+")
    a.add_argument("--seeds", type=int, nargs="+")

    pl = sub.add_parser("plot", help="PCA scatter of synthesized unseen features")
    common(pl)
    pl.add_argument("--checkpoint", type=Path, required=True)
    pl.add_argument("--per-class", type=int)
    return p


def _resolve(args) -> RunConfig:
    body = {}
    if args.config is not None:
        if not args.config.is_file():
            raise CLIError(f"{args.config}: config file not found")
        try:
            body = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CLIError(f"{args.config}: invalid JSON ({e})") from None
    cfg = RunConfig.from_dict(body)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.data is not None:
        cfg.data = str(args.data)
    for flag, key in (("epochs_stage1",) * 2, ("epochs_stage2",) * 2, ("hidden_dim",) * 2, ("lr",) * 2, ("dtype",) * 2):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg.train, key, v)
    if getattr(args, "noise", None) is not None:
        cfg.synthetic.cluster_noise = args.noise
    if getattr(args, "grid", None):
        cfg.grid = list(args.grid)
    if getattr(args, "seeds", None):
        cfg.seeds = list(args.seeds)
    if getattr(args, "per_class", None) is not None:
        cfg.plot_per_class = args.per_class
    return cfg


def run(argv=None) -> None:
    args = _parser().parse_args(argv)
    cfg = _resolve(args)
    out = _prepare_out(args.out, args.force)
    _write_config(cfg, out)
    if args.command == "gen-data":
        cmd_gen_data(cfg, out)
        print(f"wrote dataset to {out}")
    elif args.command == "train":
        paths = cmd_train(cfg, out)
        print(f"wrote {paths['stage1'].name}, {paths['stage2'].name} to {out}")
    elif args.command == "evaluate":
        czsl, gzsl = cmd_evaluate(cfg, args.checkpoint, out)
        print(czsl.render())
        print(gzsl.render())
    elif args.command == "ablate":
        cmd_ablate(cfg, out)
        print((out / "ablation.txt").read_text(encoding="utf-8"), end="")
    elif args.command == "plot":
        cmd_plot(cfg, args.checkpoint, out)
        print(f"wrote embedding.svg and embedding.csv to {out}")


def main(argv=None) -> int:
    try:
        run(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # one-line diagnostic instead of a traceback
        msg = str(e).splitlines()[0] if str(e) else ""
        print(f"zslforge: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
