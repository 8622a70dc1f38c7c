"""Training loop, checkpoints and the multi-seed driver."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .batch import DescriptorCache, make_batch
from .corpus import CorpusConfig, CorpusItem, generate_corpus
from .encoders import ArmConfig, DualEncoder, build_model, make_arm
from .losses import LossBreakdown, VicregWeights, third_tower_loss, vicreg, with_auxiliary
from .optim import AdamWState, LrSchedule, NonFiniteGradient, adamw_step, lr_at
from .retrieval import EvalPool, build_pool, embed_items, pool_metrics
from .rng import generator
from .tensor import backward

CONFIG_SCHEMA_VERSION = 1


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss or gradient; carries the last good state."""

    def __init__(self, message: str, last_good: dict, history: list[dict]):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


@dataclass(frozen=True)
class PoolConfig:
    pool_size: int = 32
    n_queries: int = 64
    n_hard: int = 8
    n_semihard: int = 4
    seed: int = 42


@dataclass(frozen=True)
class TrainConfig:
    arm: ArmConfig = field(default_factory=lambda: make_arm("d0"))
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    corpus_seed: int = 0
    seed: int = 0
    epochs: int = 20
    batch_size: int = 16
    base_lr: float = 3e-4
    weight_decay: float = 0.01
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(kind="cosine", warmup_steps=20, ref_epochs=20))
    vicreg: VicregWeights = field(default_factory=VicregWeights)
    val_fraction: float = 0.2
    eval_every: int = 1
    pool: PoolConfig = field(default_factory=PoolConfig)
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0 and eval_every >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        _reject_unknown(cls, d, "train config")
        kw = {}
        if "arm" in d:
            arm = d.pop("arm")
            kw["arm"] = make_arm(arm) if isinstance(arm, str) else ArmConfig.from_dict(arm)
        if "corpus" in d:
            kw["corpus"] = CorpusConfig.from_dict(_checked(CorpusConfig, d.pop("corpus"), "corpus"))
        for key, typ in (("schedule", LrSchedule), ("vicreg", VicregWeights), ("pool", PoolConfig)):
            if key in d:
                kw[key] = typ(**_checked(typ, d.pop(key), key))
        return cls(**kw, **d)

    @property
    def hash(self) -> str:
        return checkpoint.config_hash(self.to_dict())


def _reject_unknown(cls, d: dict, where: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"{where}: unknown field(s) {', '.join(unknown)}")


def _checked(cls, d: dict, where: str) -> dict:
    _reject_unknown(cls, d, where)
    return d


def split_items(items: list[CorpusItem], val_fraction: float) -> tuple[list[CorpusItem], list[CorpusItem]]:
    """Hold out the highest-numbered pieces for validation."""
    pieces = sorted({it.piece_id for it in items})
    n_val = max(1, int(round(val_fraction * len(pieces))))
    if n_val >= len(pieces):
        raise ValueError("validation split would leave no training pieces")
    val_pieces = set(pieces[-n_val:])
    train = [it for it in items if it.piece_id not in val_pieces]
    val = [it for it in items if it.piece_id in val_pieces]
    return train, val


def compute_loss(model: DualEncoder, out, weights: VicregWeights) -> LossBreakdown:
    tower = model.config.tower
    if tower is None:
        loss = vicreg(out.z_a, out.z_m, weights)
    else:
        loss = third_tower_loss(out.z_a, out.z_m, out.z_d, tower.alpha, tower.beta, weights,
                                anchor=tower.mode == "anchor")
    return with_auxiliary(loss, out.aux)


def model_state(model: DualEncoder) -> dict[str, np.ndarray]:
    return {k: np.array(v, copy=True) for k, v in model.state_dict().items()}


@dataclass
class TrainResult:
    model: DualEncoder
    history: list[dict]
    best_state: dict[str, np.ndarray]
    last_state: dict[str, np.ndarray]
    best_epoch: int
    best_s: float | None
    config: TrainConfig

    def best_model(self) -> DualEncoder:
        m = build_model(self.config.arm, self.config.seed, _dtype(self.config))
        m.load_state_dict(self.best_state)
        return m.eval()


def _dtype(config: TrainConfig):
    return np.float32 if config.dtype == "float32" else np.float64


def train(config: TrainConfig, items: list[CorpusItem] | None = None, out_dir: str | Path | None = None,
          cache: DescriptorCache | None = None, log=None, on_epoch=None) -> TrainResult:
    """Train one arm; deterministic under (config, corpus).

    The best checkpoint maximizes validation S (earliest epoch on ties).
    With ``out_dir`` the best/last checkpoints and a JSON-lines history are
    written under ``out_dir/ckpt``.
    """
    if items is None:
        items = generate_corpus(config.corpus, config.corpus_seed)
    cache = cache if cache is not None else DescriptorCache()
    train_items, val_items = split_items(items, config.val_fraction)
    if len(train_items) < config.batch_size:
        raise ValueError(f"{len(train_items)} training items cannot fill a batch of {config.batch_size}")
    pc = config.pool
    pool = build_pool(val_items, pc.pool_size, pc.n_queries, pc.n_hard, pc.n_semihard, pc.seed)

    model = build_model(config.arm, config.seed, _dtype(config))
    params = model.parameters()
    opt = AdamWState(base_lr=config.base_lr, weight_decay=config.weight_decay)
    steps_per_epoch = len(train_items) // config.batch_size
    history: list[dict] = []
    best_state = last_good = model_state(model)
    best_epoch, best_s = 0, None
    step = 0

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = generator(config.seed, "batches", epoch).permutation(len(train_items))
        sums = {"total": 0.0, "invariance": 0.0, "variance": 0.0, "covariance": 0.0, "auxiliary": 0.0}
        lr_mult = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = make_batch([train_items[i] for i in idx], config.arm, cache, config.seed, ("train", epoch, b))
            model.rng_source.reseed(config.seed, step)
            out = model(batch)
            loss = compute_loss(model, out, config.vicreg)
            if not math.isfinite(float(loss.total.data)):
                _abort(f"non-finite loss at epoch {epoch} step {step}", last_good, history, out_dir, config)
            grads = backward(loss.total, params)
            lr_mult = lr_at(config.schedule, step, steps_per_epoch, config.epochs)
            try:
                adamw_step(opt, params, grads, lr_mult)
            except NonFiniteGradient:
                _abort(f"non-finite gradient at epoch {epoch} step {step}", last_good, history, out_dir, config)
            for k, v in loss.to_dict().items():
                sums[k] += v
            step += 1
        record = {"epoch": epoch, "steps": step, "lr_mult": lr_mult,
                  "loss": {k: v / steps_per_epoch for k, v in sums.items()}}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            za, zm = embed_items(model, val_items, cache, control_seed=config.seed)
            metrics = pool_metrics(pool, za, zm)
            record["val"] = metrics
            if best_s is None or metrics["s"] > best_s:
                best_s, best_epoch = metrics["s"], epoch
                best_state = model_state(model)
        last_good = model_state(model)
        history.append(record)
        if log is not None:
            log(record)
        if on_epoch is not None:
            on_epoch(model, record)

    result = TrainResult(model, history, best_state, last_good, best_epoch, best_s, config)
    if out_dir is not None:
        save_run(out_dir, result)
    return result


def _abort(msg: str, last_good: dict, history: list[dict], out_dir, config: TrainConfig):
    if out_dir is not None:
        ck = Path(out_dir) / "ckpt"
        ck.mkdir(parents=True, exist_ok=True)
        checkpoint.save(ck / "last_good.xmck", last_good, config.to_dict(), {"aborted": msg})
        _write_history(Path(out_dir) / "ckpt" / "history.jsonl", history)
    raise TrainingAborted(msg, last_good, history)


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_run(out_dir: str | Path, result: TrainResult) -> Path:
    ck = Path(out_dir) / "ckpt"
    ck.mkdir(parents=True, exist_ok=True)
    cfg = result.config.to_dict()
    checkpoint.save(ck / "best.xmck", result.best_state, cfg, {"epoch": result.best_epoch, "val_s": result.best_s})
    checkpoint.save(ck / "last.xmck", result.last_state, cfg, {"epoch": len(result.history)})
    _write_history(ck / "history.jsonl", result.history)
    return ck


def load_model(path: str | Path) -> tuple[DualEncoder, TrainConfig, dict]:
    """Rebuild the model described by a checkpoint and load its weights."""
    tensors, header = checkpoint.load(path)
    config = TrainConfig.from_dict(header["config"])
    model = build_model(config.arm, config.seed, _dtype(config))
    model.load_state_dict(tensors)
    return model.eval(), config, header["meta"]


def summarize(values) -> dict:
    """Mean, sample standard deviation (n-1) and range."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise ValueError("need at least two values")
    return {"n": len(vals), "mean": statistics.fmean(vals), "sd": statistics.stdev(vals),
            "min": min(vals), "max": max(vals)}


def format_summary(summary: dict, scale: float = 100.0) -> str:
    """Table-style row: ``mean sd min--max`` with one decimal."""
    return (f"{summary['mean'] * scale:.1f} {summary['sd'] * scale:.1f} "
            f"{summary['min'] * scale:.1f}--{summary['max'] * scale:.1f}")


def multi_seed(config: TrainConfig, seeds, items: list[CorpusItem] | None = None,
               cache: DescriptorCache | None = None) -> dict:
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("multi_seed needs at least two seeds")
    items = items if items is not None else generate_corpus(config.corpus, config.corpus_seed)
    cache = cache if cache is not None else DescriptorCache()
    per_seed = {}
    results = {}
    for s in seeds:
        res = train(replace(config, seed=s), items, cache=cache)
        per_seed[s] = res.best_s
        results[s] = res
    return {"per_seed": per_seed, "summary": summarize(per_seed.values()), "results": results}
