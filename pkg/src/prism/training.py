"""End-to-end training: batching, the three losses, Adam updates, the
warmup/cosine schedule, periodic validation and best-model snapshots.

Every number a run produces is a deterministic function of (config, seed,
dataset): shuffling, initialization and the dropout-baseline masks all
draw from named counter-based streams.

Run directory layout:

    config.tsv    resolved configuration, written before any work
    log.tsv       one row per update step: step, lr, l1, l2, l3, total
    best.prck     parameters + buffers at the best validation MSE
    final.prck    parameters + buffers after the last step
    final.prmo    optimizer moments after the last step
    metrics.tsv   validation summary of the run
"""

from __future__ import annotations

import dataclasses
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, losses
from .autodiff import Tensor, backward
from .errors import NumericError, PrismError
from .model import ModelConfig, PrismModel, make_batch
from .optim import Adam, LrSchedule, lr_at
from .rng import stream

DEFAULT_SEEDS = (2, 22, 222, 2222, 22222)


@dataclass(frozen=True)
class TrainConfig:
    # intervention
    states: int = 2          # n; 0 trains the baseline model
    alpha: float = 1.0
    beta: float = 1.0
    t: float = 2.0
    delta: float = 1.0
    # model
    hidden: int = 128
    backbone: str = "gated_conv"
    dtype: str = "float32"
    # optimization
    batch_size: int = 8
    max_steps: int = 50000
    warmup_start: float = 1e-5
    peak_lr: float = 5e-4
    min_lr: float = 1e-4
    warmup_steps: int = 5000
    eval_every: int = 500
    seed: int = 2
    # dropout-baseline protocol: per-entry retention probability on the
    # encoded signals; None disables the mask entirely
    signal_retention: float | None = None

    def __post_init__(self):
        if self.states < 0:
            raise ValueError(f"states must be >= 0, got {self.states}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.t <= 0 or self.delta <= 0:
            raise ValueError("t and delta must be positive")
        if self.batch_size < 1 or self.max_steps < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_steps and eval_every must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.signal_retention is not None and not (0 < self.signal_retention <= 1):
            raise ValueError("signal_retention must lie in (0, 1]")
        self.schedule()  # validates warmup/total relation

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            warmup_start=self.warmup_start,
            peak=self.peak_lr,
            floor=self.min_lr,
            warmup_steps=self.warmup_steps,
            total_steps=self.max_steps,
        )

    @classmethod
    def desk_profile(cls, **overrides) -> "TrainConfig":
        """Reduced configuration for minutes-scale experiments."""
        base = dict(max_steps=3000, hidden=32, warmup_steps=300, eval_every=500)
        base.update(overrides)
        if "warmup_steps" not in overrides:
            base["warmup_steps"] = min(300, max(1, base["max_steps"] // 10))
        return cls(**base)


@dataclass
class TrainState:
    config: TrainConfig
    model: PrismModel
    adam: Adam
    step: int
    best_validation_mse: float
    best_checkpoint_path: Path | None
    final_checkpoint_path: Path | None
    run_dir: Path


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ownership of a run directory via a lock file."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PrismError(
            f"run directory {run_dir} is locked by another run (remove {lock} if stale)"
        )
    try:
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_config(run_dir: Path, config: TrainConfig, extra: dict | None = None):
    rows = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    if extra:
        rows.update(extra)
    with open(run_dir / "config.tsv", "w") as fh:
        for key in sorted(rows):
            value = rows[key]
            fh.write(f"{key}\t{'' if value is None else value}\n")


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("\t")
            out[key] = value
    return out


def model_config_from(config: TrainConfig, tracks: int, aux_dim: int) -> ModelConfig:
    return ModelConfig(
        tracks=tracks,
        hidden=config.hidden,
        states=config.states,
        aux_dim=aux_dim,
        backbone=config.backbone,
        seed=config.seed,
        dtype=config.dtype,
    )


def _validation_mse(model: PrismModel, records, batch_size: int) -> float:
    preds = predict_records(model, records, batch_size)
    targets = np.array([r.y for r in records], dtype=np.float64)
    return float(np.mean((preds - targets) ** 2))


def predict_records(model: PrismModel, records, batch_size: int = 64) -> np.ndarray:
    """Standard forward over a dataset in evaluation mode.

    PRISM_THREADS > 1 fans batches out to a thread pool (safe on frozen
    parameters); batch results are concatenated in dataset order either
    way, so the output never depends on the thread count.
    """
    if not records:
        raise ValueError("cannot evaluate an empty dataset")
    dt = model.config.np_dtype

    def one(lo):
        X, S, aux, _ = make_batch(records[lo : lo + batch_size], dt)
        return model.predict(Tensor(X), Tensor(S), Tensor(aux)).data.astype(np.float64)

    offsets = range(0, len(records), batch_size)
    threads = int(os.environ.get("PRISM_THREADS", "1"))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, offsets))
    else:
        outs = [one(lo) for lo in offsets]
    return np.concatenate(outs)


def _fmt(v) -> str:
    return repr(float(v))


def train(config: TrainConfig, train_records, val_records, run_dir) -> TrainState:
    """Run the full training loop and leave artifacts in `run_dir`."""
    if not train_records:
        raise ValueError("empty training set")
    if not val_records:
        raise ValueError("empty validation set")
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        return _train_locked(config, train_records, val_records, run_dir)


def _train_locked(config, train_records, val_records, run_dir) -> TrainState:
    tracks = train_records[0].tracks
    aux_dim = train_records[0].aux.shape[0]
    length = train_records[0].length
    write_config(
        run_dir,
        config,
        extra={"data_tracks": tracks, "data_aux_dim": aux_dim, "data_length": length},
    )

    model = PrismModel(model_config_from(config, tracks, aux_dim))
    adam = Adam(model.params())
    schedule = config.schedule()
    dt = model.config.np_dtype

    n_train = len(train_records)
    best_mse = np.inf
    best_path = None
    last_breakdown = None
    log_path = run_dir / "log.tsv"

    with open(log_path, "w") as log:
        log.write("step\tlr\tl1\tl2\tl3\ttotal\n")
        step = 0
        epoch = 0
        while step < config.max_steps:
            order = stream(config.seed, "shuffle", epoch).permutation(n_train)
            for lo in range(0, n_train, config.batch_size):
                if step >= config.max_steps:
                    break
                batch = [train_records[i] for i in order[lo : lo + config.batch_size]]
                X, S, aux, y = make_batch(batch, dt)
                h_mask = None
                if config.signal_retention is not None:
                    draw = stream(config.seed, "dropout", step).random(
                        (X.shape[0], X.shape[1], config.hidden)
                    )
                    h_mask = (draw < config.signal_retention).astype(dt)
                loss, breakdown = losses.total_loss(
                    model,
                    Tensor(X),
                    Tensor(S),
                    Tensor(aux),
                    Tensor(y),
                    alpha=config.alpha,
                    beta=config.beta,
                    t=config.t,
                    delta=config.delta,
                    training=True,
                    h_mask=h_mask,
                )
                if not np.isfinite(breakdown.total):
                    raise NumericError(
                        f"loss diverged at step {step}; last finite breakdown: "
                        f"{last_breakdown}",
                        op="train",
                    )
                last_breakdown = breakdown
                lr = lr_at(schedule, step)
                adam.zero_grad()
                backward(loss)
                adam.step(lr)
                log.write(
                    f"{step}\t{_fmt(lr)}\t{_fmt(breakdown.l1)}\t{_fmt(breakdown.l2)}"
                    f"\t{_fmt(breakdown.l3)}\t{_fmt(breakdown.total)}\n"
                )
                step += 1
                if step % config.eval_every == 0 or step == config.max_steps:
                    val_mse = _validation_mse(model, val_records, 64)
                    if val_mse < best_mse:
                        best_mse = val_mse
                        best_path = run_dir / "best.prck"
                        checkpoint.save_tensors(best_path, model.state_dict())
            epoch += 1

    final_path = run_dir / "final.prck"
    checkpoint.save_tensors(final_path, model.state_dict())
    checkpoint.save_moments(run_dir / "final.prmo", adam)

    final_mse = _validation_mse(model, val_records, 64)
    with open(run_dir / "metrics.tsv", "w") as fh:
        fh.write("metric\tvalue\n")
        fh.write(f"best_validation_mse\t{_fmt(best_mse)}\n")
        fh.write(f"final_validation_mse\t{_fmt(final_mse)}\n")
        fh.write(f"steps\t{config.max_steps}\n")

    return TrainState(
        config=config,
        model=model,
        adam=adam,
        step=config.max_steps,
        best_validation_mse=best_mse,
        best_checkpoint_path=best_path,
        final_checkpoint_path=final_path,
        run_dir=run_dir,
    )


def load_model_from_run(run_dir, which: str = "best") -> PrismModel:
    """Rebuild the model of a finished run from its config and checkpoint."""
    run_dir = Path(run_dir)
    cfg = read_config(run_dir / "config.tsv")
    model = PrismModel(
        ModelConfig(
            tracks=int(cfg["data_tracks"]),
            hidden=int(cfg["hidden"]),
            states=int(cfg["states"]),
            aux_dim=int(cfg["data_aux_dim"]),
            backbone=cfg["backbone"],
            seed=int(cfg["seed"]),
            dtype=cfg["dtype"],
        )
    )
    path = run_dir / f"{which}.prck"
    model.load_state_dict(checkpoint.load_tensors(path))
    return model


def multi_seed(run_one, seeds=DEFAULT_SEEDS) -> dict[str, tuple[float, float]]:
    """mean and sample standard deviation (n-1) of metrics across seeds.

    `run_one(seed)` returns a {metric: value} mapping; metrics are
    aggregated by name.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    rows = [run_one(seed) for seed in seeds]
    out = {}
    for key in rows[0]:
        values = np.array([row[key] for row in rows], dtype=np.float64)
        out[key] = (float(values.mean()), float(values.std(ddof=1)))
    return out
