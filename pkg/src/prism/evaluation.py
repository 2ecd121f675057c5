"""Metrics and the stress/ablation protocols.

Reports are TSV files whose leading comment lines carry the config hash
and seed list needed to regenerate every row; each row additionally
records the checkpoint hash it was computed from.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import GeneRecord
from .model import CONFOUNDER_MIN_LENGTH, PrismModel
from .synth import remove_tracks


@dataclass(frozen=True)
class MetricTriple:
    mse: float
    mae: float
    pearson: float | None  # None when undefined (constant inputs)


def metrics(predictions, targets) -> MetricTriple:
    """MSE, MAE and Pearson correlation (population covariance over the
    product of population standard deviations)."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError(f"expected equal nonzero-length vectors, got {p.shape} vs {t.shape}")
    err = p - t
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    sp = p.std()
    st = t.std()
    if sp == 0 or st == 0:
        return MetricTriple(mse, mae, None)
    cov = float(np.mean((p - p.mean()) * (t - t.mean())))
    return MetricTriple(mse, mae, float(cov / (sp * st)))


def evaluate_model(model: PrismModel, records, batch_size: int = 64) -> MetricTriple:
    from .training import predict_records

    preds = predict_records(model, records, batch_size)
    return metrics(preds, [r.y for r in records])


# ---------------------------------------------------------------------------
# stress protocols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RemovalResult:
    track_indices: tuple[int, ...]
    intact: MetricTriple
    removed: MetricTriple

    @property
    def delta_mse(self) -> float:
        return self.removed.mse - self.intact.mse

    @property
    def delta_mae(self) -> float:
        return self.removed.mae - self.intact.mae

    @property
    def delta_pearson(self) -> float | None:
        if self.intact.pearson is None or self.removed.pearson is None:
            return None
        return self.intact.pearson - self.removed.pearson


def signal_removal_test(model: PrismModel, records, track_indices) -> RemovalResult:
    """Evaluate with the listed tracks zeroed and report the degradation."""
    intact = evaluate_model(model, records)
    removed = evaluate_model(model, remove_tracks(records, track_indices))
    return RemovalResult(tuple(track_indices), intact, removed)


def crop_center(records: list[GeneRecord], length: int) -> list[GeneRecord]:
    full = records[0].length
    if length > full:
        raise ValueError(f"crop length {length} exceeds window {full}")
    if length < CONFOUNDER_MIN_LENGTH:
        raise ValueError(
            f"crop length {length} below the confounder-encoder minimum "
            f"{CONFOUNDER_MIN_LENGTH}"
        )
    lo = (full - length) // 2
    hi = lo + length
    return [
        GeneRecord(r.gene_id, r.chromosome, r.tss, r.X[lo:hi], r.S[lo:hi], r.y, r.aux)
        for r in records
    ]


def shortened_input_test(model: PrismModel, records, lengths) -> list[tuple[int, MetricTriple]]:
    """Center-crop the windows to each length and evaluate; the reference
    backbone and both encoders are length-agnostic."""
    out = []
    for length in sorted(lengths, reverse=True):
        out.append((length, evaluate_model(model, crop_center(records, length))))
    return out


def confounder_weight_matrix(model: PrismModel, records, batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode confounder weights for a dataset: (N, n, d')."""
    from .model import make_batch

    if model.config.states == 0:
        raise ValueError("baseline model has no confounder weights")
    outs = []
    for lo in range(0, len(records), batch_size):
        _, S, _, _ = make_batch(records[lo : lo + batch_size], model.config.np_dtype)
        A = model.confounder_weights(Tensor(S), training=False)
        outs.append(A.data.astype(np.float64))
    return np.concatenate(outs)


def retention_rate(model: PrismModel, records) -> tuple[float, np.ndarray]:
    """Mean confounder-weight entry over genes, states and dimensions,
    plus the per-state means."""
    A = confounder_weight_matrix(model, records)
    return float(A.mean()), A.mean(axis=(0, 2))


def export_weights(model: PrismModel, records, out_path) -> Path:
    """Per-gene weight vectors as TSV: gene_id, state, then d' values."""
    out_path = Path(out_path)
    ordered = sorted(records, key=lambda r: r.gene_id)
    A = confounder_weight_matrix(model, ordered)
    hidden = model.config.hidden
    with open(out_path, "w") as fh:
        header = ["gene_id", "state"] + [f"w{j}" for j in range(hidden)]
        fh.write("\t".join(header) + "\n")
        for rec, weights in zip(ordered, A):
            for state in range(model.config.states):
                vals = "\t".join(f"{v:.9g}" for v in weights[state])
                fh.write(f"{rec.gene_id}\t{state}\t{vals}\n")
    return out_path


# ---------------------------------------------------------------------------
# sweep / dropout harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    protocol: str
    parameter: str
    value: str
    seed: int
    mse: float
    mae: float
    pearson: float | None
    config_hash: str
    checkpoint_hash: str


@dataclass
class AblationReport:
    rows: list[ReportRow]
    failures: list[tuple[str, int, str]]  # (value, seed, message)

    def aggregate(self) -> list[dict]:
        """mean and sample sd (n-1) per (protocol, parameter, value)."""
        groups: dict[tuple[str, str, str], list[ReportRow]] = {}
        for row in self.rows:
            groups.setdefault((row.protocol, row.parameter, row.value), []).append(row)
        out = []
        for (protocol, parameter, value), rows in groups.items():
            entry = {"protocol": protocol, "parameter": parameter, "value": value,
                     "seeds": len(rows)}
            for metric in ("mse", "mae", "pearson"):
                vals = np.array(
                    [getattr(r, metric) for r in rows if getattr(r, metric) is not None],
                    dtype=np.float64,
                )
                entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else None
                entry[f"{metric}_sd"] = (
                    float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                )
            out.append(entry)
        return out

    def write_tsv(self, path, seeds, config_hash: str):
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(f"# config_hash\t{config_hash}\n")
            fh.write(f"# seeds\t{','.join(str(s) for s in seeds)}\n")
            fh.write(
                "protocol\tparameter\tvalue\tseed\tmse\tmae\tpearson"
                "\tconfig_hash\tcheckpoint_hash\n"
            )
            for r in self.rows:
                pearson = "nan" if r.pearson is None else f"{r.pearson:.9g}"
                fh.write(
                    f"{r.protocol}\t{r.parameter}\t{r.value}\t{r.seed}\t"
                    f"{r.mse:.9g}\t{r.mae:.9g}\t{pearson}\t{r.config_hash}\t"
                    f"{r.checkpoint_hash}\n"
                )
            for value, seed, message in self.failures:
                fh.write(f"# failed\t{value}\tseed={seed}\t{message}\n")
        return path

    def write_plot_data(self, out_dir):
        """x/y series per protocol and metric, for external plotting."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for entry in self.aggregate():
            for metric in ("mse", "mae", "pearson"):
                if entry[f"{metric}_mean"] is None:
                    continue
                name = f"{entry['protocol']}_{entry['parameter']}_{metric}.tsv"
                path = out_dir / name
                new = not path.exists()
                with open(path, "a") as fh:
                    if new:
                        fh.write("x\ty\tsd\n")
                    fh.write(
                        f"{entry['value']}\t{entry[f'{metric}_mean']:.9g}\t"
                        f"{entry[f'{metric}_sd']:.9g}\n"
                    )
                if new:
                    written.append(path)
        return written


def config_hash(config) -> str:
    return hashlib.blake2b(repr(config).encode(), digest_size=8).hexdigest()


def file_hash(path) -> str:
    return hashlib.blake2b(Path(path).read_bytes(), digest_size=8).hexdigest()


def sweep(
    base_config,
    parameter: str,
    values,
    train_records,
    val_records,
    test_records,
    seeds,
    out_root,
) -> AblationReport:
    """Train and evaluate every (value, seed) cell of a one-parameter grid.

    Individual run failures are recorded and the sweep continues.
    """
    from .training import train

    out_root = Path(out_root)
    rows: list[ReportRow] = []
    failures = []
    for value in values:
        for seed in seeds:
            overrides = {parameter: value, "seed": seed}
            if parameter == "states" and value == 0:
                overrides.update(alpha=0.0, beta=0.0)
            run_dir = out_root / f"{parameter}_{value}_seed{seed}"
            try:
                config = replace(base_config, **overrides)
                state = train(config, train_records, val_records, run_dir)
                triple = evaluate_model(state.model, test_records)
            except Exception as exc:  # record and continue
                failures.append((str(value), seed, f"{type(exc).__name__}: {exc}"))
                continue
            rows.append(
                ReportRow(
                    protocol="sweep",
                    parameter=parameter,
                    value=str(value),
                    seed=seed,
                    mse=triple.mse,
                    mae=triple.mae,
                    pearson=triple.pearson,
                    config_hash=config_hash(config),
                    checkpoint_hash=file_hash(state.final_checkpoint_path),
                )
            )
    return AblationReport(rows=rows, failures=failures)


def dropout_baseline(
    base_config,
    rates,
    train_records,
    val_records,
    test_records,
    seeds,
    out_root,
) -> AblationReport:
    """Baseline models trained with random per-entry signal retention."""
    from .training import train

    out_root = Path(out_root)
    rows: list[ReportRow] = []
    failures = []
    for rate in rates:
        if not (0 < rate <= 1):
            raise ValueError(f"retention rate must lie in (0, 1], got {rate}")
        for seed in seeds:
            config = replace(
                base_config,
                states=0,
                alpha=0.0,
                beta=0.0,
                signal_retention=float(rate),
                seed=seed,
            )
            run_dir = out_root / f"dropout_{rate:g}_seed{seed}"
            try:
                state = train(config, train_records, val_records, run_dir)
                triple = evaluate_model(state.model, test_records)
            except Exception as exc:
                failures.append((f"{rate:g}", seed, f"{type(exc).__name__}: {exc}"))
                continue
            rows.append(
                ReportRow(
                    protocol="dropout",
                    parameter="retention",
                    value=f"{rate:g}",
                    seed=seed,
                    mse=triple.mse,
                    mae=triple.mae,
                    pearson=triple.pearson,
                    config_hash=config_hash(config),
                    checkpoint_hash=file_hash(state.final_checkpoint_path),
                )
            )
    return AblationReport(rows=rows, failures=failures)
