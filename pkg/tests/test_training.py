"""Training-loop contracts: determinism, schedule use, snapshots, aborts."""

import numpy as np
import pytest

from prism import checkpoint
from prism.errors import NumericError, PrismError
from prism.evaluation import evaluate_model
from prism.optim import lr_at
from prism.training import (
    DEFAULT_SEEDS,
    TrainConfig,
    load_model_from_run,
    multi_seed,
    predict_records,
    read_config,
    run_lock,
    train,
)

FAST = dict(
    hidden=8, max_steps=24, warmup_steps=4, eval_every=8, batch_size=4, seed=2
)


def _fast_config(**overrides):
    fields = dict(FAST)
    fields.update(overrides)
    return TrainConfig(**fields)


def test_config_defaults_mirror_published_values():
    cfg = TrainConfig()
    assert cfg.batch_size == 8
    assert cfg.max_steps == 50000
    assert cfg.peak_lr == 5e-4
    assert cfg.warmup_start == 1e-5
    assert cfg.min_lr == 1e-4
    assert cfg.warmup_steps == 5000
    assert cfg.hidden == 128
    assert (cfg.states, cfg.alpha, cfg.beta) == (2, 1.0, 1.0)
    assert DEFAULT_SEEDS == (2, 22, 222, 2222, 22222)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(states=-1)
    with pytest.raises(ValueError):
        TrainConfig(alpha=-0.5)
    with pytest.raises(ValueError):
        TrainConfig(signal_retention=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_steps=100, warmup_steps=100)  # schedule invariant


def test_desk_profile():
    cfg = TrainConfig.desk_profile()
    assert cfg.max_steps == 3000
    assert cfg.hidden == 32
    cfg = TrainConfig.desk_profile(seed=7, max_steps=50)
    assert cfg.seed == 7 and cfg.max_steps == 50


def test_same_seed_runs_are_bitwise_identical(small_dataset, tmp_path):
    cfg = _fast_config()
    a = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "a")
    b = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "b")
    assert (tmp_path / "a/log.tsv").read_bytes() == (tmp_path / "b/log.tsv").read_bytes()
    assert (tmp_path / "a/final.prck").read_bytes() == (tmp_path / "b/final.prck").read_bytes()
    assert a.best_validation_mse == b.best_validation_mse


def test_logged_lr_follows_schedule(small_dataset, tmp_path):
    cfg = _fast_config()
    train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    schedule = cfg.schedule()
    lines = (tmp_path / "run/log.tsv").read_text().splitlines()[1:]
    assert len(lines) == cfg.max_steps
    for line in lines:
        step, lr = line.split("\t")[:2]
        assert float(lr) == lr_at(schedule, int(step))


def test_config_written_before_work_and_roundtrips(small_dataset, tmp_path):
    cfg = _fast_config(alpha=0.25, beta=2.0)
    train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    raw = read_config(tmp_path / "run/config.tsv")
    assert raw["alpha"] == "0.25"
    assert raw["beta"] == "2.0"
    assert raw["states"] == "2"
    assert raw["data_tracks"] == "3"


def test_best_snapshot_no_worse_than_final(small_dataset, tmp_path):
    cfg = _fast_config(max_steps=32, eval_every=4)
    state = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    best = load_model_from_run(tmp_path / "run", which="best")
    final = load_model_from_run(tmp_path / "run", which="final")
    val = small_dataset["val"]
    best_mse = evaluate_model(best, val).mse
    final_mse = evaluate_model(final, val).mse
    assert best_mse <= final_mse + 1e-12
    assert state.best_validation_mse == pytest.approx(best_mse, rel=1e-6)


def test_checkpoint_roundtrip_matches_in_memory(small_dataset, tmp_path):
    cfg = _fast_config()
    state = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    in_memory = predict_records(state.model, small_dataset["val"])
    reloaded = load_model_from_run(tmp_path / "run", which="final")
    from_disk = predict_records(reloaded, small_dataset["val"])
    assert np.array_equal(in_memory, from_disk)


def test_evaluate_twice_identical(small_dataset, tmp_path):
    cfg = _fast_config()
    state = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    a = evaluate_model(state.model, small_dataset["test"])
    b = evaluate_model(state.model, small_dataset["test"])
    assert (a.mse, a.mae, a.pearson) == (b.mse, b.mae, b.pearson)


def test_evaluate_empty_dataset_is_explicit_error(small_dataset, tmp_path):
    cfg = _fast_config()
    state = train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    with pytest.raises(ValueError, match="empty"):
        predict_records(state.model, [])


def test_nan_loss_aborts_with_step(small_dataset, tmp_path):
    cfg = _fast_config(peak_lr=1e18, warmup_start=1e18, min_lr=1e17, max_steps=24)
    with pytest.raises(NumericError, match="step"):
        with np.errstate(all="ignore"):
            train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")


def test_zero_coefficients_match_baseline_trajectory(small_dataset, tmp_path):
    # states=2 with alpha=beta=0 must trace the exact same numbers as the
    # baseline model: the intervention terms are skipped, omega gradients
    # stay zero and the shared parameters see identical updates
    base = _fast_config(states=0, alpha=0.0, beta=0.0)
    zeroed = _fast_config(states=2, alpha=0.0, beta=0.0)
    train(base, small_dataset["train"], small_dataset["val"], tmp_path / "base")
    train(zeroed, small_dataset["train"], small_dataset["val"], tmp_path / "zeroed")
    assert (tmp_path / "base/log.tsv").read_bytes() == (
        tmp_path / "zeroed/log.tsv"
    ).read_bytes()


def test_retention_one_matches_plain_baseline(small_dataset, tmp_path):
    plain = _fast_config(states=0, alpha=0.0, beta=0.0)
    masked = _fast_config(states=0, alpha=0.0, beta=0.0, signal_retention=1.0)
    train(plain, small_dataset["train"], small_dataset["val"], tmp_path / "plain")
    train(masked, small_dataset["train"], small_dataset["val"], tmp_path / "masked")
    assert (tmp_path / "plain/log.tsv").read_bytes() == (
        tmp_path / "masked/log.tsv"
    ).read_bytes()


def test_retention_below_one_changes_trajectory(small_dataset, tmp_path):
    plain = _fast_config(states=0, alpha=0.0, beta=0.0)
    masked = _fast_config(states=0, alpha=0.0, beta=0.0, signal_retention=0.5)
    train(plain, small_dataset["train"], small_dataset["val"], tmp_path / "plain")
    train(masked, small_dataset["train"], small_dataset["val"], tmp_path / "masked")
    assert (tmp_path / "plain/log.tsv").read_bytes() != (
        tmp_path / "masked/log.tsv"
    ).read_bytes()


def test_moment_file_written(small_dataset, tmp_path):
    cfg = _fast_config()
    train(cfg, small_dataset["train"], small_dataset["val"], tmp_path / "run")
    step_count, moments = checkpoint.load_moments(tmp_path / "run/final.prmo")
    assert step_count == cfg.max_steps
    assert any(name.endswith(".m") for name in moments)


def test_run_lock_blocks_concurrent_use(tmp_path):
    run = tmp_path / "run"
    with run_lock(run):
        with pytest.raises(PrismError, match="locked"):
            with run_lock(run):
                pass
    # released on exit
    with run_lock(run):
        pass


def test_multi_seed_statistics():
    values = {2: 0.1, 22: 0.3}
    stats = multi_seed(lambda seed: {"mse": values[seed]}, seeds=(2, 22))
    mean, sd = stats["mse"]
    assert mean == pytest.approx(0.2, abs=1e-15)
    assert sd == pytest.approx(0.1414213562, abs=1e-9)

    stats = multi_seed(lambda seed: {"mse": 0.5}, seeds=(1, 2, 3))
    assert stats["mse"] == (0.5, 0.0)

    with pytest.raises(ValueError, match="two seeds"):
        multi_seed(lambda seed: {"mse": 0.0}, seeds=(1,))
