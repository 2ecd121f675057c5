"""Generator properties: determinism, the confounding fork, track removal."""

import numpy as np
import pytest

from prism.synth import ScmConfig, generate, remove_tracks, save_ground_truth


def _dataset(genes=200, length=128, gamma=1.0, sigma=0.2, seed=0, states=4):
    cfg = ScmConfig(
        genes=genes, length=length, tracks=3,
        confound_strength=gamma, noise_sd=sigma, seed=seed, states=states,
    )
    return cfg, *generate(cfg)


def test_same_seed_is_bit_identical():
    _, recs_a, truths_a = _dataset(genes=30)
    _, recs_b, truths_b = _dataset(genes=30)
    for a, b in zip(recs_a, recs_b):
        assert a.gene_id == b.gene_id
        assert a.chromosome == b.chromosome
        assert a.tss == b.tss
        assert a.y == b.y
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.S, b.S)
        assert np.array_equal(a.aux, b.aux)
    for ta, tb in zip(truths_a, truths_b):
        assert (ta.gene_id, ta.state, ta.causal_y) == (tb.gene_id, tb.state, tb.causal_y)


def test_different_seed_differs():
    _, recs_a, _ = _dataset(genes=10, seed=0)
    _, recs_b, _ = _dataset(genes=10, seed=1)
    assert any(not np.array_equal(a.S, b.S) for a, b in zip(recs_a, recs_b))


def test_shapes_and_nonnegativity():
    cfg, records, truths = _dataset(genes=20, length=128)
    for rec in records:
        assert rec.X.shape == (128, 4)
        assert rec.S.shape == (128, 3)
        assert np.all(rec.S >= 0)
        assert np.all(np.isfinite(rec.S))
        assert set(rec.X.sum(axis=1).tolist()) <= {0.0, 1.0}


def test_zero_confound_decorrelates_background():
    # Monte Carlo under the generator's own causal model
    cfg = ScmConfig(genes=10000, length=256, tracks=3, confound_strength=0.0, seed=7)
    records, _ = generate(cfg)
    mean_bg = np.array([r.S[:, 1:].mean() for r in records])
    y = np.array([r.y for r in records])
    corr = np.corrcoef(mean_bg, y)[0, 1]
    assert -0.05 <= corr <= 0.05


def test_unit_confound_correlates_background():
    cfg = ScmConfig(genes=10000, length=256, tracks=3, confound_strength=1.0, seed=7)
    records, _ = generate(cfg)
    mean_bg = np.array([r.S[:, 1:].mean() for r in records])
    y = np.array([r.y for r in records])
    assert np.corrcoef(mean_bg, y)[0, 1] > 0.3


def test_foreground_independent_of_state():
    cfg = ScmConfig(genes=10000, length=256, tracks=3, confound_strength=1.0, seed=7)
    _, truths = generate(cfg)
    peak_mass = np.array([t.causal_y for t in truths])
    states = np.array([t.state for t in truths])
    for s in range(cfg.states):
        onehot = (states == s).astype(float)
        assert abs(np.corrcoef(peak_mass, onehot)[0, 1]) < 0.05


def test_noiseless_unconfounded_target_equals_causal_part():
    _, records, truths = _dataset(genes=50, gamma=0.0, sigma=0.0)
    for rec, truth in zip(records, truths):
        assert rec.y == truth.causal_y


def test_remove_no_tracks_is_identity():
    _, records, _ = _dataset(genes=5)
    out = remove_tracks(records, [])
    for a, b in zip(records, out):
        assert np.array_equal(a.S, b.S)
        assert a.y == b.y


def test_remove_all_tracks_zeroes_signals():
    _, records, _ = _dataset(genes=5)
    out = remove_tracks(records, [0, 1, 2])
    for rec in out:
        assert np.all(rec.S == 0)


def test_remove_only_listed_tracks():
    _, records, _ = _dataset(genes=5)
    out = remove_tracks(records, [1])
    for a, b in zip(records, out):
        assert np.all(b.S[:, 1] == 0)
        assert np.array_equal(b.S[:, 0], a.S[:, 0])
        assert np.array_equal(b.S[:, 2], a.S[:, 2])


def test_remove_rejects_bad_index():
    _, records, _ = _dataset(genes=2)
    with pytest.raises(ValueError, match="track index"):
        remove_tracks(records, [3])


def test_config_validation():
    with pytest.raises(ValueError, match="partition"):
        ScmConfig(tracks=3, foreground_tracks=(0,), background_tracks=(1,))
    with pytest.raises(ValueError):
        ScmConfig(states=0)
    with pytest.raises(ValueError):
        ScmConfig(confound_strength=-1.0)


def test_ground_truth_file(tmp_path):
    _, records, truths = _dataset(genes=5)
    path = save_ground_truth(truths, tmp_path)
    lines = path.read_text().splitlines()
    assert lines[0] == "gene_id\tstate\tcausal_y"
    assert len(lines) == 6
