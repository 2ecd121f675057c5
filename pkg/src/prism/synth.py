"""Synthetic datasets from a structural causal model with a known confounder.

The generative story per gene:

    state c        ~ Uniform{0..states-1}           (latent chromatin state)
    background     = per-state smooth profile + per-gene noise, level tied
                     to the state's effect size, so background tracks carry
                     information about c
    foreground     = 1-3 Gaussian bumps, amplitudes independent of c
    Y              = w * bump_amplitude_sum + gamma * effect(c) + N(0, sigma)

Only the foreground bumps are causal for Y; the background <- c -> Y fork
is the confound whose strength `gamma` controls. Everything is drawn from
per-gene counter-based streams, so generation is order- and
parallelism-independent, and bit-identical for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .data import GeneRecord, encode_sequence
from .rng import stream

# chromosome pool: weights give roughly 70/15/15 train/val/test
_CHROMOSOMES = ("chr1", "chr2", "chr4", "chr5", "chr6", "chr3", "chr21", "chr22", "chrX")
_CHROM_WEIGHTS = (0.14, 0.14, 0.14, 0.14, 0.14, 0.075, 0.075, 0.075, 0.075)

AUX_DIM = 2


@dataclass(frozen=True)
class ScmConfig:
    genes: int = 1000
    length: int = 2000
    tracks: int = 3
    foreground_tracks: tuple[int, ...] = (0,)
    background_tracks: tuple[int, ...] = (1, 2)
    confound_strength: float = 1.0   # gamma, scales the c -> Y edge
    causal_strength: float = 1.0     # w, scales the foreground -> Y edge
    noise_sd: float = 0.2            # sigma of the exogenous noise on Y
    states: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.genes <= 0 or self.length <= 0 or self.tracks <= 0:
            raise ValueError("genes, length and tracks must be positive")
        if self.states < 1:
            raise ValueError("need at least one latent state")
        if self.confound_strength < 0 or self.noise_sd < 0:
            raise ValueError("confound_strength and noise_sd must be >= 0")
        combined = sorted(self.foreground_tracks + self.background_tracks)
        if combined != list(range(self.tracks)):
            raise ValueError(
                "foreground and background tracks must partition "
                f"0..{self.tracks - 1}, got fg={self.foreground_tracks} "
                f"bg={self.background_tracks}"
            )


@dataclass
class GroundTruth:
    gene_id: str
    state: int
    causal_y: float


@dataclass
class StateTable:
    """Per-state structures drawn once at generator construction."""

    effects: np.ndarray          # (states,) offsets applied to Y
    profiles: np.ndarray         # (states, L, n_background) smooth curves

    @property
    def states(self) -> int:
        return self.effects.shape[0]


def _smooth_curve(rng: np.random.Generator, length: int) -> np.ndarray:
    """Cubic spline through coarse random knots, zero mean, unit sd."""
    knots = max(4, length // 100)
    xk = np.linspace(0, length - 1, knots)
    yk = rng.standard_normal(knots)
    curve = CubicSpline(xk, yk)(np.arange(length))
    curve = curve - curve.mean()
    sd = curve.std()
    if sd > 0:
        curve = curve / sd
    return curve


def _state_effects(states: int) -> np.ndarray:
    """Per-state offsets on Y: evenly spaced normal quantiles, unit variance.

    Quantiles of N(0,1) rather than independent draws keep the confound's
    variance share stable across seeds; random draws occasionally cluster
    and collapse the confounding signal entirely.
    """
    from scipy.stats import norm

    probs = (np.arange(states) + 0.5) / states
    effects = norm.ppf(probs)
    sd = effects.std()
    return effects / sd if sd > 0 else effects


def build_state_table(config: ScmConfig) -> StateTable:
    rng = stream(config.seed, "scm", "states")
    effects = _state_effects(config.states)
    n_bg = len(config.background_tracks)
    profiles = np.empty((config.states, config.length, n_bg))
    for s in range(config.states):
        # background level rises with the state's effect on Y; that tie is
        # what makes background tracks a usable (confounded) shortcut
        level = 1.7 + 0.8 * effects[s]
        for j in range(n_bg):
            curve = _smooth_curve(rng, config.length)
            profiles[s, :, j] = np.clip(level + 0.3 * curve, 0.0, None)
    return StateTable(effects=effects, profiles=profiles)


def _gene_bumps(rng: np.random.Generator, length: int) -> tuple[np.ndarray, float]:
    """Foreground track: 1-3 Gaussian bumps. Returns (track, amplitude sum)."""
    # bump widths follow the 50-200 bp geometry of a 2 kb window, scaled
    # to shorter windows so bumps stay localized
    width_scale = min(1.0, length / 2000.0)
    n_bumps = rng.integers(1, 4)
    pos = np.arange(length)
    track = np.zeros(length)
    amp_sum = 0.0
    for _ in range(n_bumps):
        center = rng.uniform(0.1 * length, 0.9 * length)
        width = rng.uniform(50.0, 200.0) * width_scale
        width = max(width, 8.0)
        amp = rng.uniform(0.5, 1.5)
        track += amp * np.exp(-0.5 * ((pos - center) / width) ** 2)
        amp_sum += amp
    return track, amp_sum


def generate(config: ScmConfig) -> tuple[list[GeneRecord], list[GroundTruth]]:
    """Sample the full dataset plus per-gene ground truth."""
    table = build_state_table(config)
    records: list[GeneRecord] = []
    truths: list[GroundTruth] = []
    width = len(str(max(config.genes - 1, 1)))
    for g in range(config.genes):
        rng = stream(config.seed, "scm", "gene", g)
        gene_id = f"g{g:0{width}d}"
        state = int(rng.integers(config.states))
        chrom = _CHROMOSOMES[rng.choice(len(_CHROMOSOMES), p=_CHROM_WEIGHTS)]
        tss = int(rng.integers(10_000, 1_000_000))

        S = np.zeros((config.length, config.tracks), dtype=np.float64)
        amp_sum = 0.0
        for t in config.foreground_tracks:
            track, amp = _gene_bumps(rng, config.length)
            S[:, t] = track
            amp_sum += amp
        bg_noise = rng.standard_normal((config.length, len(config.background_tracks)))
        bg = table.profiles[state] + 0.1 * bg_noise
        for j, t in enumerate(config.background_tracks):
            S[:, t] = np.clip(bg[:, j], 0.0, None)

        causal = config.causal_strength * amp_sum
        y = (
            causal
            + config.confound_strength * table.effects[state]
            + config.noise_sd * rng.standard_normal()
        )

        seq = "".join("ATCG"[i] for i in rng.integers(0, 4, config.length))
        aux = rng.standard_normal(AUX_DIM)
        records.append(
            GeneRecord(
                gene_id=gene_id,
                chromosome=chrom,
                tss=tss,
                X=encode_sequence(seq),
                S=S.astype(np.float32),
                y=float(y),
                aux=aux.astype(np.float32),
            )
        )
        truths.append(GroundTruth(gene_id=gene_id, state=state, causal_y=float(causal)))
    return records, truths


def remove_tracks(records: list[GeneRecord], indices) -> list[GeneRecord]:
    """Copy of the dataset with the listed signal tracks zeroed."""
    indices = list(indices)
    if records:
        tracks = records[0].tracks
        for idx in indices:
            if not (0 <= idx < tracks):
                raise ValueError(f"track index {idx} out of range [0, {tracks})")
    out = []
    for rec in records:
        S = rec.S.copy()
        for idx in indices:
            S[:, idx] = 0.0
        out.append(
            GeneRecord(rec.gene_id, rec.chromosome, rec.tss, rec.X, S, rec.y, rec.aux)
        )
    return out


def save_ground_truth(truths: list[GroundTruth], out_dir) -> Path:
    path = Path(out_dir) / "ground_truth.tsv"
    with open(path, "w") as fh:
        fh.write("gene_id\tstate\tcausal_y\n")
        for t in sorted(truths, key=lambda t: t.gene_id):
            fh.write(f"{t.gene_id}\t{t.state}\t{t.causal_y:.8g}\n")
    return path
