"""The three networks: signal encoder, confounder encoder, predictor.

The signal encoder is a per-position linear map d -> d'. The confounder
encoder is a small 1D CNN (three conv/BN/ReLU/maxpool stages, 64x total
downsampling, global average pool, linear projection, sigmoid) producing
n per-gene weight vectors in (0,1)^d'. The predictor projects the one-hot
sequence to d', fuses the two streams by elementwise addition, runs a
swappable backbone body to a pooled d' representation, and applies an
affine head on [pooled, aux].

The interventional forward reweights the encoded signals with each weight
vector, averages the n backbone representations, and applies the shared
head once; with an affine head this equals averaging n full predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import GeneRecord
from .rng import stream

CONFOUNDER_MIN_LENGTH = 64  # three maxpools of width 4 must leave >= 1 position


@dataclass(frozen=True)
class ModelConfig:
    tracks: int                 # d, signal tracks
    hidden: int = 128           # d', shared feature width
    states: int = 2             # n, confounder strata (0 = baseline model)
    aux_dim: int = 0
    backbone: str = "gated_conv"
    seed: int = 0
    dtype: str = "float32"      # float64 required for gradient checking

    def __post_init__(self):
        if self.tracks < 1 or self.hidden < 1 or self.states < 0 or self.aux_dim < 0:
            raise ValueError("invalid model dimensions")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.backbone not in BACKBONES:
            raise ValueError(
                f"unknown backbone {self.backbone!r}; available: {sorted(BACKBONES)}"
            )

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def _init_weight(name: str, owner: str, shape, fan_in: int, seed: int, dtype) -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    values = stream(seed, "init", name).uniform(-bound, bound, size=shape)
    return Parameter(name, owner, values.astype(dtype))


def _zeros(name: str, owner: str, shape, dtype) -> Parameter:
    return Parameter(name, owner, np.zeros(shape, dtype=dtype))


class Linear:
    def __init__(self, name, owner, n_in, n_out, seed, dtype):
        self.weight = _init_weight(f"{name}.weight", owner, (n_in, n_out), n_in, seed, dtype)
        self.bias = _zeros(f"{name}.bias", owner, (n_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def params(self):
        return [self.weight, self.bias]


class Conv1d:
    def __init__(self, name, owner, kernel, n_in, n_out, seed, dtype):
        fan_in = kernel * n_in
        self.weight = _init_weight(
            f"{name}.weight", owner, (kernel, n_in, n_out), fan_in, seed, dtype
        )
        self.bias = _zeros(f"{name}.bias", owner, (n_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d_same(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


class BatchNorm:
    """Running statistics with momentum 0.1; evaluation mode uses them."""

    MOMENTUM = 0.1
    EPS = 1e-5

    def __init__(self, name, owner, channels, dtype):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", owner, np.ones(channels, dtype=dtype))
        self.beta = _zeros(f"{name}.beta", owner, (channels,), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            out, mu, var = ad.batch_norm_train(x, self.gamma, self.beta, self.EPS)
            n = x.data.shape[0] * x.data.shape[1]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = self.MOMENTUM
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(x.data.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(x.data.dtype)
            return out
        return ad.batch_norm_eval(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.EPS
        )

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def load_buffers(self, named, dtype):
        self.running_mean = named[f"{self.name}.running_mean"].astype(dtype)
        self.running_var = named[f"{self.name}.running_var"].astype(dtype)


class GatedConvBackbone:
    """Four residual blocks of gated convolution, then mean pool.

    Each block computes x + sigmoid(g) * l where (g, l) are the two halves
    of one kernel-5, same-padded convolution to 2*hidden channels.
    """

    BLOCKS = 4
    KERNEL = 5

    def __init__(self, hidden, seed, dtype):
        self.hidden = hidden
        self.convs = [
            Conv1d(f"backbone.block{i}.conv", "phi", self.KERNEL, hidden, 2 * hidden, seed, dtype)
            for i in range(self.BLOCKS)
        ]

    def __call__(self, fused: Tensor) -> Tensor:
        x = fused
        h = self.hidden
        for conv in self.convs:
            both = conv(x)
            gate = ad.sigmoid(ad.slice_last(both, 0, h))
            lin = ad.slice_last(both, h, 2 * h)
            x = ad.add(x, ad.mul(gate, lin))
        return ad.tmean(x, axis=1)

    def params(self):
        return [p for conv in self.convs for p in conv.params()]


BACKBONES = {"gated_conv": GatedConvBackbone}


class ConfounderEncoder:
    """Signals (B,L,d) -> weight matrix (B, n, d'), entries in (0,1)."""

    CHANNELS = (8, 16, 32)
    KERNELS = (7, 5, 3)
    POOL = 4

    def __init__(self, tracks, hidden, states, seed, dtype):
        self.states = states
        self.hidden = hidden
        chans = (tracks,) + self.CHANNELS
        self.convs = []
        self.bns = []
        for i, (k, cin, cout) in enumerate(zip(self.KERNELS, chans[:-1], chans[1:])):
            self.convs.append(
                Conv1d(f"confounder.conv{i}", "omega", k, cin, cout, seed, dtype)
            )
            self.bns.append(BatchNorm(f"confounder.bn{i}", "omega", cout, dtype))
        self.proj = Linear(
            "confounder.proj", "omega", self.CHANNELS[-1], states * hidden, seed, dtype
        )

    def forward_flat(self, S: Tensor, training: bool) -> Tensor:
        """Returns the sigmoid weights as (B, n*d')."""
        length = S.data.shape[1]
        if length < CONFOUNDER_MIN_LENGTH:
            raise ValueError(
                f"confounder encoder needs length >= {CONFOUNDER_MIN_LENGTH}, got {length}"
            )
        x = S
        for conv, bn in zip(self.convs, self.bns):
            x = ad.max_pool1d(ad.relu(bn(conv(x), training)), self.POOL)
        x = ad.tmean(x, axis=1)  # global average pool -> (B, 32)
        return ad.sigmoid(self.proj(x))

    def params(self):
        out = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.params() + bn.params()
        return out + self.proj.params()

    def buffers(self):
        out = {}
        for bn in self.bns:
            out.update(bn.buffers())
        return out

    def load_buffers(self, named, dtype):
        for bn in self.bns:
            bn.load_buffers(named, dtype)


class PrismModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        dt = config.np_dtype
        seed = config.seed
        self.signal_encoder = Linear(
            "signal_encoder", "theta", config.tracks, config.hidden, seed, dt
        )
        self.seq_proj = Linear("seq_proj", "phi", 4, config.hidden, seed, dt)
        self.backbone = BACKBONES[config.backbone](config.hidden, seed, dt)
        self.head = Linear("head", "phi", config.hidden + config.aux_dim, 1, seed, dt)
        self.confounder = (
            ConfounderEncoder(config.tracks, config.hidden, config.states, seed, dt)
            if config.states > 0
            else None
        )

    # -- parameter bookkeeping ------------------------------------------

    def params(self) -> list[Parameter]:
        out = self.signal_encoder.params() + self.seq_proj.params()
        out += self.backbone.params() + self.head.params()
        if self.confounder is not None:
            out += self.confounder.params()
        return out

    def params_by_owner(self, owner: str) -> list[Parameter]:
        return [p for p in self.params() if p.owner == owner]

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.confounder.buffers()) if self.confounder is not None else {}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.params()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, named: dict[str, np.ndarray]):
        expected = set(p.name for p in self.params()) | set(self.buffers())
        got = set(named)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        dt = self.config.np_dtype
        for p in self.params():
            values = named[p.name]
            if values.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {p.name}: {values.shape} vs {p.data.shape}"
                )
            p.data[...] = values.astype(dt)
        if self.confounder is not None:
            self.confounder.load_buffers(named, dt)

    def describe(self) -> dict[str, int]:
        counts = {"theta": 0, "omega": 0, "phi": 0}
        for p in self.params():
            counts[p.owner] += p.data.size
        counts["total"] = sum(counts.values())
        counts["confounder_encoder"] = sum(
            p.data.size for p in self.params() if p.name.startswith("confounder.")
        )
        return counts

    # -- forward passes ---------------------------------------------------

    def encode_signals(self, S: Tensor) -> Tensor:
        if S.data.shape[-1] != self.config.tracks:
            raise ValueError(
                f"expected {self.config.tracks} tracks, got {S.data.shape[-1]}"
            )
        return self.signal_encoder(S)

    def confounder_weights_flat(self, S: Tensor, training: bool = False) -> Tensor:
        if self.confounder is None:
            raise ValueError("baseline model (states=0) has no confounder encoder")
        return self.confounder.forward_flat(S, training)

    def confounder_weights(self, S: Tensor, training: bool = False) -> Tensor:
        flat = self.confounder_weights_flat(S, training)
        b = flat.data.shape[0]
        return ad.reshape(flat, (b, self.config.states, self.config.hidden))

    def body(self, fused: Tensor) -> Tensor:
        return self.backbone(fused)

    def head_forward(self, pooled: Tensor, aux: Tensor) -> Tensor:
        if self.config.aux_dim:
            pooled = ad.concat_last([pooled, aux])
        out = self.head(pooled)
        return ad.reshape(out, (out.data.shape[0],))

    def fuse(self, X: Tensor, H: Tensor) -> Tensor:
        return ad.add(self.seq_proj(X), H)

    def predict(
        self, X: Tensor, S: Tensor, aux: Tensor, h_mask: np.ndarray | None = None
    ) -> Tensor:
        """Standard forward: head(body(project(X) + encode(S)), aux).

        `h_mask` multiplies the encoded signals elementwise; the dropout
        baseline protocol uses it as a per-entry retention mask.
        """
        H = self.encode_signals(S)
        if h_mask is not None:
            H = ad.mul(H, Tensor(np.asarray(h_mask, self.config.np_dtype)))
        rep = self.body(self.fuse(X, H))
        return self.head_forward(rep, aux)

    def predict_interventional(
        self,
        X: Tensor,
        S: Tensor,
        aux: Tensor,
        A: Tensor | None = None,
        training: bool = False,
    ) -> Tensor:
        """Backdoor-adjusted forward: average the n reweighted backbone
        representations, then apply the shared head once."""
        n = self.config.states
        if n == 0:
            raise ValueError("interventional forward needs states >= 1")
        if A is None:
            flat = self.confounder_weights_flat(S, training)
        else:
            a = A if isinstance(A, Tensor) else Tensor(np.asarray(A, self.config.np_dtype))
            b = a.data.shape[0]
            flat = ad.reshape(a, (b, n * self.config.hidden))
        H = self.encode_signals(S)
        proj = self.seq_proj(X)
        h = self.config.hidden
        rep_sum = None
        for i in range(n):
            a_i = ad.reshape(ad.slice_last(flat, i * h, (i + 1) * h), (-1, 1, h))
            rep = self.body(ad.add(proj, ad.mul(H, a_i)))
            rep_sum = rep if rep_sum is None else ad.add(rep_sum, rep)
        rep_mean = ad.scale(rep_sum, 1.0 / n)
        return self.head_forward(rep_mean, aux)


def make_batch(records: list[GeneRecord], dtype) -> tuple[np.ndarray, ...]:
    """Stack records into (X, S, aux, y) arrays of the model dtype."""
    if not records:
        raise ValueError("empty batch")
    X = np.stack([r.X for r in records]).astype(dtype)
    S = np.stack([r.S for r in records]).astype(dtype)
    aux = np.stack([r.aux for r in records]).astype(dtype)
    y = np.array([r.y for r in records], dtype=dtype)
    return X, S, aux, y
