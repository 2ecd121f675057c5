"""Dataset records, sequence encoding, TSS windows, splits and file formats.

On-disk layout of a dataset directory:

    manifest.tsv      leading `# key<TAB>value` metadata lines, then a header
                      `gene_id chromosome tss expression seq_file sig_file aux...`
                      (tab-separated); any columns after sig_file are floats.
    seq/<id>.txt      ASCII bases, exactly L characters, no newline.
    sig/<id>.prsg     magic "PRSG", u32 version=1, u32 L, u32 d, then L*d
                      little-endian float32 values row-major.

Signal values are stored as float32, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

BASES = "ATCG"  # fixed channel order
_BASE_INDEX = {"A": 0, "T": 1, "C": 2, "G": 3}

SIGNAL_MAGIC = b"PRSG"
SIGNAL_VERSION = 1

VALIDATION_CHROMOSOMES = frozenset({"chr3", "chr21"})
TEST_CHROMOSOMES = frozenset({"chr22", "chrX"})


@dataclass
class GeneRecord:
    """One example: sequence window, signal matrix, target, aux features."""

    gene_id: str
    chromosome: str
    tss: int
    X: np.ndarray  # (L, 4) one-hot, float32
    S: np.ndarray  # (L, d) non-negative signals, float32
    y: float       # expression target, log scale
    aux: np.ndarray  # (k,) float32

    @property
    def length(self) -> int:
        return self.X.shape[0]

    @property
    def tracks(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    validation_chromosomes: frozenset[str] = VALIDATION_CHROMOSOMES
    test_chromosomes: frozenset[str] = TEST_CHROMOSOMES

    def __post_init__(self):
        if self.validation_chromosomes & self.test_chromosomes:
            raise ValueError("validation and test chromosome sets overlap")


def encode_sequence(bases: str) -> np.ndarray:
    """One-hot encode a base string, channel order (A,T,C,G).

    Case-insensitive; N means unknown and maps to an all-zero row.
    """
    out = np.zeros((len(bases), 4), dtype=np.float32)
    for i, ch in enumerate(bases):
        up = ch.upper()
        if up == "N":
            continue
        idx = _BASE_INDEX.get(up)
        if idx is None:
            raise FormatError(f"invalid base {ch!r} at position {i}")
        out[i, idx] = 1.0
    return out


def window_around_tss(
    full_sequence: str, full_signals: np.ndarray, tss: int, window: int
) -> tuple[np.ndarray, np.ndarray]:
    """Slice [tss - window/2, tss + window/2) out of a contig.

    Positions outside the contig become N rows (all-zero) in X and zeros
    in the signal matrix.
    """
    if window <= 0:
        raise ValueError(f"window length must be positive, got {window}")
    if window % 2 != 0:
        raise ValueError(f"window length must be even, got {window}")
    n = len(full_sequence)
    if full_signals.shape[0] != n:
        raise ValueError(
            f"sequence length {n} != signal rows {full_signals.shape[0]}"
        )
    lo = tss - window // 2
    hi = lo + window
    src_lo = max(lo, 0)
    src_hi = min(hi, n)
    X = np.zeros((window, 4), dtype=np.float32)
    S = np.zeros((window, full_signals.shape[1]), dtype=np.float32)
    if src_lo < src_hi:
        X[src_lo - lo : src_hi - lo] = encode_sequence(full_sequence[src_lo:src_hi])
        S[src_lo - lo : src_hi - lo] = full_signals[src_lo:src_hi]
    return X, S


def split(
    records: list[GeneRecord], spec: SplitSpec = SplitSpec()
) -> tuple[list[GeneRecord], list[GeneRecord], list[GeneRecord]]:
    """Partition by chromosome; each part sorted by gene_id."""
    train, val, test = [], [], []
    for rec in records:
        if rec.chromosome in spec.validation_chromosomes:
            val.append(rec)
        elif rec.chromosome in spec.test_chromosomes:
            test.append(rec)
        else:
            train.append(rec)
    key = lambda r: r.gene_id
    return sorted(train, key=key), sorted(val, key=key), sorted(test, key=key)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _write_signal_file(path: Path, S: np.ndarray):
    length, d = S.shape
    with open(path, "wb") as fh:
        fh.write(SIGNAL_MAGIC)
        fh.write(struct.pack("<III", SIGNAL_VERSION, length, d))
        fh.write(np.ascontiguousarray(S, dtype="<f4").tobytes())


def _read_signal_file(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SIGNAL_MAGIC:
            raise FormatError(f"bad magic {magic!r}", path=path, offset=0)
        head = fh.read(12)
        if len(head) != 12:
            raise FormatError("truncated header", path=path, offset=4)
        version, length, d = struct.unpack("<III", head)
        if version != SIGNAL_VERSION:
            raise FormatError(f"unsupported version {version}", path=path, offset=4)
        raw = fh.read(4 * length * d)
        if len(raw) != 4 * length * d:
            raise FormatError(
                f"expected {length}x{d} float32 values", path=path, offset=16
            )
        if fh.read(1):
            raise FormatError("trailing bytes after values", path=path, offset=16 + len(raw))
    return np.frombuffer(raw, dtype="<f4").reshape(length, d).astype(np.float32)


def _decode_one_hot(X: np.ndarray) -> str:
    chars = []
    for row in X:
        hits = np.nonzero(row == 1.0)[0]
        chars.append(BASES[hits[0]] if hits.size else "N")
    return "".join(chars)


def save_dataset(
    records: list[GeneRecord],
    out_dir,
    metadata: dict[str, str] | None = None,
    normalize_percentile: float | None = None,
) -> Path:
    """Write a dataset directory and return the manifest path.

    With `normalize_percentile` set, each signal track is divided by its
    dataset-wide percentile value and the divisors are recorded in the
    manifest metadata.
    """
    out_dir = Path(out_dir)
    (out_dir / "seq").mkdir(parents=True, exist_ok=True)
    (out_dir / "sig").mkdir(parents=True, exist_ok=True)
    ids = [r.gene_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate gene_id in records")
    meta = dict(metadata or {})
    if normalize_percentile is not None:
        stacked = np.stack([r.S for r in records])  # (N, L, d)
        divisors = np.percentile(stacked, normalize_percentile, axis=(0, 1))
        divisors = np.where(divisors > 0, divisors, 1.0).astype(np.float32)
        meta["signal_norm"] = f"p{normalize_percentile:g}"
        meta["signal_norm_divisors"] = ",".join(f"{v:.8g}" for v in divisors)
    else:
        divisors = None

    aux_dim = records[0].aux.shape[0] if records else 0
    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}\t{meta[key]}\n")
        aux_cols = [f"aux{i}" for i in range(aux_dim)]
        fh.write("\t".join(["gene_id", "chromosome", "tss", "expression", "seq_file", "sig_file"] + aux_cols) + "\n")
        for rec in sorted(records, key=lambda r: r.gene_id):
            seq_rel = f"seq/{rec.gene_id}.txt"
            sig_rel = f"sig/{rec.gene_id}.prsg"
            with open(out_dir / seq_rel, "w") as sfh:
                sfh.write(_decode_one_hot(rec.X))
            S = rec.S if divisors is None else (rec.S / divisors).astype(np.float32)
            _write_signal_file(out_dir / sig_rel, S)
            cols = [rec.gene_id, rec.chromosome, str(rec.tss), f"{rec.y:.8g}", seq_rel, sig_rel]
            cols += [f"{v:.8g}" for v in rec.aux]
            fh.write("\t".join(cols) + "\n")
    return manifest


def read_manifest_metadata(manifest_path) -> dict[str, str]:
    meta: dict[str, str] = {}
    with open(manifest_path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "\t" in body:
                key, value = body.split("\t", 1)
                meta[key] = value
    return meta


def load_dataset(manifest_path) -> list[GeneRecord]:
    """Load records listed in a manifest; validates shapes and values."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records: list[GeneRecord] = []
    seen: set[str] = set()
    length = tracks = None
    with open(manifest_path) as fh:
        header = None
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                expected = ["gene_id", "chromosome", "tss", "expression", "seq_file", "sig_file"]
                if header[: len(expected)] != expected:
                    raise FormatError(
                        f"manifest header must start with {expected}", path=manifest_path
                    )
                continue
            cols = line.split("\t")
            if len(cols) != len(header):
                raise FormatError(
                    f"line {lineno}: expected {len(header)} columns, got {len(cols)}",
                    path=manifest_path,
                )
            gene_id, chrom, tss, expr, seq_rel, sig_rel = cols[:6]
            if gene_id in seen:
                raise FormatError(f"duplicate gene_id {gene_id!r}", path=manifest_path)
            seen.add(gene_id)
            with open(base / seq_rel) as sfh:
                seq = sfh.read()
            if "\n" in seq or "\r" in seq:
                raise FormatError("sequence file contains newlines", path=base / seq_rel)
            X = encode_sequence(seq)
            S = _read_signal_file(base / sig_rel)
            if S.shape[0] != X.shape[0]:
                raise FormatError(
                    f"signal rows {S.shape[0]} != sequence length {X.shape[0]}",
                    path=base / sig_rel,
                )
            if not np.all(np.isfinite(S)):
                raise FormatError("non-finite signal values", path=base / sig_rel)
            if np.any(S < 0):
                raise FormatError("negative signal values", path=base / sig_rel)
            if length is None:
                length, tracks = X.shape[0], S.shape[1]
            elif (X.shape[0], S.shape[1]) != (length, tracks):
                raise FormatError(
                    f"inconsistent dims for {gene_id}: ({X.shape[0]},{S.shape[1]})"
                    f" vs dataset ({length},{tracks})",
                    path=manifest_path,
                )
            aux = np.array([float(v) for v in cols[6:]], dtype=np.float32)
            records.append(
                GeneRecord(gene_id, chrom, int(tss), X, S, float(expr), aux)
            )
    return records
