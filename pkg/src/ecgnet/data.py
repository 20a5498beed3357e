"""Records, label vocabulary, dataset persistence, resampling, and batching.

The on-disk form of a dataset is a pair of files derived from one base path:

* ``<base>.ecgd``    little-endian binary. Header: magic ``ECGD``, format
  version u32, record count u32, channel count u32, record length u32.
  Then per record: channels x length float32 voltages (channel-major)
  followed by a u32 label bitmask.
* ``<base>.manifest.json``  vocabulary (names and synonym lists, in bit
  order), per-class counts, generator seed or source note, format version.

The loader verifies the two files against each other: recomputed per-class
counts must equal the manifest's counts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import (ConfigError, FormatError, IntegrityError, LabelError,
                     TruncatedFileError, VersionError)
from .rng import stream

FORMAT_VERSION = 1
MAGIC = b"ECGD"
SAMPLE_RATE_HZ = 250
N_LEADS = 12
RECORD_LENGTH = 2500


@dataclass(frozen=True)
class EcgRecord:
    """One 12-lead, 10-second recording at 250 Hz with its label set."""

    voltages: np.ndarray          # [12, 2500] float32 millivolts
    labels: frozenset
    source_id: str = ""
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        v = self.voltages
        if v.shape != (N_LEADS, RECORD_LENGTH):
            raise ConfigError(f"record voltages must be [{N_LEADS}, {RECORD_LENGTH}], "
                              f"got {v.shape}")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ConfigError(f"sample rate must be {SAMPLE_RATE_HZ} Hz")


class LabelVocabulary:
    """Ordered class names with synonym lists; bit position = list index."""

    def __init__(self, names: Sequence[str], synonyms: Optional[dict] = None):
        names = list(names)
        if len(set(names)) != len(names):
            raise LabelError("vocabulary names must be unique")
        if len(names) > 32:
            raise LabelError("label bitmask is 32 bits wide")
        self.names = names
        self.synonyms = {name: list((synonyms or {}).get(name, [name.replace("_", " ")]))
                         for name in names}
        self._index = {name: i for i, name in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return (isinstance(other, LabelVocabulary)
                and self.names == other.names and self.synonyms == other.synonyms)

    def index(self, name: str) -> int:
        if name not in self._index:
            raise LabelError(f"unknown class {name!r}")
        return self._index[name]

    def encode(self, labels: Iterable[str]) -> int:
        mask = 0
        for name in labels:
            mask |= 1 << self.index(name)
        return mask

    def decode(self, mask: int) -> frozenset:
        return frozenset(name for i, name in enumerate(self.names) if mask >> i & 1)

    def to_vector(self, labels: Iterable[str], dtype=np.float32) -> np.ndarray:
        vec = np.zeros(len(self.names), dtype=dtype)
        for name in labels:
            vec[self.index(name)] = 1.0
        return vec

    def to_dict(self) -> dict:
        return {"names": list(self.names), "synonyms": dict(self.synonyms)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelVocabulary":
        return cls(d["names"], d.get("synonyms"))


# Table-1-style class inventory, plus the two rhythm classes the generator
# needs for rate semantics (bradycardia / ventricular tachycardia).
DEFAULT_CLASS_SYNONYMS = {
    "complete_heart_block": [
        "complete heart block", "3rd degree av block", "complete av block",
        "third degree atrioventricular block"],
    "avnrt": [
        "atrioventricular nodal reentry tachycardia", "avnrt",
        "av nodal reentrant tachycardia"],
    "mobitz_i": [
        "2nd degree av block (mobitz i)", "second degree av block (mobitz i)",
        "2nd degree av block, mobitz i", "mobitz i", "wenckebach"],
    "atrial_fibrillation": ["atrial fibrillation", "afib", "a-fib"],
    "ectopic_atrial_rhythm": ["ectopic atrial rhythm", "low atrial rhythm"],
    "first_degree_avb": [
        "1st degree av block", "first degree av block",
        "first degree atrioventricular block"],
    "sinus_rhythm": ["sinus rhythm", "normal sinus rhythm"],
    "atrial_flutter": ["atrial flutter", "aflutter"],
    "pac": ["premature atrial complexes", "premature atrial complex",
            "premature atrial contraction"],
    "pvc": ["premature ventricular complexes", "premature ventricular complex",
            "premature ventricular contraction", "pvcs", "pvc"],
    "fusion_complex": ["fusion complexes", "fusion complex", "fusion beats"],
    "bigeminy": ["ventricular bigeminy", "bigeminy"],
    "sinus_bradycardia": ["sinus bradycardia"],
    "ventricular_tachycardia": ["ventricular tachycardia", "v-tach"],
}


def default_vocabulary() -> LabelVocabulary:
    return LabelVocabulary(list(DEFAULT_CLASS_SYNONYMS), DEFAULT_CLASS_SYNONYMS)


def extract_labels(diagnosis_text: str, vocab: LabelVocabulary) -> frozenset:
    """Case-insensitive substring matching of synonyms against free text.

    Longer synonyms match first and claim their span, so a specific phrase
    is never double-counted by a shorter synonym hiding inside it.
    """
    text = diagnosis_text.lower()
    if not text:
        return frozenset()
    pairs = [(syn.lower(), name)
             for name, syns in vocab.synonyms.items() for syn in syns]
    pairs.sort(key=lambda p: (-len(p[0]), p[0]))
    claimed: list = []
    found = set()
    for syn, name in pairs:
        start = 0
        while True:
            pos = text.find(syn, start)
            if pos < 0:
                break
            end = pos + len(syn)
            if not any(s < end and pos < e for s, e in claimed):
                claimed.append((pos, end))
                found.add(name)
            start = pos + 1
    return frozenset(found)


@dataclass
class Dataset:
    """Ordered records plus vocabulary and a provenance manifest."""

    records: list
    vocabulary: LabelVocabulary
    manifest: dict = field(default_factory=dict)

    @classmethod
    def build(cls, records: Sequence[EcgRecord], vocabulary: LabelVocabulary,
              source: str = "unspecified", generator_seed: Optional[int] = None) -> "Dataset":
        ds = cls(list(records), vocabulary, {})
        ds.manifest = {
            "format_version": FORMAT_VERSION,
            "source": source,
            "generator_seed": generator_seed,
            "class_counts": ds.class_counts(),
        }
        return ds

    def __len__(self):
        return len(self.records)

    def class_counts(self) -> dict:
        counts = {name: 0 for name in self.vocabulary.names}
        for rec in self.records:
            for label in rec.labels:
                counts[label] += 1
        return counts

    def verify_manifest(self) -> None:
        stored = self.manifest.get("class_counts", {})
        actual = self.class_counts()
        if {k: v for k, v in stored.items()} != actual:
            raise IntegrityError("manifest class counts disagree with records")

    def label_matrix(self, head_names: Optional[Sequence[str]] = None,
                     dtype=np.float32) -> np.ndarray:
        names = list(head_names) if head_names is not None else self.vocabulary.names
        mat = np.zeros((len(self.records), len(names)), dtype=dtype)
        for i, rec in enumerate(self.records):
            for j, name in enumerate(names):
                if name in rec.labels:
                    mat[i, j] = 1.0
        return mat


# ---------------------------------------------------------------------------
# persistence

def _paths(path) -> tuple:
    base = Path(path)
    if base.name.endswith(".ecgd"):
        base = base.with_name(base.name[:-5])
    return (base.with_name(base.name + ".ecgd"),
            base.with_name(base.name + ".manifest.json"))


def save_dataset(ds: Dataset, path) -> tuple:
    """Write ``<base>.ecgd`` and ``<base>.manifest.json``; returns both paths."""
    data_path, manifest_path = _paths(path)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    with open(data_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, len(ds.records),
                             N_LEADS, RECORD_LENGTH))
        for rec in ds.records:
            fh.write(np.ascontiguousarray(rec.voltages, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", ds.vocabulary.encode(rec.labels)))
    manifest = {
        "format_version": FORMAT_VERSION,
        "vocabulary": ds.vocabulary.to_dict(),
        **{k: v for k, v in ds.manifest.items() if k != "format_version"},
    }
    manifest.setdefault("class_counts", ds.class_counts())
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return data_path, manifest_path


def load_dataset(path) -> Dataset:
    """Read both files back and verify their mutual consistency."""
    data_path, manifest_path = _paths(path)
    if not manifest_path.exists():
        raise FormatError(f"missing manifest file {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(
            f"manifest format version {manifest.get('format_version')} unsupported")
    vocab = LabelVocabulary.from_dict(manifest["vocabulary"])

    raw = data_path.read_bytes()
    if len(raw) < 20:
        raise TruncatedFileError(f"{data_path} shorter than its header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{data_path} does not start with {MAGIC!r}")
    version, count, channels, length = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise VersionError(f"record file version {version} unsupported")
    if channels != N_LEADS or length != RECORD_LENGTH:
        raise FormatError(f"unexpected geometry {channels}x{length}")
    rec_bytes = channels * length * 4 + 4
    if len(raw) != 20 + count * rec_bytes:
        raise TruncatedFileError(
            f"{data_path} holds {len(raw)} bytes, expected {20 + count * rec_bytes}")

    stem = data_path.stem
    records = []
    offset = 20
    for i in range(count):
        volts = np.frombuffer(raw, dtype="<f4", count=channels * length,
                              offset=offset).reshape(channels, length).copy()
        offset += channels * length * 4
        mask, = struct.unpack_from("<I", raw, offset)
        offset += 4
        records.append(EcgRecord(voltages=volts, labels=vocab.decode(mask),
                                 source_id=f"{stem}#{i}"))
    ds = Dataset(records, vocab,
                 {k: v for k, v in manifest.items() if k != "vocabulary"})
    ds.verify_manifest()
    return ds


# ---------------------------------------------------------------------------
# resampling and splitting

@dataclass
class ResampleConfig:
    per_class_target: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.per_class_target < 0:
            raise ConfigError("per_class_target must be >= 0")


def resample_dataset(source: Dataset, config: ResampleConfig) -> Dataset:
    """Class-balance by preferentially drawing minority-class records.

    Sampling is without replacement. Classes are visited in ascending order
    of their source count (ties alphabetical); for each class, records
    bearing it are added at random until the class has ``per_class_target``
    members in the sample or no unused candidates remain. Records count
    toward every class they carry, so classes overlapping an earlier one may
    exceed the target.
    """
    if not source.records:
        raise ConfigError("cannot resample an empty dataset")
    rng = stream(config.seed, "resample")
    counts = source.class_counts()
    order = sorted(counts, key=lambda name: (counts[name], name))

    included: list = []
    included_set: set = set()
    in_sample = {name: 0 for name in counts}
    by_class = {name: [i for i, rec in enumerate(source.records) if name in rec.labels]
                for name in counts}
    for name in order:
        candidates = [i for i in by_class[name] if i not in included_set]
        perm = rng.permutation(len(candidates))
        for j in perm:
            if in_sample[name] >= config.per_class_target:
                break
            idx = candidates[j]
            included.append(idx)
            included_set.add(idx)
            for label in source.records[idx].labels:
                in_sample[label] += 1

    records = [source.records[i] for i in included]
    ds = Dataset.build(records, source.vocabulary, source="resampled",
                       generator_seed=source.manifest.get("generator_seed"))
    ds.manifest["resample"] = {"per_class_target": config.per_class_target,
                               "seed": config.seed}
    return ds


def split_dataset(ds: Dataset, fractions: Sequence[float], seed: int) -> tuple:
    """Deterministic shuffle then contiguous partition into three datasets."""
    if len(fractions) != 3:
        raise ConfigError("need exactly (train, val, test) fractions")
    if any(f <= 0 for f in fractions):
        raise ConfigError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    perm = stream(seed, "split").permutation(len(ds.records))
    n = len(ds.records)
    b1 = int(round(fractions[0] * n))
    b2 = int(round((fractions[0] + fractions[1]) * n))
    pieces = (perm[:b1], perm[b1:b2], perm[b2:])
    out = []
    for part_name, idxs in zip(("train", "val", "test"), pieces):
        part = Dataset.build([ds.records[i] for i in idxs], ds.vocabulary,
                             source=f"split:{part_name}",
                             generator_seed=ds.manifest.get("generator_seed"))
        part.manifest["split"] = {"part": part_name, "seed": seed,
                                  "fractions": list(fractions)}
        out.append(part)
    return tuple(out)


# ---------------------------------------------------------------------------
# batching

def batch_iterator(ds: Dataset, batch_size: int, seed: int, epoch: int,
                   head_names: Optional[Sequence[str]] = None,
                   dtype=np.float32) -> Iterator:
    """Yield (voltages [B, 12, 2500], labels [B, H]) tensor pairs.

    The record permutation is a pure function of (seed, epoch); every record
    appears exactly once per epoch and the final partial batch is kept.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not ds.records:
        return
    names = list(head_names) if head_names is not None else ds.vocabulary.names
    for name in names:
        if name not in ds.vocabulary:
            raise LabelError(f"head {name!r} not in dataset vocabulary")
    col_idx = [ds.vocabulary.index(n) for n in names]
    perm = stream(seed, "batch", epoch).permutation(len(ds.records))
    for start in range(0, len(perm), batch_size):
        idxs = perm[start:start + batch_size]
        volts = np.stack([ds.records[i].voltages for i in idxs]).astype(dtype)
        labels = np.stack([ds.vocabulary.to_vector(ds.records[i].labels, dtype)
                           for i in idxs])[:, col_idx]
        yield Tensor(volts), Tensor(np.ascontiguousarray(labels))
