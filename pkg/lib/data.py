"""Synthetic corpus generation and corpus file I/O.

Each token emits a run of frames around its class mean plus Gaussian noise;
silence frames (the zero vector) pad the ends and always separate repeated
tokens. Distortions make the acoustics harder in three ways:

- frame_drop_rate removes emission frames (deletion-type difficulty)
- spurious_frame_rate inserts frames of a random other class (insertion-type)
- confusion_rate blends a token's mean with another class (substitution-type)

Corpus binary format (little-endian)::

    magic b"CTCA" | version u16 | count u32
    per utterance:
        id_len u32 | id utf-8 | T u32 | D u32 | T*D float64 row-major
        | L u32 | L int32 token ids
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .config import SynthSpec
from .ctc import TokenSequence, is_feasible
from .rng import SeededRng

log = logging.getLogger(__name__)

MAGIC = b"CTCA"
VERSION = 1
MAX_ATTEMPTS = 100


class DataError(RuntimeError):
    """The generator could not produce a usable utterance."""
    pass


class CorpusFormatError(ValueError):
    """Malformed corpus file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # T x D_in
    label: TokenSequence

    @property
    def frames(self) -> int:
        return self.features.shape[0]


@dataclass
class GenerationReport:
    utterances: int = 0
    rejected: int = 0
    frames: int = 0


def class_means(spec: SynthSpec) -> np.ndarray:
    """Row 0 is silence (zeros); rows 1..|V| are class means of norm ``class_separation``."""
    rng = SeededRng(spec.seed, "corpus").derive("class-means")
    means = rng.normal(1.0, (spec.vocab_size, spec.feature_dim))
    means *= spec.class_separation / np.linalg.norm(means, axis=1, keepdims=True)
    return np.vstack([np.zeros((1, spec.feature_dim)), means])


def _other_token(token: int, vocab_size: int, rng: SeededRng) -> int:
    if vocab_size == 1:
        return token
    other = rng.integer(1, vocab_size - 1)
    return other if other < token else other + 1


def _emit(label: TokenSequence, spec: SynthSpec, means: np.ndarray, rng: SeededRng) -> np.ndarray:
    rows: List[np.ndarray] = [means[0]] * rng.integer(0, 2)
    for idx, token in enumerate(label):
        if idx > 0 and (token == label[idx - 1] or rng.uniform(1)[0] < 0.5):
            rows.append(means[0])
        mean = means[token]
        if rng.uniform(1)[0] < spec.confusion_rate:
            mean = 0.5 * (mean + means[_other_token(token, spec.vocab_size, rng)])
        for _ in range(rng.integer(spec.frames_per_token_min, spec.frames_per_token_max)):
            if rng.uniform(1)[0] < spec.frame_drop_rate:
                continue
            rows.append(mean)
            if rng.uniform(1)[0] < spec.spurious_frame_rate:
                rows.append(means[_other_token(token, spec.vocab_size, rng)])
    rows += [means[0]] * rng.integer(0, 2)
    if not rows:
        return np.zeros((0, spec.feature_dim))
    clean = np.vstack(rows)
    return clean + rng.normal(spec.noise_sigma, clean.shape)


def generate_with_report(spec: SynthSpec) -> Tuple[List[Utterance], GenerationReport]:
    """Generate ``spec.num_utterances`` utterances; a pure function of ``spec``."""
    spec.validate()
    means = class_means(spec)
    root = SeededRng(spec.seed, "corpus")
    report = GenerationReport()
    corpus = []
    for i in range(spec.num_utterances):
        rng = root.derive(f"{spec.split}/{i}")
        for _ in range(MAX_ATTEMPTS):
            length = rng.integer(spec.label_len_min, spec.label_len_max)
            label = tuple(rng.integer(1, spec.vocab_size) for _ in range(length))
            features = _emit(label, spec, means, rng)
            if features.shape[0] >= 1 and is_feasible(features.shape[0], label):
                break
            report.rejected += 1
        else:
            raise DataError(
                f"{spec.split}/{i}: no feasible utterance after {MAX_ATTEMPTS} attempts "
                f"(frame_drop_rate={spec.frame_drop_rate})"
            )
        corpus.append(Utterance(f"{spec.split}-{i:05d}", features, label))
        report.frames += features.shape[0]
    report.utterances = len(corpus)
    if report.rejected:
        log.warning("%s: rejected and regenerated %d utterances", spec.split, report.rejected)
    return corpus, report


def generate(spec: SynthSpec) -> List[Utterance]:
    return generate_with_report(spec)[0]


def save_corpus(path: Path, corpus: Sequence[Utterance]) -> None:
    """Write a corpus in the binary format above."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [struct.pack("<4sHI", MAGIC, VERSION, len(corpus))]
    for utt in corpus:
        ident = utt.id.encode("utf-8")
        frames, dim = utt.features.shape
        parts.append(struct.pack("<I", len(ident)) + ident)
        parts.append(struct.pack("<II", frames, dim))
        parts.append(np.ascontiguousarray(utt.features, dtype="<f8").tobytes())
        parts.append(struct.pack("<I", len(utt.label)))
        parts.append(np.asarray(utt.label, dtype="<i4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class ByteReader:
    """Cursor over a byte buffer that reports the offset of truncations."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CorpusFormatError(f"truncated {what}", self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_corpus(data: bytes) -> List[Utterance]:
    reader = ByteReader(data)
    magic, version, count = reader.unpack("<4sHI", "header")
    if magic != MAGIC:
        raise CorpusFormatError(f"bad magic bytes {magic!r}", 0)
    if version != VERSION:
        raise CorpusFormatError(f"unsupported version {version}", 4)

    corpus = []
    dim_seen = None
    for _ in range(count):
        (id_len,) = reader.unpack("<I", "utterance id length")
        at = reader.offset
        try:
            ident = reader.take(id_len, "utterance id").decode("utf-8")
        except UnicodeDecodeError:
            raise CorpusFormatError("utterance id is not utf-8", at)
        at = reader.offset
        frames, dim = reader.unpack("<II", "frame header")
        if dim_seen is not None and dim != dim_seen:
            raise CorpusFormatError(f"{ident}: feature dimension {dim} != {dim_seen}", at)
        dim_seen = dim
        raw = reader.take(8 * frames * dim, f"{ident} features")
        features = np.frombuffer(raw, dtype="<f8").reshape(frames, dim).astype(np.float64)
        (length,) = reader.unpack("<I", "label length")
        at = reader.offset
        label = tuple(int(k) for k in np.frombuffer(reader.take(4 * length, f"{ident} label"), dtype="<i4"))
        if any(k <= 0 for k in label):
            raise CorpusFormatError(f"{ident}: label contains a non-token id", at)
        corpus.append(Utterance(ident, features, label))
    if reader.offset != len(data):
        raise CorpusFormatError("trailing bytes after last utterance", reader.offset)
    return corpus


def load_corpus(path: Path) -> List[Utterance]:
    with open(path, "rb") as f:
        return parse_corpus(f.read())


def write_labels(path: Path, items: Iterable[Tuple[str, Sequence[int]]]) -> None:
    """Plain-text labels: one ``utt_id tok tok ...`` line per utterance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join([utt_id] + [str(k) for k in tokens]) for utt_id, tokens in items]
    with open(path, "w") as f:
        f.write("".join(line + "\n" for line in lines))


def read_labels(path: Path) -> List[Tuple[str, TokenSequence]]:
    items = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            try:
                items.append((fields[0], tuple(int(k) for k in fields[1:])))
            except ValueError:
                raise CorpusFormatError(f"line {lineno}: token ids must be integers", lineno)
    return items
