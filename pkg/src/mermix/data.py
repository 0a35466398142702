"""Utterance feature containers, the MEF1 binary format, and synthetic corpora.

MEF1 byte layout (all integers little-endian):

    header:  magic b"MEF1" | endianness byte 0x01 | record count u32
    record:  uid length u16 | uid UTF-8 bytes | session u8 | emotion u8
             | modality u8 | T u32 | C u32 | T*C float32 values, row-major

Feature files hold one audio (modality 0) and one text (modality 1) record
per utterance, with matching emotion and session. Model checkpoints reuse
the same record framing with parameter names as uids (modality encodes the
array rank there). Values are float32 on disk and widened to float64 in
memory; the byte layout carries no checksum, so integrity checking is
structural (framing, enums, exact end-of-file alignment).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAGIC = b"MEF1"
ENDIAN_BYTE = 0x01
MODALITY_AUDIO = 0
MODALITY_TEXT = 1

# Emotion index convention for 4-class corpora; "excited" is folded into
# happy by the feature exporter before anything reaches this layer.
CLASS_NAMES_4 = ["angry", "happy", "sad", "neutral"]

SESSIONS = (1, 2, 3, 4, 5)


class FormatError(ValueError):
    """A byte stream does not satisfy the MEF1 contract."""


@dataclass
class Record:
    """One serialized tensor: an utterance modality or a named parameter."""

    uid: str
    session: int
    emotion: int
    modality: int
    values: np.ndarray  # (T, C) float32


def write_records(records: Sequence[Record], path: str) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<B", ENDIAN_BYTE)
    blob += struct.pack("<I", len(records))
    seen: set[tuple[str, int]] = set()
    for i, rec in enumerate(records):
        uid_bytes = rec.uid.encode("utf-8")
        if len(uid_bytes) > 0xFFFF:
            raise FormatError(f"record {i}: uid longer than 65535 bytes")
        key = (rec.uid, rec.modality)
        if key in seen:
            raise FormatError(f"record {i}: duplicate key {key}")
        seen.add(key)
        values = np.ascontiguousarray(rec.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise FormatError(f"record {i}: values must be (T, C) with T,C >= 1")
        for name, v in (("session", rec.session), ("emotion", rec.emotion), ("modality", rec.modality)):
            if not 0 <= v <= 0xFF:
                raise FormatError(f"record {i}: {name} {v} does not fit in a byte")
        blob += struct.pack("<H", len(uid_bytes))
        blob += uid_bytes
        blob += struct.pack("<BBB", rec.session, rec.emotion, rec.modality)
        blob += struct.pack("<II", values.shape[0], values.shape[1])
        blob += values.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def read_records(path: str, allowed_modalities: Sequence[int] = (0, 1)) -> list[Record]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 9:
        raise FormatError("truncated header")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    if blob[4] != ENDIAN_BYTE:
        raise FormatError(f"bad endianness byte {blob[4]:#x}")
    (count,) = struct.unpack_from("<I", blob, 5)
    pos = 9
    records: list[Record] = []
    seen: set[tuple[str, int]] = set()
    for i in range(count):
        try:
            (uid_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            uid = blob[pos : pos + uid_len].decode("utf-8")
            if pos + uid_len > len(blob):
                raise FormatError(f"record {i}: truncated uid")
            pos += uid_len
            session, emotion, modality = struct.unpack_from("<BBB", blob, pos)
            pos += 3
            t, c = struct.unpack_from("<II", blob, pos)
            pos += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"record {i}: truncated or malformed header ({exc})") from exc
        if modality not in allowed_modalities:
            raise FormatError(f"record {i}: modality {modality} not in {tuple(allowed_modalities)}")
        if t < 1 or c < 1:
            raise FormatError(f"record {i}: empty tensor shape ({t}, {c})")
        nbytes = t * c * 4
        if pos + nbytes > len(blob):
            raise FormatError(f"record {i}: truncated values, need {nbytes} bytes")
        values = np.frombuffer(blob, dtype="<f4", count=t * c, offset=pos).reshape(t, c)
        pos += nbytes
        key = (uid, modality)
        if key in seen:
            raise FormatError(f"record {i}: duplicate key {key}")
        seen.add(key)
        records.append(Record(uid, session, emotion, modality, values.copy()))
    if pos != len(blob):
        raise FormatError(f"trailing bytes after final record ({len(blob) - pos} extra)")
    return records


@dataclass
class Sample:
    """One utterance: paired audio/text feature sequences and a label."""

    uid: str
    session: int
    label: int
    audio: np.ndarray  # (T_a, C) float64
    text: np.ndarray  # (T_t, C) float64


@dataclass
class Dataset:
    samples: list[Sample]
    num_emotions: int
    class_names: list[str]

    def __post_init__(self) -> None:
        if self.num_emotions < 2:
            raise ValueError(f"need at least 2 emotion classes, got {self.num_emotions}")
        if len(self.class_names) != self.num_emotions:
            raise ValueError("class_names must have one entry per emotion")

    def sessions(self) -> list[int]:
        return sorted({s.session for s in self.samples})

    def class_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in range(self.num_emotions)}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def summary(self) -> dict:
        per_session: dict[int, int] = {}
        for s in self.samples:
            per_session[s.session] = per_session.get(s.session, 0) + 1
        return {
            "num_samples": len(self.samples),
            "num_emotions": self.num_emotions,
            "class_names": list(self.class_names),
            "class_counts": {self.class_names[c]: n for c, n in self.class_counts().items()},
            "session_counts": {str(k): per_session[k] for k in sorted(per_session)},
        }


def default_class_names(num_emotions: int) -> list[str]:
    if num_emotions == 4:
        return list(CLASS_NAMES_4)
    return [f"class{i}" for i in range(num_emotions)]


def write_features(dataset: Dataset, path: str) -> None:
    records: list[Record] = []
    for sample in dataset.samples:
        if sample.session not in SESSIONS:
            raise FormatError(f"sample {sample.uid}: session {sample.session} not in 1..5")
        if not 0 <= sample.label < dataset.num_emotions:
            raise FormatError(f"sample {sample.uid}: label {sample.label} out of range")
        records.append(Record(sample.uid, sample.session, sample.label, MODALITY_AUDIO, sample.audio))
        records.append(Record(sample.uid, sample.session, sample.label, MODALITY_TEXT, sample.text))
    write_records(records, path)


def read_features(path: str, num_emotions: int | None = None) -> Dataset:
    records = read_records(path, allowed_modalities=(MODALITY_AUDIO, MODALITY_TEXT))
    by_uid: dict[str, dict[int, tuple[int, Record]]] = {}
    order: list[str] = []
    for i, rec in enumerate(records):
        if rec.session not in SESSIONS:
            raise FormatError(f"record {i}: session {rec.session} not in 1..5")
        slot = by_uid.setdefault(rec.uid, {})
        if not slot:
            order.append(rec.uid)
        slot[rec.modality] = (i, rec)
    samples: list[Sample] = []
    for uid in order:
        slot = by_uid[uid]
        if MODALITY_AUDIO not in slot or MODALITY_TEXT not in slot:
            (i, rec), = slot.values()
            raise FormatError(f"record {i}: utterance {uid!r} is missing its paired modality")
        ia, audio = slot[MODALITY_AUDIO]
        it, text = slot[MODALITY_TEXT]
        if audio.emotion != text.emotion or audio.session != text.session:
            raise FormatError(
                f"record {max(ia, it)}: utterance {uid!r} has mismatched emotion/session across modalities"
            )
        samples.append(
            Sample(
                uid=uid,
                session=audio.session,
                label=audio.emotion,
                audio=audio.values.astype(np.float64),
                text=text.values.astype(np.float64),
            )
        )
    if num_emotions is None:
        num_emotions = max((s.label for s in samples), default=1) + 1
        num_emotions = max(num_emotions, 2)
    return Dataset(samples, num_emotions, default_class_names(num_emotions))


# -- model checkpoints: same framing, parameter names as uids ----------------

CONFIG_UID = "__fusion_config__"
_RANK_TO_MODALITY = {1: 1, 2: 2}


def write_checkpoint(path: str, config_vector: Sequence[float], params: dict[str, np.ndarray]) -> None:
    records = [Record(CONFIG_UID, 1, 0, 1, np.asarray(config_vector, dtype=np.float32)[None, :])]
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim not in _RANK_TO_MODALITY:
            raise FormatError(f"parameter {name!r} must be 1-D or 2-D, got shape {arr.shape}")
        stored = arr[None, :] if arr.ndim == 1 else arr
        records.append(Record(name, 1, 0, _RANK_TO_MODALITY[arr.ndim], stored))
    write_records(records, path)


def read_checkpoint(path: str) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    records = read_records(path, allowed_modalities=(1, 2))
    if not records or records[0].uid != CONFIG_UID:
        raise FormatError(f"checkpoint must start with a {CONFIG_UID} record")
    config_vector = records[0].values.astype(np.float64)[0]
    params: dict[str, np.ndarray] = {}
    for rec in records[1:]:
        arr = rec.values.astype(np.float64)
        params[rec.uid] = arr[0] if rec.modality == 1 else arr
    return config_vector, params


# -- batching -----------------------------------------------------------------


@dataclass
class Batch:
    """Padded modality tensors with {0,1} validity masks and emotion labels."""

    audio: np.ndarray  # (B, T_a, C)
    audio_mask: np.ndarray  # (B, T_a)
    text: np.ndarray  # (B, T_t, C)
    text_mask: np.ndarray  # (B, T_t)
    labels: np.ndarray  # (B,) int64
    samples: list[Sample]

    @property
    def size(self) -> int:
        return len(self.labels)


def _pad_stack(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    t_max = max(s.shape[0] for s in seqs)
    dim = seqs[0].shape[1]
    out = np.zeros((len(seqs), t_max, dim), dtype=np.float64)
    mask = np.zeros((len(seqs), t_max), dtype=np.float64)
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
        mask[i, : s.shape[0]] = 1.0
    return out, mask


def make_batch(samples: Sequence[Sample]) -> Batch:
    if not samples:
        raise ValueError("cannot batch zero samples")
    dims = {s.audio.shape[1] for s in samples} | {s.text.shape[1] for s in samples}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dims in batch: {sorted(dims)}")
    audio, audio_mask = _pad_stack([s.audio for s in samples])
    text, text_mask = _pad_stack([s.text for s in samples])
    labels = np.asarray([s.label for s in samples], dtype=np.int64)
    return Batch(audio, audio_mask, text, text_mask, labels, list(samples))


# -- synthetic corpora ----------------------------------------------------------

MODE_ADDITIVE = "additive"
MODE_XOR = "xor"


@dataclass
class SynthConfig:
    """Controls for the class-conditional Gaussian corpus generator.

    Additive mode places each class at a fixed orthonormal mean direction per
    modality, scaled by that modality's informativeness. Xor mode hides one
    latent bit in each modality: with two classes the label is the parity of
    the bit pair, so neither modality alone carries any label information;
    with four classes the label is the ordered bit pair 2a+b, so one modality
    alone can at best halve the candidate set (50% ceiling).
    """

    num_emotions: int = 4
    feature_dim: int = 8
    t_min: int = 3
    t_max: int = 6
    audio_strength: float = 1.0
    text_strength: float = 1.0
    noise: float = 1.0
    per_class_per_session: int = 10
    mode: str = MODE_ADDITIVE

    def __post_init__(self) -> None:
        if not 0.0 <= self.audio_strength <= 1.0 or not 0.0 <= self.text_strength <= 1.0:
            raise ValueError("modality strengths must lie in [0, 1]")
        if self.noise <= 0.0:
            raise ValueError("noise scale must be positive")
        if self.t_min < 1 or self.t_max < self.t_min:
            raise ValueError(f"bad sequence length range [{self.t_min}, {self.t_max}]")
        if self.num_emotions < 2:
            raise ValueError("need at least 2 classes")
        if self.mode not in (MODE_ADDITIVE, MODE_XOR):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_XOR and self.num_emotions not in (2, 4):
            raise ValueError("xor mode requires 2 classes (bit parity) or 4 (ordered bit pair)")
        if self.num_emotions > self.feature_dim:
            raise ValueError("feature_dim must be >= num_emotions for orthogonal class means")
        if self.per_class_per_session < 1:
            raise ValueError("per_class_per_session must be >= 1")


def orthonormal_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    """Deterministic orthonormal row set from a seeded Gaussian draw (QR)."""
    raw = rng.standard_normal((dim, rows))
    q, r = np.linalg.qr(raw)
    # Fix the sign convention so the result is unique for the draw.
    q = q * np.sign(np.diag(r))[None, :]
    return q.T.copy()


def _frames(rng: np.random.Generator, t: int, mean: np.ndarray, noise: float) -> np.ndarray:
    return mean[None, :] + noise * rng.standard_normal((t, mean.shape[0]))


def synth_generate(cfg: SynthConfig, seed: int) -> Dataset:
    """Deterministically generate a 5-session dataset from the config and seed."""
    rng = np.random.default_rng(seed)
    e, c = cfg.num_emotions, cfg.feature_dim
    audio_means = orthonormal_rows(rng, e, c) * cfg.audio_strength
    text_means = orthonormal_rows(rng, e, c) * cfg.text_strength

    samples: list[Sample] = []
    counter = 0
    for session in SESSIONS:
        for label in range(e):
            for _ in range(cfg.per_class_per_session):
                if cfg.mode == MODE_XOR:
                    if cfg.num_emotions == 2:
                        bit_a = int(rng.integers(0, 2))
                        bit_t = bit_a ^ label
                    else:
                        bit_a, bit_t = divmod(label, 2)
                    mu_a = (2 * bit_a - 1) * audio_means[0]
                    mu_t = (2 * bit_t - 1) * text_means[1]
                else:
                    mu_a = audio_means[label]
                    mu_t = text_means[label]
                t_a = int(rng.integers(cfg.t_min, cfg.t_max + 1))
                t_t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
                audio = _frames(rng, t_a, mu_a, cfg.noise)
                text = _frames(rng, t_t, mu_t, cfg.noise)
                samples.append(
                    Sample(
                        uid=f"s{session}c{label}u{counter:05d}",
                        session=session,
                        label=label,
                        audio=audio,
                        text=text,
                    )
                )
                counter += 1
    return Dataset(samples, e, default_class_names(e))


def xor_latent_bits(sample: Sample, cfg: SynthConfig, seed: int) -> tuple[int, int]:
    """Recover the (audio, text) latent bit pair via the generator's own directions."""
    rng = np.random.default_rng(seed)
    audio_dir = orthonormal_rows(rng, cfg.num_emotions, cfg.feature_dim)[0]
    text_dir = orthonormal_rows(rng, cfg.num_emotions, cfg.feature_dim)[1]
    bit_a = int(sample.audio.sum(axis=0) @ audio_dir > 0)
    bit_t = int(sample.text.sum(axis=0) @ text_dir > 0)
    return bit_a, bit_t


# -- splits ---------------------------------------------------------------------


def split_by_session(dataset: Dataset) -> list[tuple[list[Sample], list[Sample]]]:
    """Five leave-one-session-out folds: fold k trains off-session, tests session k."""
    present = set(dataset.sessions())
    missing = [s for s in SESSIONS if s not in present]
    if missing:
        raise ValueError(f"dataset is missing sessions {missing}; cannot form 5 folds")
    folds = []
    for held_out in SESSIONS:
        train = [s for s in dataset.samples if s.session != held_out]
        test = [s for s in dataset.samples if s.session == held_out]
        folds.append((train, test))
    return folds


def shuffle_split(
    samples: Sequence[Sample], n_train: int, n_test: int, rng: np.random.Generator
) -> tuple[list[Sample], list[Sample]]:
    """Seeded disjoint train/test split of a sample list (fold-shaped, not session-based)."""
    if n_train + n_test > len(samples):
        raise ValueError(f"split {n_train}+{n_test} exceeds {len(samples)} samples")
    order = rng.permutation(len(samples))
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train : n_train + n_test]]
    return train, test
