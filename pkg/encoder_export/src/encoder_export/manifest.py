"""Corpus manifest: CSV rows of utterances with raw emotion labels.

Columns: utterance_id, session (1..5), emotion (raw label), audio_path,
transcript. Only the five raw labels below are exportable; "excited" folds
into "happy", giving the four-class index map shared with the consumer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

CLASS_NAMES = ["angry", "happy", "sad", "neutral"]
RAW_LABEL_MAP = {
    "angry": 0,
    "happy": 1,
    "excited": 1,
    "sad": 2,
    "neutral": 3,
}

REQUIRED_COLUMNS = ("utterance_id", "session", "emotion", "audio_path", "transcript")


@dataclass
class ManifestRow:
    uid: str
    session: int
    raw_label: str
    audio_path: str
    transcript: str


def read_manifest(path: str) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest is missing columns {missing}")
        for line_no, raw in enumerate(reader, start=2):
            uid = raw["utterance_id"].strip()
            if not uid:
                raise ValueError(f"manifest line {line_no}: empty utterance_id")
            if uid in seen:
                raise ValueError(f"manifest line {line_no}: duplicate utterance_id {uid!r}")
            seen.add(uid)
            try:
                session = int(raw["session"])
            except ValueError as exc:
                raise ValueError(f"manifest line {line_no}: bad session {raw['session']!r}") from exc
            if not 1 <= session <= 5:
                raise ValueError(f"manifest line {line_no}: session {session} not in 1..5")
            rows.append(
                ManifestRow(
                    uid=uid,
                    session=session,
                    raw_label=raw["emotion"].strip().lower(),
                    audio_path=raw["audio_path"].strip(),
                    transcript=raw["transcript"].strip(),
                )
            )
    return rows


def merged_label(raw_label: str) -> int | None:
    """Four-class index after the excited->happy merge; None if unusable."""
    return RAW_LABEL_MAP.get(raw_label)
