"""Export orchestration: manifest in, MEF1 + JSON summary + exceptions out."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

from .encoders import AudioEncoder, TextEncoder, read_wav_16k_mono
from .manifest import CLASS_NAMES, ManifestRow, merged_label
from .mef import MODALITY_AUDIO, MODALITY_TEXT, Record, write_mef

MODALITIES = ("text", "audio", "both")


@dataclass
class ExportResult:
    records: int
    utterances: int
    skipped: list[dict] = field(default_factory=list)
    class_counts: dict[str, int] = field(default_factory=dict)
    session_counts: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "records": self.records,
            "utterances": self.utterances,
            "class_counts": self.class_counts,
            "session_counts": self.session_counts,
            "skipped": len(self.skipped),
        }


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def run_export(
    rows: list[ManifestRow],
    out_path: str,
    modality: str,
    text_encoder: TextEncoder | None,
    audio_encoder: AudioEncoder | None,
    pooled: bool = False,
) -> ExportResult:
    """Encode every usable manifest row and write one MEF1 file.

    A row is skipped (with a warning and an exceptions entry) when its raw
    label is outside the exportable set, its transcript is missing while
    text is requested, or its audio cannot be read while audio is requested.
    Skips drop the whole utterance so the output keeps the one-audio-one-text
    pairing invariant.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
    want_text = modality in ("text", "both")
    want_audio = modality in ("audio", "both")
    if want_text and text_encoder is None:
        raise ValueError("text export requested but no text encoder configured")
    if want_audio and audio_encoder is None:
        raise ValueError("audio export requested but no audio encoder configured")

    records: list[Record] = []
    result = ExportResult(records=0, utterances=0)
    class_counts = {name: 0 for name in CLASS_NAMES}
    session_counts: dict[str, int] = {}

    for row in rows:
        label = merged_label(row.raw_label)
        if label is None:
            result.skipped.append({"uid": row.uid, "reason": f"label {row.raw_label!r} not exportable"})
            _warn(f"{row.uid}: skipping, label {row.raw_label!r} not exportable")
            continue
        if want_text and not row.transcript:
            result.skipped.append({"uid": row.uid, "reason": "missing transcript"})
            _warn(f"{row.uid}: skipping, missing transcript")
            continue
        waveform = None
        if want_audio:
            try:
                waveform = read_wav_16k_mono(row.audio_path)
            except (OSError, ValueError) as exc:
                result.skipped.append({"uid": row.uid, "reason": f"unreadable audio: {exc}"})
                _warn(f"{row.uid}: skipping, unreadable audio ({exc})")
                continue

        utterance_records: list[Record] = []
        if want_audio:
            features = audio_encoder.encode(waveform)
            if pooled:
                features = features.mean(axis=0, keepdims=True)
            utterance_records.append(Record(row.uid, row.session, label, MODALITY_AUDIO, features))
        if want_text:
            features = text_encoder.encode(row.transcript)
            if pooled:
                features = features.mean(axis=0, keepdims=True)
            utterance_records.append(Record(row.uid, row.session, label, MODALITY_TEXT, features))

        records.extend(utterance_records)
        result.utterances += 1
        class_counts[CLASS_NAMES[label]] += 1
        session_counts[str(row.session)] = session_counts.get(str(row.session), 0) + 1

    write_mef(records, out_path)
    result.records = len(records)
    result.class_counts = class_counts
    result.session_counts = {k: session_counts[k] for k in sorted(session_counts)}

    with open(out_path + ".summary.json", "w") as fh:
        json.dump(result.summary(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_path + ".exceptions.json", "w") as fh:
        json.dump(result.skipped, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return result
