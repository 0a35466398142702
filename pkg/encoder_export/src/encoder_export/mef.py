"""Writer for the MEF1 feature container (the wire contract with the consumer).

Layout, little-endian throughout: header ``b"MEF1"`` + endianness byte 0x01
+ record count u32; per record uid (u16 length + UTF-8 bytes), session u8,
emotion u8, modality u8 (0 audio, 1 text), T u32, C u32, then T*C float32
values row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MEF1"
ENDIAN_BYTE = 0x01
MODALITY_AUDIO = 0
MODALITY_TEXT = 1


@dataclass
class Record:
    uid: str
    session: int
    emotion: int
    modality: int
    values: np.ndarray  # (T, C), stored as float32


def write_mef(records: list[Record], path: str) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<B", ENDIAN_BYTE)
    blob += struct.pack("<I", len(records))
    seen: set[tuple[str, int]] = set()
    for i, rec in enumerate(records):
        uid_bytes = rec.uid.encode("utf-8")
        if len(uid_bytes) > 0xFFFF:
            raise ValueError(f"record {i}: uid longer than 65535 bytes")
        key = (rec.uid, rec.modality)
        if key in seen:
            raise ValueError(f"record {i}: duplicate key {key}")
        seen.add(key)
        if not 1 <= rec.session <= 5:
            raise ValueError(f"record {i}: session {rec.session} not in 1..5")
        if rec.modality not in (MODALITY_AUDIO, MODALITY_TEXT):
            raise ValueError(f"record {i}: bad modality {rec.modality}")
        values = np.ascontiguousarray(rec.values, dtype=np.float32)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"record {i}: values must be (T, C), got {values.shape}")
        blob += struct.pack("<H", len(uid_bytes))
        blob += uid_bytes
        blob += struct.pack("<BBB", rec.session, rec.emotion, rec.modality)
        blob += struct.pack("<II", values.shape[0], values.shape[1])
        blob += values.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)
