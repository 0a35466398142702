"""Auxiliary training batches: cross-modal recombination and same-class swaps.

The first builder re-pairs audio and text across the batch and labels each
new pair by the ordered (audio class, text class) combination. The second
swaps exactly one modality per sample for a donor of the same emotion so
the pair keeps its label while losing its semantic correspondence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Batch, Sample, make_batch


def combined_label(label_a: int, label_t: int, num_emotions: int) -> int:
    """Bijective encoding of an ordered class pair onto [0, num_emotions**2)."""
    if not 0 <= label_a < num_emotions:
        raise ValueError(f"audio label {label_a} out of range for {num_emotions} classes")
    if not 0 <= label_t < num_emotions:
        raise ValueError(f"text label {label_t} out of range for {num_emotions} classes")
    return label_a * num_emotions + label_t


def decode_combined(label: int, num_emotions: int) -> tuple[int, int]:
    if not 0 <= label < num_emotions * num_emotions:
        raise ValueError(f"combined label {label} out of range for {num_emotions} classes")
    return divmod(label, num_emotions)


@dataclass
class Aux1Batch:
    """Re-paired batch: audio order unchanged, text permuted within the batch.

    ``features.samples`` still lists the audio-side source utterances; the
    text rows follow ``permutation``.
    """

    features: Batch
    audio_labels: np.ndarray
    text_labels: np.ndarray
    combined_labels: np.ndarray
    permutation: np.ndarray


def build_aux1(batch: Batch, num_emotions: int, rng: np.random.Generator) -> Aux1Batch:
    perm = rng.permutation(batch.size)
    audio_labels = batch.labels.copy()
    text_labels = batch.labels[perm]
    combined = audio_labels * num_emotions + text_labels
    if np.any(batch.labels < 0) or np.any(batch.labels >= num_emotions):
        raise ValueError(f"batch labels exceed {num_emotions} classes")
    features = Batch(
        audio=batch.audio,
        audio_mask=batch.audio_mask,
        text=batch.text[perm],
        text_mask=batch.text_mask[perm],
        labels=audio_labels,
        samples=batch.samples,
    )
    return Aux1Batch(features, audio_labels, text_labels, combined, perm)


def make_class_pools(samples: list[Sample]) -> dict[int, list[Sample]]:
    pools: dict[int, list[Sample]] = {}
    for s in samples:
        pools.setdefault(s.label, []).append(s)
    return pools


def build_aux2(
    batch: Batch, class_pools: dict[int, list[Sample]], rng: np.random.Generator
) -> Batch:
    """Swap one fair-coin-chosen modality per sample for a same-class donor.

    Donors are drawn uniformly from the sample's class pool excluding the
    sample itself; a singleton pool leaves the sample unchanged. Donor
    sequence lengths may differ, so the result is re-padded from scratch.
    """
    new_samples: list[Sample] = []
    for sample in batch.samples:
        pool = class_pools.get(sample.label)
        if not pool:
            raise ValueError(f"no donor pool for emotion class {sample.label}")
        swap_audio = bool(rng.integers(0, 2) == 0)
        candidates = [s for s in pool if s.uid != sample.uid]
        if not candidates:
            new_samples.append(sample)
            continue
        donor = candidates[int(rng.integers(0, len(candidates)))]
        if donor.label != sample.label:
            raise ValueError(
                f"class pool {sample.label} contains donor {donor.uid!r} with label {donor.label}"
            )
        if swap_audio:
            new_samples.append(replace(sample, audio=donor.audio))
        else:
            new_samples.append(replace(sample, text=donor.text))
    out = make_batch(new_samples)
    if not np.array_equal(out.labels, batch.labels):
        raise AssertionError("same-class swap changed emotion labels")
    return out
