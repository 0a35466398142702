"""Directional synthetic-data experiments shaped like the ablation tables.

Each experiment generates a fresh seeded corpus per replicate, takes a
fold-sized 200/100 train/test shuffle split, trains every arm on the same
split, and reports per-arm WA/UA across replicates. Arms mirror the
ablation axes: single-modality heads, pooled-concat fusion (fc),
cross-attention fusion (ca), and ca with both auxiliary tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SynthConfig, shuffle_split, synth_generate
from .evaluate import (
    confusion_matrix,
    predict_fusion,
    predict_unimodal,
    unweighted_accuracy,
    weighted_accuracy,
)
from .fusion import FusionConfig
from .train import TrainConfig, train, train_unimodal

N_TRAIN = 200
N_TEST = 100


@dataclass
class ArmResult:
    wa: list[float] = field(default_factory=list)
    ua: list[float] = field(default_factory=list)

    @property
    def mean_wa(self) -> float:
        return float(np.mean(self.wa))

    @property
    def mean_ua(self) -> float:
        return float(np.mean(self.ua))


def _split_for_seed(cfg: SynthConfig, seed: int):
    dataset = synth_generate(cfg, seed)
    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    train_s, test_s = shuffle_split(dataset.samples, N_TRAIN, N_TEST, split_rng)
    return dataset, train_s, test_s


def _score(true_labels, preds, num_classes: int) -> tuple[float, float]:
    cm = confusion_matrix(true_labels, preds, num_classes)
    return weighted_accuracy(cm), unweighted_accuracy(cm)


def _base_train_cfg(seed: int, epochs: int) -> TrainConfig:
    return TrainConfig(learning_rate=1e-3, epochs=epochs, batch_size=16, seed=seed)


def run_modality_trend(
    synth_cfg: SynthConfig, seeds=range(5), epochs: int = 40
) -> dict[str, ArmResult]:
    """Unimodal heads vs fc vs ca on the given corpus; WA/UA per arm per seed."""
    e = synth_cfg.num_emotions
    model_cfg = FusionConfig(feature_dim=synth_cfg.feature_dim, num_heads=2, num_layers=1, num_emotions=e)
    results = {arm: ArmResult() for arm in ("audio", "text", "fc", "ca")}
    for seed in seeds:
        _, train_s, test_s = _split_for_seed(synth_cfg, seed)
        true = [s.label for s in test_s]
        cfg = _base_train_cfg(seed, epochs)

        for modality in ("audio", "text"):
            uni, _ = train_unimodal(train_s, modality, synth_cfg.feature_dim, e, cfg)
            wa, ua = _score(true, predict_unimodal(uni, modality, test_s), e)
            results[modality].wa.append(wa)
            results[modality].ua.append(ua)

        for arm, skip in (("fc", True), ("ca", False)):
            params, _ = train(train_s, model_cfg, cfg, skip_attention=skip)
            preds = predict_fusion(params, model_cfg, test_s, skip_attention=skip)
            wa, ua = _score(true, preds, e)
            results[arm].wa.append(wa)
            results[arm].ua.append(ua)
    return results


def run_aux_trend(
    synth_cfg: SynthConfig, seeds=range(5), epochs: int = 40
) -> dict[str, ArmResult]:
    """Cross-attention fusion with and without the two auxiliary tasks."""
    e = synth_cfg.num_emotions
    model_cfg = FusionConfig(feature_dim=synth_cfg.feature_dim, num_heads=2, num_layers=1, num_emotions=e)
    results = {arm: ArmResult() for arm in ("ca", "ca_aux12")}
    for seed in seeds:
        _, train_s, test_s = _split_for_seed(synth_cfg, seed)
        true = [s.label for s in test_s]
        base = _base_train_cfg(seed, epochs)
        for arm, aux in (("ca", False), ("ca_aux12", True)):
            cfg = TrainConfig(
                learning_rate=base.learning_rate,
                epochs=base.epochs,
                batch_size=base.batch_size,
                seed=base.seed,
                enable_aux1=aux,
                enable_aux2=aux,
            )
            params, _ = train(train_s, model_cfg, cfg)
            preds = predict_fusion(params, model_cfg, test_s)
            wa, ua = _score(true, preds, e)
            results[arm].wa.append(wa)
            results[arm].ua.append(ua)
    return results


def xor_parity_config() -> SynthConfig:
    """Binary parity labels: neither modality alone carries label information."""
    return SynthConfig(
        num_emotions=2, feature_dim=8, t_min=3, t_max=5,
        noise=0.5, per_class_per_session=30, mode="xor",
    )


def xor_pair_config() -> SynthConfig:
    """Ordered-bit-pair labels: each modality alone caps at 50% accuracy."""
    return SynthConfig(
        num_emotions=4, feature_dim=8, t_min=3, t_max=5,
        noise=0.5, per_class_per_session=15, mode="xor",
    )


def additive_config() -> SynthConfig:
    """Both modalities carry class signal at moderate noise."""
    return SynthConfig(
        num_emotions=4, feature_dim=8, t_min=3, t_max=5,
        noise=1.2, per_class_per_session=15, mode="additive",
    )


ARM_LABELS = {
    "audio": "Audio-only head",
    "text": "Text-only head",
    "fc": "Fusion: pooled-concat (fc)",
    "ca": "Fusion: cross-attention (ca)",
    "ca_aux12": "Fusion: ca + Aux1&2",
}


def render_table(title: str, results: dict[str, ArmResult]) -> str:
    lines = [title, "-" * len(title), f"{'Method':<34s} {'WA(%)':>8s} {'UA(%)':>8s}  per-seed WA"]
    for arm, res in results.items():
        per_seed = " ".join(f"{100 * w:.1f}" for w in res.wa)
        lines.append(
            f"{ARM_LABELS.get(arm, arm):<34s} {100 * res.mean_wa:>8.2f} {100 * res.mean_ua:>8.2f}  [{per_seed}]"
        )
    return "\n".join(lines)
