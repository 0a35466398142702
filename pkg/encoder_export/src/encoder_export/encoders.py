"""Frozen text and audio encoders producing per-utterance (T, 768) features.

Two construction paths: a local pretrained model directory, or a seeded
randomly initialized encoder (768-dim hidden size, reduced depth) for
offline use where no weights are available. Either way the weights are
frozen, inference runs single-threaded in eval mode, and the output is the
hidden-state sequence of a selectable layer (-1 = final), float32.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
from scipy.io import wavfile

HIDDEN_SIZE = 768
SAMPLE_RATE = 16000
MAX_TEXT_TOKENS = 512
MAX_AUDIO_SECONDS = 30.0

torch.set_num_threads(1)  # bit-stable outputs across runs


def _select_layer(hidden_states: tuple, layer: int) -> torch.Tensor:
    if not -len(hidden_states) <= layer < len(hidden_states):
        raise ValueError(f"layer {layer} out of range for {len(hidden_states)} hidden states")
    return hidden_states[layer]


@dataclass
class TextEncoder:
    tokenizer: object
    model: object
    layer: int = -1

    @classmethod
    def from_pretrained(cls, model_dir: str, layer: int = -1) -> "TextEncoder":
        from transformers import AutoModel, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        return cls(tokenizer, model, layer)

    @classmethod
    def random_init(cls, corpus_texts: list[str], seed: int, layer: int = -1) -> "TextEncoder":
        """Deterministic untrained encoder over a corpus-derived wordpiece vocab."""
        from transformers import BertConfig, BertModel, BertTokenizer

        words = sorted({w for text in corpus_texts for w in text.lower().split()})
        vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", *words]
        vocab_dir = tempfile.mkdtemp(prefix="encexp_vocab_")
        vocab_file = os.path.join(vocab_dir, "vocab.txt")
        with open(vocab_file, "w") as fh:
            fh.write("\n".join(vocab) + "\n")
        tokenizer = BertTokenizer(vocab_file, do_lower_case=True)
        torch.manual_seed(seed)
        config = BertConfig(
            vocab_size=len(vocab),
            hidden_size=HIDDEN_SIZE,
            num_hidden_layers=2,
            num_attention_heads=12,
            intermediate_size=256,
            max_position_embeddings=MAX_TEXT_TOKENS,
        )
        model = BertModel(config)
        model.eval()
        return cls(tokenizer, model, layer)

    def encode(self, transcript: str) -> np.ndarray:
        inputs = self.tokenizer(
            transcript, return_tensors="pt", truncation=True, max_length=MAX_TEXT_TOKENS
        )
        with torch.no_grad():
            out = self.model(**inputs, output_hidden_states=True)
        hidden = _select_layer(out.hidden_states, self.layer)
        return hidden[0].numpy().astype(np.float32)


@dataclass
class AudioEncoder:
    extractor: object
    model: object
    layer: int = -1

    @classmethod
    def from_pretrained(cls, model_dir: str, layer: int = -1) -> "AudioEncoder":
        from transformers import AutoModel, Wav2Vec2FeatureExtractor

        extractor = Wav2Vec2FeatureExtractor.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        return cls(extractor, model, layer)

    @classmethod
    def random_init(cls, seed: int, layer: int = -1) -> "AudioEncoder":
        from transformers import Wav2Vec2Config, Wav2Vec2FeatureExtractor, Wav2Vec2Model

        extractor = Wav2Vec2FeatureExtractor()
        torch.manual_seed(seed + 1)
        config = Wav2Vec2Config(
            hidden_size=HIDDEN_SIZE,
            num_hidden_layers=1,
            num_attention_heads=12,
            intermediate_size=256,
        )
        model = Wav2Vec2Model(config)
        model.eval()
        return cls(extractor, model, layer)

    def encode(self, waveform: np.ndarray) -> np.ndarray:
        inputs = self.extractor(waveform, sampling_rate=SAMPLE_RATE, return_tensors="pt")
        with torch.no_grad():
            out = self.model(inputs.input_values, output_hidden_states=True)
        hidden = _select_layer(out.hidden_states, self.layer)
        return hidden[0].numpy().astype(np.float32)


def read_wav_16k_mono(path: str) -> np.ndarray:
    """Load a 16 kHz mono PCM/float WAV as float32 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {rate}, need {SAMPLE_RATE}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if len(data) < 400:  # shorter than one encoder receptive field
        raise ValueError(f"{path}: clip too short ({len(data)} samples)")
    if len(data) > MAX_AUDIO_SECONDS * SAMPLE_RATE:
        raise ValueError(f"{path}: clip longer than {MAX_AUDIO_SECONDS}s")
    if data.dtype == np.int16:
        return (data / 32768.0).astype(np.float32)
    if data.dtype == np.int32:
        return (data / 2147483648.0).astype(np.float32)
    return data.astype(np.float32)
