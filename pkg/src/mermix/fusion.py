"""Bidirectional multi-head cross-attention fusion over paired audio/text sequences.

Each layer runs two branches off the same layer input: the audio stream
queries the text stream and vice versa, each with its own Q/K/V (and
optional output) projections, added back residually. After the final layer
both streams are mean-pooled over their valid time steps and concatenated
as [audio, text] into a fusion embedding that feeds two affine heads: an
emotion classifier and a modality-combination classifier used by the
recombination auxiliary task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .data import Batch
from .tensor import Tensor


@dataclass
class FusionConfig:
    feature_dim: int
    num_heads: int = 8
    num_layers: int = 1
    num_emotions: int = 4
    use_output_projection: bool = True
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.feature_dim < 1 or self.num_heads < 1:
            raise ValueError("feature_dim and num_heads must be positive")
        if self.feature_dim % self.num_heads != 0:
            raise ValueError(
                f"feature_dim {self.feature_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_emotions < 2:
            raise ValueError("num_emotions must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.feature_dim // self.num_heads

    def to_vector(self) -> list[float]:
        return [
            float(self.feature_dim),
            float(self.num_heads),
            float(self.num_layers),
            float(self.num_emotions),
            1.0 if self.use_output_projection else 0.0,
            float(self.dropout_rate),
        ]

    @classmethod
    def from_vector(cls, vec) -> "FusionConfig":
        vec = list(vec)
        if len(vec) != 6:
            raise ValueError(f"config vector must have 6 entries, got {len(vec)}")
        return cls(
            feature_dim=int(round(vec[0])),
            num_heads=int(round(vec[1])),
            num_layers=int(round(vec[2])),
            num_emotions=int(round(vec[3])),
            use_output_projection=bool(round(vec[4])),
            dropout_rate=float(vec[5]),
        )


@dataclass
class AttentionParams:
    """Projections for one branch: queries from one stream, keys/values from the other."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor | None = None
    b_o: Tensor | None = None

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.b_q", self.b_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.b_k", self.b_k
        yield f"{prefix}.w_v", self.w_v
        yield f"{prefix}.b_v", self.b_v
        if self.w_o is not None:
            yield f"{prefix}.w_o", self.w_o
            yield f"{prefix}.b_o", self.b_o


@dataclass
class LayerParams:
    audio: AttentionParams  # updates the audio stream, attending over text
    text: AttentionParams  # updates the text stream, attending over audio


@dataclass
class FusionModelParams:
    layers: list[LayerParams]
    w_cls: Tensor  # (2C, E)
    b_cls: Tensor  # (E,)
    w_aux: Tensor  # (2C, E*E)
    b_aux: Tensor  # (E*E,)

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.audio.named(f"layer{i}.audio")
            yield from layer.text.named(f"layer{i}.text")
        yield "head.main.w", self.w_cls
        yield "head.main.b", self.b_cls
        yield "head.aux1.w", self.w_aux
        yield "head.aux1.b", self.b_aux

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


def parameter_count(cfg: FusionConfig) -> int:
    c, e = cfg.feature_dim, cfg.num_emotions
    per_branch = (3 + (1 if cfg.use_output_projection else 0)) * (c * c + c)
    heads = (2 * c * e + e) + (2 * c * e * e + e * e)
    return cfg.num_layers * 2 * per_branch + heads


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in), requires_grad=True)


def _init_branch(rng: np.random.Generator, cfg: FusionConfig) -> AttentionParams:
    c = cfg.feature_dim
    zeros = lambda: Tensor(np.zeros(c), requires_grad=True)
    branch = AttentionParams(
        w_q=_init_weight(rng, c, c), b_q=zeros(),
        w_k=_init_weight(rng, c, c), b_k=zeros(),
        w_v=_init_weight(rng, c, c), b_v=zeros(),
    )
    if cfg.use_output_projection:
        branch.w_o = _init_weight(rng, c, c)
        branch.b_o = zeros()
    return branch


def init_params(cfg: FusionConfig, rng: np.random.Generator) -> FusionModelParams:
    """Seeded initialization; weight draws happen in a fixed documented order."""
    layers = [
        LayerParams(audio=_init_branch(rng, cfg), text=_init_branch(rng, cfg))
        for _ in range(cfg.num_layers)
    ]
    c, e = cfg.feature_dim, cfg.num_emotions
    return FusionModelParams(
        layers=layers,
        w_cls=_init_weight(rng, 2 * c, e),
        b_cls=Tensor(np.zeros(e), requires_grad=True),
        w_aux=_init_weight(rng, 2 * c, e * e),
        b_aux=Tensor(np.zeros(e * e), requires_grad=True),
    )


def params_to_arrays(params: FusionModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.named()}


def params_from_arrays(cfg: FusionConfig, arrays: dict[str, np.ndarray]) -> FusionModelParams:
    template = init_params(cfg, np.random.default_rng(0))
    for name, t in template.named():
        if name not in arrays:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        value = np.asarray(arrays[name], dtype=np.float64)
        if value.shape != t.shape:
            raise ValueError(f"parameter {name!r} has shape {value.shape}, expected {t.shape}")
        t.data = value.copy()
    return template


def cross_attention_block(
    queries_from: Tensor,
    keys_values_from: Tensor,
    branch: AttentionParams,
    kv_mask: np.ndarray,
    cfg: FusionConfig,
    attn_dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """One residual multi-head cross-attention update of the query stream."""
    b, t_q, c = queries_from.shape
    t_k = keys_values_from.shape[1]
    if c != cfg.feature_dim or keys_values_from.shape[2] != cfg.feature_dim:
        raise ValueError(
            f"feature dim mismatch: inputs {queries_from.shape}/{keys_values_from.shape}, "
            f"config expects {cfg.feature_dim}"
        )
    if kv_mask.shape != (b, t_k):
        raise ValueError(f"kv_mask shape {kv_mask.shape} does not cover keys {keys_values_from.shape}")
    if np.any(kv_mask.sum(axis=1) == 0):
        raise ValueError("fully masked key set")

    h, d = cfg.num_heads, cfg.head_dim
    q = T.linear(queries_from, branch.w_q, branch.b_q)
    k = T.linear(keys_values_from, branch.w_k, branch.b_k)
    v = T.linear(keys_values_from, branch.w_v, branch.b_v)

    def heads(x: Tensor, t: int) -> Tensor:
        return T.transpose(T.reshape(x, (b, t, h, d)), (0, 2, 1, 3))

    scores = T.scale(T.matmul(heads(q, t_q), T.transpose(heads(k, t_k), (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    mask_add = np.where(kv_mask[:, None, None, :] > 0, 0.0, -np.inf)
    scores = T.add(scores, Tensor(np.broadcast_to(mask_add, (b, h, t_q, t_k))))
    attn = T.softmax_lastdim(scores)
    if cfg.dropout_rate > 0.0 and attn_dropout_rng is not None:
        keep = (attn_dropout_rng.random(attn.shape) >= cfg.dropout_rate) / (1.0 - cfg.dropout_rate)
        attn = T.mul(attn, Tensor(keep))
    context = T.reshape(T.transpose(T.matmul(attn, heads(v, t_k)), (0, 2, 1, 3)), (b, t_q, c))
    if cfg.use_output_projection:
        context = T.linear(context, branch.w_o, branch.b_o)
    return T.add(queries_from, context)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the time axis counting only mask-valid steps."""
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("sample with no valid steps cannot be pooled")
    weights = np.broadcast_to((mask / counts[:, None])[:, :, None], x.shape)
    return T.sum_over_axis(T.mul(x, Tensor(weights)), 1)


def forward(
    params: FusionModelParams,
    cfg: FusionConfig,
    batch: Batch,
    skip_attention: bool = False,
    attn_dropout_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the fusion network on a batch.

    Returns (fusion_embedding (B, 2C), emotion logits (B, E), combination
    logits (B, E*E)). With ``skip_attention`` the cross-attention stack is
    bypassed and the heads see the pooled-concat of the raw inputs, which is
    the plain fully-connected fusion baseline.
    """
    f_audio = Tensor(batch.audio)
    f_text = Tensor(batch.text)
    if not skip_attention:
        for layer in params.layers:
            audio_in, text_in = f_audio, f_text
            f_audio = cross_attention_block(
                audio_in, text_in, layer.audio, batch.text_mask, cfg, attn_dropout_rng
            )
            f_text = cross_attention_block(
                text_in, audio_in, layer.text, batch.audio_mask, cfg, attn_dropout_rng
            )
    pooled_audio = masked_mean(f_audio, batch.audio_mask)
    pooled_text = masked_mean(f_text, batch.text_mask)
    embedding = T.concat_lastdim([pooled_audio, pooled_text])
    main_logits = T.linear(embedding, params.w_cls, params.b_cls)
    aux1_logits = T.linear(embedding, params.w_aux, params.b_aux)
    return embedding, main_logits, aux1_logits


def predict(main_logits: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(main_logits, axis=-1)


# -- single-modality baseline --------------------------------------------------


@dataclass
class UnimodalHeadParams:
    """Pool one modality over time and classify with a single affine map."""

    w: Tensor  # (C, E)
    b: Tensor  # (E,)

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield "head.w", self.w
        yield "head.b", self.b

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


def init_unimodal(feature_dim: int, num_emotions: int, rng: np.random.Generator) -> UnimodalHeadParams:
    return UnimodalHeadParams(
        w=_init_weight(rng, feature_dim, num_emotions),
        b=Tensor(np.zeros(num_emotions), requires_grad=True),
    )


def forward_unimodal(params: UnimodalHeadParams, features: np.ndarray, mask: np.ndarray) -> Tensor:
    pooled = masked_mean(Tensor(features), mask)
    return T.linear(pooled, params.w, params.b)


# -- finite-difference verification --------------------------------------------


def check_config() -> FusionConfig:
    """The small configuration used by the gradient-check suite."""
    return FusionConfig(feature_dim=8, num_heads=2, num_layers=2, num_emotions=4)


def make_check_batch(cfg: FusionConfig, rng: np.random.Generator, batch_size: int = 3, t_max: int = 4) -> tuple[Batch, np.ndarray]:
    """Random small batch (features in [-1, 1], ragged lengths) plus combined labels."""
    from .data import Sample, make_batch

    samples = []
    for i in range(batch_size):
        t_a = int(rng.integers(1, t_max + 1))
        t_t = int(rng.integers(1, t_max + 1))
        samples.append(
            Sample(
                uid=f"chk{i}",
                session=1,
                label=int(rng.integers(0, cfg.num_emotions)),
                audio=rng.uniform(-1.0, 1.0, (t_a, cfg.feature_dim)),
                text=rng.uniform(-1.0, 1.0, (t_t, cfg.feature_dim)),
            )
        )
    combined = rng.integers(0, cfg.num_emotions**2, size=batch_size)
    return make_batch(samples), combined


def _check_loss(params: FusionModelParams, cfg: FusionConfig, batch: Batch, combined: np.ndarray) -> Tensor:
    _, main_logits, aux1_logits = forward(params, cfg, batch)
    return T.add(T.cross_entropy(main_logits, batch.labels), T.cross_entropy(aux1_logits, combined))


def run_gradient_check(
    cfg: FusionConfig | None = None, seed: int = 0, h: float = 1e-5
) -> dict[str, float]:
    """Compare tape gradients of the combined-head loss against central differences.

    Every parameter tensor is checked scalar-by-scalar; the returned map
    holds the max relative error per parameter. The combined loss (emotion
    plus combination cross-entropy) reaches every parameter.
    """
    cfg = cfg or check_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    batch, combined = make_check_batch(cfg, rng)

    with T.Tape() as tape:
        loss = _check_loss(params, cfg, batch, combined)
    tape.backward(loss)

    def loss_value() -> float:
        return _check_loss(params, cfg, batch, combined).item()

    errors: dict[str, float] = {}
    for name, param in params.named():
        fd = T.finite_difference(loss_value, param.data, h=h)
        assert param.grad is not None
        errors[name] = T.max_relative_error(param.grad, fd)
    return errors
