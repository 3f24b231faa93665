"""Recurrent translation models: text-only baseline, multimodal attention
over spatial feature maps, and the filtered variant that masks the feature
map with an encoder-conditioned spatial distribution before decoding.

Shapes are batch-first. Feature maps enter as (batch, positions, channels)
where positions = width * width; the loaders flatten grids accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ARCHITECTURES, TrainConfig
from .errors import ConfigError, ShapeError
from .tensor import Rng, Tensor

MASK_BIAS = -1e9  # added to attention scores at padded positions

GRU_PART_NAMES = ("w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n")


@dataclass(frozen=True)
class ParamSpec:
    """Shape and init recipe for one named parameter."""

    name: str
    shape: tuple[int, ...]
    fan_in: int
    bias: bool = False


class ModelParams:
    """Named collection of learnable tensors.

    The output projection is the target embedding table itself (tied), so it
    appears exactly once here. Bias parameters are flagged so the L2 penalty
    can skip them.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._bias: set[str] = set()

    def add(self, name: str, tensor: Tensor, bias: bool = False) -> None:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._tensors[name] = tensor
        if bias:
            self._bias.add(name)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def is_bias(self, name: str) -> bool:
        return name in self._bias

    def count_values(self) -> int:
        return sum(t.size for t in self._tensors.values())


def _gru_specs(prefix: str, d_in: int, d_h: int) -> list[ParamSpec]:
    specs = []
    for gate in ("z", "r", "n"):
        specs.append(ParamSpec(f"{prefix}.w_{gate}", (d_in, d_h), d_in))
        specs.append(ParamSpec(f"{prefix}.u_{gate}", (d_h, d_h), d_h))
        specs.append(ParamSpec(f"{prefix}.b_{gate}", (d_h,), d_h, bias=True))
    return specs


def parameter_specs(cfg: TrainConfig, src_vocab: int, tgt_vocab: int) -> list[ParamSpec]:
    """Ordered parameter layout for an architecture; order fixes init draws."""
    if cfg.arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {cfg.arch!r}")
    e, h = cfg.emb_dim, cfg.hidden_dim
    enc_out = 2 * h
    specs = [
        ParamSpec("emb.src", (src_vocab, e), e),
        ParamSpec("emb.tgt", (tgt_vocab, e), e),  # doubles as the output projection
    ]
    for layer in range(2):
        d_in = e if layer == 0 else enc_out
        specs += _gru_specs(f"enc.l{layer}.fwd", d_in, h)
        specs += _gru_specs(f"enc.l{layer}.bwd", d_in, h)
    specs += _gru_specs("dec.input_gru", e, h)
    specs += _gru_specs("dec.output_gru", enc_out, h)
    specs += [
        ParamSpec("att_txt.w_keys", (enc_out, h), enc_out),
        ParamSpec("att_txt.w_query", (h, h), h),
        ParamSpec("att_txt.v", (h, 1), h),
        ParamSpec("dec.out_w", (h, e), h),
        ParamSpec("dec.out_b", (e,), e, bias=True),
    ]
    if cfg.arch in ("ma", "fa"):
        c = cfg.feat_channels
        specs += [
            ParamSpec("att_vis.w_keys", (c, h), c),
            ParamSpec("att_vis.w_query", (h, h), h),
            ParamSpec("att_vis.v", (h, 1), h),
            ParamSpec("fuse.w_vis", (c, enc_out), c),
            ParamSpec("fuse.w_out", (2 * enc_out, enc_out), 2 * enc_out),
        ]
    if cfg.arch == "fa":
        c = cfg.feat_channels
        specs += [
            ParamSpec("filter.conv1_w", (c + enc_out, h), c + enc_out),
            ParamSpec("filter.conv1_b", (h,), h, bias=True),
            ParamSpec("filter.conv2_w", (h, 1), h),
            ParamSpec("filter.conv2_b", (1,), 1, bias=True),
        ]
    return specs


@dataclass
class GruWeights:
    w_z: Tensor
    w_r: Tensor
    w_n: Tensor
    u_z: Tensor
    u_r: Tensor
    u_n: Tensor
    b_z: Tensor
    b_r: Tensor
    b_n: Tensor

    @classmethod
    def from_params(cls, params: ModelParams, prefix: str) -> "GruWeights":
        return cls(*(params[f"{prefix}.{part}"] for part in GRU_PART_NAMES))


def gru_cell(x: Tensor, h: Tensor, w: GruWeights) -> Tensor:
    """One gated recurrence step: update/reset gates, tanh candidate,
    h' = (1-z) * h + z * candidate."""
    if x.shape[-1] != w.w_z.shape[0] or h.shape[-1] != w.u_z.shape[0]:
        raise ShapeError(
            f"gru_cell input dims {x.shape}/{h.shape} do not match weights "
            f"{w.w_z.shape}/{w.u_z.shape}"
        )
    z = T.sigmoid(T.add(T.add(T.matmul(x, w.w_z), T.matmul(h, w.u_z)), w.b_z))
    r = T.sigmoid(T.add(T.add(T.matmul(x, w.w_r), T.matmul(h, w.u_r)), w.b_r))
    n = T.tanh(T.add(T.add(T.matmul(x, w.w_n), T.matmul(T.mul(r, h), w.u_n)), w.b_n))
    return T.add(h, T.mul(z, T.sub(n, h)))


@dataclass
class EncoderStates:
    """Per-position encoder outputs (batch, src_len, 2*hidden), a validity
    mask, and the last valid top-layer state of each sentence."""

    h_enc: Tensor
    mask: np.ndarray
    h_last: Tensor
    lengths: np.ndarray


@dataclass
class DecoderState:
    h1: Tensor | None
    h2: Tensor
    t: int


@dataclass
class AttentionResult:
    context: Tensor
    weights: Tensor


def _gru_sweep(steps: list[Tensor], w: GruWeights, mask: np.ndarray, reverse: bool) -> list[Tensor]:
    """Run a GRU over per-step inputs, carrying state through padded
    positions unchanged; returns per-step states in input order."""
    batch = steps[0].shape[0]
    d_h = w.u_z.shape[0]
    h = Tensor(np.zeros((batch, d_h), dtype=steps[0].dtype))
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    out: list[Tensor | None] = [None] * len(steps)
    for t in order:
        h_new = gru_cell(steps[t], h, w)
        col = mask[:, t]
        if col.all():
            h = h_new
        else:
            m = Tensor(col[:, None].astype(steps[0].dtype))
            h = T.add(T.mul(m, h_new), T.mul(Tensor(1.0 - m.data), h))
        out[t] = h
    return out  # type: ignore[return-value]


def encode_source(
    src_ids: np.ndarray,
    src_mask: np.ndarray,
    params: ModelParams,
    cfg: TrainConfig,
    *,
    training: bool = False,
    rng: Rng | None = None,
    return_streams: bool = False,
):
    """Embed and encode a padded batch with a 2-layer bidirectional GRU.

    Directions are concatenated per position. Dropout applies to the
    embeddings and to the final states in training mode.
    """
    src_ids = np.atleast_2d(np.asarray(src_ids))
    src_mask = np.atleast_2d(np.asarray(src_mask)).astype(np.float64)
    batch, s_len = src_ids.shape
    lengths = src_mask.sum(axis=1).astype(int)
    if (lengths <= 0).any():
        raise ShapeError("encoder got a fully masked (empty) source row")

    emb = T.embedding(params["emb.src"], src_ids)  # (B, S, e)
    emb = T.dropout(emb, cfg.dropout_emb, rng=rng, training=training)
    flat = T.reshape(emb, (batch * s_len, -1))
    row0 = np.arange(batch) * s_len
    per_pos = [T.gather_rows(flat, row0 + t) for t in range(s_len)]

    streams: dict[str, list[Tensor]] = {}
    layer_in = per_pos
    top: list[Tensor] = []
    for layer in range(2):
        fwd = _gru_sweep(layer_in, GruWeights.from_params(params, f"enc.l{layer}.fwd"), src_mask, reverse=False)
        bwd = _gru_sweep(layer_in, GruWeights.from_params(params, f"enc.l{layer}.bwd"), src_mask, reverse=True)
        top = [T.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
        if return_streams:
            streams[f"l{layer}.fwd"] = fwd
            streams[f"l{layer}.bwd"] = bwd
        layer_in = top

    h_enc = T.concat([T.reshape(s, (batch, 1, -1)) for s in top], axis=1)  # (B, S, 2h)
    h_enc = T.dropout(h_enc, cfg.dropout_enc, rng=rng, training=training)

    pick = np.zeros((batch, s_len, 1), dtype=h_enc.dtype)
    pick[np.arange(batch), lengths - 1, 0] = 1.0
    h_last = T.tensor_sum(T.mul(h_enc, Tensor(pick)), axis=1)  # (B, 2h)

    enc = EncoderStates(h_enc=h_enc, mask=src_mask, h_last=h_last, lengths=lengths)
    if return_streams:
        return enc, streams
    return enc


def _attend(
    keys: Tensor,
    values: Tensor,
    query: Tensor,
    w_query: Tensor,
    v: Tensor,
    mask_bias: np.ndarray | None = None,
    stats: dict | None = None,
    stats_key: str | None = None,
) -> AttentionResult:
    """Feed-forward attention: score_i = v . tanh(keys_i + W_q query).

    ``keys``/``values`` may carry a batch of 1 while the query carries
    several rows (beam search); they broadcast across hypotheses.
    """
    positions, att_dim = keys.shape[1], keys.shape[2]
    batch = query.shape[0]
    qp = T.reshape(T.matmul(query, w_query), (batch, 1, att_dim))
    pre = T.add(keys, qp)
    if stats is not None and stats_key is not None:
        stats.setdefault(stats_key, []).append(float(np.abs(pre.data).mean()))
    act = T.tanh(pre)
    scores = T.reshape(T.matmul(T.reshape(act, (batch * positions, att_dim)), v), (batch, positions))
    if mask_bias is not None:
        scores = T.add(scores, Tensor(mask_bias.astype(scores.dtype)))
    weights = T.softmax(scores, axis=1)
    context = T.tensor_sum(T.mul(values, T.reshape(weights, (batch, positions, 1))), axis=1)
    return AttentionResult(context=context, weights=weights)


def attention_keys(values: Tensor, w_keys: Tensor) -> Tensor:
    """Project attention values once per sentence: (B, P, D) -> (B, P, A)."""
    batch, positions, dim = values.shape
    flat = T.matmul(T.reshape(values, (batch * positions, dim)), w_keys)
    return T.reshape(flat, (batch, positions, -1))


def attend_text(enc: EncoderStates, query: Tensor, params: ModelParams) -> AttentionResult:
    """Attend over encoder states; padded positions receive zero weight."""
    if not enc.mask.sum(axis=1).all():
        raise ShapeError("text attention over a fully masked row")
    keys = attention_keys(enc.h_enc, params["att_txt.w_keys"])
    bias = (enc.mask - 1.0) * -MASK_BIAS
    return _attend(keys, enc.h_enc, query, params["att_txt.w_query"], params["att_txt.v"], mask_bias=bias)


def attend_visual(
    feat_values: Tensor,
    query: Tensor,
    params: ModelParams,
    stats: dict | None = None,
) -> AttentionResult:
    """Spatial attention over w*w feature columns (no masking)."""
    keys = attention_keys(feat_values, params["att_vis.w_keys"])
    return _attend(
        keys, feat_values, query, params["att_vis.w_query"], params["att_vis.v"],
        stats=stats, stats_key="vis_pre_tanh_abs",
    )


def fuse_contexts(c_txt: Tensor, c_vis: Tensor, params: ModelParams) -> Tensor:
    """Project the visual context, concatenate with the text context, and
    fuse linearly (no bias) to the decoder input width."""
    projected = T.matmul(c_vis, params["fuse.w_vis"])
    return T.matmul(T.concat([c_txt, projected], axis=1), params["fuse.w_out"])


def conv_att_filter(
    feat_values: Tensor,
    h_last: Tensor,
    params: ModelParams,
) -> tuple[Tensor, Tensor]:
    """Compute a per-sentence spatial distribution from the tiled last
    encoder state and the feature map, then rescale the map with it.

    Returns (filtered feature values (B, P, C), distribution (B, P)).
    Implemented as two 1x1 convolutions: position-wise linear -> tanh ->
    linear to one channel -> softmax over positions.
    """
    batch, positions, channels = feat_values.shape
    tiled = T.broadcast_to(T.reshape(h_last, (batch, 1, -1)), (batch, positions, h_last.shape[-1]))
    stacked = T.concat([tiled, feat_values], axis=2)
    flat = T.reshape(stacked, (batch * positions, -1))
    hidden = T.tanh(T.add(T.matmul(flat, params["filter.conv1_w"]), params["filter.conv1_b"]))
    scores = T.add(T.matmul(hidden, params["filter.conv2_w"]), params["filter.conv2_b"])
    beta = T.softmax(T.reshape(scores, (batch, positions)), axis=1)
    filtered = T.mul(feat_values, T.reshape(beta, (batch, positions, 1)))
    return filtered, beta


@dataclass
class PreparedSource:
    """Everything computed once per source batch before decoding steps."""

    enc: EncoderStates
    txt_keys: Tensor
    txt_bias: np.ndarray
    vis_values: Tensor | None = None
    vis_keys: Tensor | None = None
    beta: Tensor | None = None


@dataclass
class StepResult:
    logits: Tensor
    state: DecoderState
    att_txt: AttentionResult
    att_vis: AttentionResult | None = None


class TranslationModel:
    """Shared driver for the three architectures.

    ``arch`` selects whether decoding consumes text context only, fuses a
    visual context, or additionally filters the feature map once per
    sentence before visual attention.
    """

    def __init__(self, cfg: TrainConfig, params: ModelParams):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.arch = cfg.arch

    @property
    def uses_features(self) -> bool:
        return self.arch in ("ma", "fa")

    def prepare(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        features: np.ndarray | None = None,
        *,
        training: bool = False,
        rng: Rng | None = None,
    ) -> PreparedSource:
        enc = encode_source(src_ids, src_mask, self.params, self.cfg, training=training, rng=rng)
        txt_keys = attention_keys(enc.h_enc, self.params["att_txt.w_keys"])
        txt_bias = (enc.mask - 1.0) * -MASK_BIAS
        prepared = PreparedSource(enc=enc, txt_keys=txt_keys, txt_bias=txt_bias)
        if self.uses_features:
            if features is None:
                raise ConfigError(f"architecture {self.arch!r} needs feature maps")
            vis = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
            if vis.ndim != 3 or vis.shape[0] != enc.mask.shape[0]:
                raise ShapeError(
                    f"features must be (batch, positions, channels) aligned with the "
                    f"batch, got {vis.shape}"
                )
            if self.arch == "fa":
                vis, beta = conv_att_filter(vis, enc.h_last, self.params)
                prepared.beta = beta
            prepared.vis_values = vis
            prepared.vis_keys = attention_keys(vis, self.params["att_vis.w_keys"])
        elif features is not None:
            raise ConfigError("baseline architecture does not take feature maps")
        return prepared

    def initial_state(self, batch: int) -> DecoderState:
        h = np.zeros((batch, self.cfg.hidden_dim), dtype=np.float32)
        return DecoderState(h1=None, h2=Tensor(h), t=0)

    def step(
        self,
        prepared: PreparedSource,
        y_prev: np.ndarray,
        state: DecoderState,
        *,
        training: bool = False,
        rng: Rng | None = None,
        stats: dict | None = None,
    ) -> StepResult:
        """One decoding step: input GRU, attention, fusion, output GRU,
        then logits through the tied embedding."""
        params = self.params
        y_prev = np.asarray(y_prev)
        emb = T.embedding(params["emb.tgt"], y_prev)  # (B, e)
        h1 = gru_cell(emb, state.h2, GruWeights.from_params(params, "dec.input_gru"))

        att_txt = _attend(
            prepared.txt_keys, prepared.enc.h_enc, h1,
            params["att_txt.w_query"], params["att_txt.v"], mask_bias=prepared.txt_bias,
        )
        att_vis = None
        if self.uses_features:
            att_vis = _attend(
                prepared.vis_keys, prepared.vis_values, h1,
                params["att_vis.w_query"], params["att_vis.v"],
                stats=stats, stats_key="vis_pre_tanh_abs",
            )
            context = fuse_contexts(att_txt.context, att_vis.context, params)
        else:
            context = att_txt.context

        h2 = gru_cell(context, h1, GruWeights.from_params(params, "dec.output_gru"))
        o = T.tanh(T.add(T.matmul(h2, params["dec.out_w"]), params["dec.out_b"]))
        o = T.dropout(o, self.cfg.dropout_out, rng=rng, training=training)
        logits = T.matmul(o, T.transpose(params["emb.tgt"]))
        return StepResult(
            logits=logits,
            state=DecoderState(h1=h1, h2=h2, t=state.t + 1),
            att_txt=att_txt,
            att_vis=att_vis,
        )

    def batch_loss(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        tgt_in: np.ndarray,
        tgt_ref: np.ndarray,
        tgt_mask: np.ndarray,
        features: np.ndarray | None = None,
        *,
        training: bool = False,
        rng: Rng | None = None,
        stats: dict | None = None,
    ) -> tuple[Tensor, int]:
        """Teacher-forced mean negative log-likelihood over non-pad tokens."""
        prepared = self.prepare(src_ids, src_mask, features, training=training, rng=rng)
        state = self.initial_state(src_ids.shape[0])
        step_logits = []
        for t in range(tgt_in.shape[1]):
            result = self.step(prepared, tgt_in[:, t], state, training=training, rng=rng, stats=stats)
            state = result.state
            step_logits.append(result.logits)
        loss = sequence_loss(step_logits, tgt_ref, tgt_mask)
        return loss, int(tgt_mask.sum())

    def count_parameters(self) -> int:
        return self.params.count_values()


def sequence_loss(step_logits: list[Tensor], refs: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over unmasked reference tokens."""
    refs = np.asarray(refs)
    mask = np.asarray(mask)
    if len(step_logits) != refs.shape[1] or refs.shape != mask.shape:
        raise ShapeError(
            f"loss lengths disagree: {len(step_logits)} steps vs refs {refs.shape} "
            f"vs mask {mask.shape}"
        )
    total_tokens = float(mask.sum())
    if total_tokens == 0:
        raise ShapeError("sequence_loss over an empty (fully masked) reference")
    acc = None
    for t, logits in enumerate(step_logits):
        logp = T.log_softmax(logits, axis=1)
        picked = T.gather_last(logp, refs[:, t])
        masked = T.mul(picked, Tensor(mask[:, t].astype(picked.dtype)))
        acc = masked.sum() if acc is None else T.add(acc, masked.sum())
    return T.scale(acc, -1.0 / total_tokens)


def cgru_step(
    y_prev: np.ndarray,
    state: DecoderState,
    enc: EncoderStates,
    params: ModelParams,
    cfg: TrainConfig,
    feat_values: Tensor | None = None,
    *,
    training: bool = False,
    rng: Rng | None = None,
) -> StepResult:
    """Single-call decoder step without precomputed attention keys.

    Convenience surface for tests and small drivers; ``TranslationModel``
    precomputes per-sentence projections instead.
    """
    model = TranslationModel(cfg, params)
    prepared = PreparedSource(
        enc=enc,
        txt_keys=attention_keys(enc.h_enc, params["att_txt.w_keys"]),
        txt_bias=(enc.mask - 1.0) * -MASK_BIAS,
    )
    if model.uses_features:
        if feat_values is None:
            raise ConfigError(f"architecture {cfg.arch!r} needs feature maps")
        vis = feat_values
        if cfg.arch == "fa":
            vis, beta = conv_att_filter(vis, enc.h_last, params)
            prepared.beta = beta
        prepared.vis_values = vis
        prepared.vis_keys = attention_keys(vis, params["att_vis.w_keys"])
    return model.step(prepared, y_prev, state, training=training, rng=rng)
