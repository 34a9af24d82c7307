"""The language-conditioned grasp network and its ablations.

Pipeline: text encoder and visual pyramid, then task-oriented fusion
(sentence-level Hadamard grounding followed by gated word attention), then a
bottleneck decoder producing quality, orientation and width maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigurationError, DimensionError, EncodingError
from ..language import PAD
from .config import ModelConfig

NEG_INF = -1e9
# initial head bias: grasp pixels and any single orientation bin are rare
HEAD_PRIOR_BIAS = -4.0


class TextFeatures(NamedTuple):
    l_word: Tensor  # T_max x d_word
    l_sen: Tensor  # d_high
    key_bias: Tensor  # T_max; 0 on tokens, NEG_INF on pads


@dataclass
class Outputs:
    """Differentiable network outputs.

    ``theta_rows`` holds orientation probabilities only at ``theta_index``
    (flat pixel indices) when the full ``M_theta`` map is not requested.
    """

    M_q: Tensor
    M_w: Tensor
    M_theta: Tensor | None = None
    theta_rows: Tensor | None = None
    theta_index: np.ndarray | None = None


class ParamBuilder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter {name}")
        self.params[name] = Tensor(arr.astype(np.float32), requires_grad=True, name=name)

    def conv(self, name: str, k: int, cin: int, cout: int, transpose: bool = False, stride: int = 1) -> None:
        if transpose:
            fan_in = cin * max(1, (k // stride) ** 2)
            shape = (k, k, cout, cin)
        else:
            fan_in = k * k * cin
            shape = (k, k, cin, cout)
        self._add(name + ".w", self.rng.normal(0, math.sqrt(2.0 / fan_in), shape))
        self._add(name + ".b", np.zeros(cout))

    def linear(self, name: str, din: int, dout: int, gain: float = 2.0, bias: float | None = 0.0) -> None:
        self._add(name + ".w", self.rng.normal(0, math.sqrt(gain / din), (din, dout)))
        if bias is not None:
            self._add(name + ".b", np.full(dout, bias))

    def scalar(self, name: str, value: float) -> None:
        self._add(name, np.array([value]))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    cfg.validate()
    b = ParamBuilder(seed)
    c1, c2 = cfg.stem
    # visual trunk
    b.conv("vis.s2", 4, 3, c1)
    b.conv("vis.s4", 4, c1, c2)
    b.conv("vis.s4b", 3, c2, c2)
    b.conv("vis.s8", 4, c2, cfg.d_low)
    b.conv("vis.s8b", 3, cfg.d_low, cfg.d_low)
    b.conv("vis.s16", 4, cfg.d_low, cfg.d_mid)
    b.conv("vis.s32", 4, cfg.d_mid, cfg.d_mid)
    b.conv("vis.s64", 4, cfg.d_mid, cfg.d_high)
    # text encoder
    b._add("txt.emb", b.rng.normal(0, 1.0, (cfg.vocab_size, cfg.d_word)))
    for n in ("q", "k", "v"):
        b.linear(f"txt.sa.{n}", cfg.d_word, cfg.d_word, gain=1.0, bias=None)
    b.linear("txt.ffn1", cfg.d_word, 2 * cfg.d_word)
    b.linear("txt.ffn2", 2 * cfg.d_word, cfg.d_word, gain=1.0)
    b.linear("txt.sen", cfg.d_word, cfg.d_high, gain=1.0)

    v = cfg.variant
    d = cfg.d_attn
    if v in ("graspclip", "tag", "cog_only", "fag_only"):
        if v != "fag_only":
            # starts near identity so early training sees unmodulated features
            b.linear("cog.sen", cfg.d_high, cfg.d_high, gain=0.25, bias=1.0)
        b.conv("cog.up", 2, cfg.d_high + cfg.d_mid, d, transpose=True, stride=2)
        b.conv("cog.conv", 3, d, d)
    if v in ("graspclip", "tag", "fag_only"):
        _fag_params(b, cfg)
    if v == "cog_only":
        b.linear("cog2.sen", cfg.d_high, d, gain=0.25, bias=1.0)
    if v == "fag_cog":
        b.conv("fagc.proj", 1, cfg.d_high + cfg.d_mid, d)
        _fag_params(b, cfg)
        b.conv("fagc.up", 2, d, d, transpose=True, stride=2)
        b.conv("fagc.conv", 3, d, d)
        b.linear("cog.sen", cfg.d_high, d, gain=0.25, bias=1.0)
    # fusion with v_low up to S/4
    b.conv("low.conv", 3, d + cfg.d_low, cfg.d_fag)
    b.conv("low.up", 2, cfg.d_fag, cfg.d_fag, transpose=True, stride=2)
    # decoder: three bottlenecks, the first two upsample x2
    r1, r2 = max(cfg.d_fag // 2, 1), max(cfg.d_pred // 2, 1)
    b.conv("dec1.reduce", 1, cfg.d_fag, r1)
    b.conv("dec1.conv", 3, r1, r1)
    b.conv("dec1.expand", 1, r1, cfg.d_fag)
    b.conv("dec2.reduce", 1, cfg.d_fag, r2)
    b.conv("dec2.conv", 3, r2, r2)
    b.conv("dec2.expand", 1, r2, cfg.d_pred)
    b.conv("dec3.reduce", 1, cfg.d_pred, r2)
    b.conv("dec3.conv", 3, r2, r2)
    b.conv("dec3.expand", 1, r2, cfg.d_pred)
    for name, cout, bias in (("q", 1, HEAD_PRIOR_BIAS), ("theta", cfg.bins, HEAD_PRIOR_BIAS), ("w", 1, 0.0)):
        b.conv(f"head.{name}", 1, cfg.d_pred, cout)
        b.params[f"head.{name}.b"].data[:] = bias
    return b.params


def _fag_params(b: ParamBuilder, cfg: ModelConfig) -> None:
    d = cfg.d_attn
    for n in ("q", "k", "v"):
        b.linear(f"fag.sa.{n}", d, d, gain=1.0, bias=None)
        b.linear(f"fag.ca.{n}", d, d, gain=1.0, bias=None)
    b.linear("fag.word", cfg.d_word, d, gain=1.0)
    b.linear("fag.ffn1", d, 2 * d)
    b.linear("fag.ffn2", 2 * d, d, gain=1.0)
    b.scalar("fag.alpha", 0.0)


def attention(q: Tensor, k: Tensor, v: Tensor, key_bias: Tensor | None = None) -> Tensor:
    """Single-head scaled dot-product attention over rows."""
    d = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d))
    if key_bias is not None:
        scores = ad.add(scores, key_bias)
    return ad.matmul(ad.softmax(scores, axis=-1), v)


class GraspNet:
    """Parameters plus the forward pass of one architecture variant."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        config.validate()
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    @property
    def variant(self) -> str:
        return self.config.variant

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def _conv(self, x, name, stride=1, padding=0, relu=True):
        y = ad.conv2d(x, self.p(name + ".w"), self.p(name + ".b"), stride=stride, padding=padding)
        return ad.relu(y) if relu else y

    def _convT(self, x, name, relu=True):
        y = ad.conv_transpose2d(x, self.p(name + ".w"), self.p(name + ".b"), stride=2)
        return ad.relu(y) if relu else y

    def _lin(self, x, name, relu=False):
        b = self.params.get(name + ".b")
        y = ad.linear(x, self.p(name + ".w"), b)
        return ad.relu(y) if relu else y

    # ------------------------------------------------------------ encoders

    def visual_encoder(self, image) -> tuple[Tensor, Tensor, Tensor]:
        """``(v_low, v_mid, v_high)`` at S/8, S/32 and S/64."""
        S = self.config.size
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))
        if x.shape != (S, S, 3):
            raise DimensionError(f"expected a {S}x{S}x3 image, got shape {x.shape}")
        x = self._conv(x, "vis.s2", 2, 1)
        x = self._conv(x, "vis.s4", 2, 1)
        x = self._conv(x, "vis.s4b", 1, 1)
        x = self._conv(x, "vis.s8", 2, 1)
        v_low = self._conv(x, "vis.s8b", 1, 1)
        x = self._conv(v_low, "vis.s16", 2, 1)
        v_mid = self._conv(x, "vis.s32", 2, 1)
        v_high = self._conv(v_mid, "vis.s64", 2, 1)
        return v_low, v_mid, v_high

    def text_encoder(self, token_ids) -> TextFeatures:
        ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
        if ids.shape != (self.config.t_max,):
            raise DimensionError(f"expected {self.config.t_max} token ids, got {ids.shape}")
        keep = np.flatnonzero(ids != PAD)
        if keep.size == 0:
            raise EncodingError("instruction holds only padding")
        bias = Tensor(np.where(ids == PAD, NEG_INF, 0.0).astype(np.float32))
        e = ad.embedding_lookup(self.p("txt.emb"), ids)
        h = ad.add(e, attention(self._lin(e, "txt.sa.q"), self._lin(e, "txt.sa.k"), self._lin(e, "txt.sa.v"), bias))
        h = ad.add(h, self._lin(self._lin(h, "txt.ffn1", relu=True), "txt.ffn2"))
        pooled = ad.mean(ad.gather_rows(h, keep), axis=0)
        l_sen = self._lin(pooled, "txt.sen")
        return TextFeatures(h, l_sen, bias)

    # -------------------------------------------------------------- fusion

    def cog(self, v_high: Tensor, v_mid: Tensor, l_sen: Tensor | None, ones: bool = False) -> Tensor:
        """Sentence grounding: Hadamard with projected ``l_sen``, then up to S/16."""
        if ones:
            v = ad.mul(v_high, Tensor(np.ones(v_high.shape[-1], dtype=np.float32)))
        elif l_sen is not None:
            v = ad.mul(v_high, self.sentence_filter(l_sen))
        else:
            v = v_high
        if (2 * v.shape[0], 2 * v.shape[1]) != v_mid.shape[:2]:
            raise DimensionError(f"cog: v_high {v_high.shape} does not pair with v_mid {v_mid.shape}")
        x = ad.concat([ad.upsample_nearest(v, 2), v_mid], axis=-1)
        x = self._convT(x, "cog.up")
        return self._conv(x, "cog.conv", 1, 1, relu=False)

    def sentence_filter(self, l_sen: Tensor, name: str = "cog.sen") -> Tensor:
        return self._lin(l_sen, name)

    def fag(self, v_cog: Tensor, text: TextFeatures | None, v_low: Tensor) -> Tensor:
        """Gated self- and cross-attention at S/16, then fusion with ``v_low`` up to S/4.

        ``text=None`` pins the gate at zero, skipping both attention branches.
        """
        z = self._attend(v_cog, text)
        return self._fuse_low(z, v_low)

    def _attend(self, v: Tensor, text: TextFeatures | None) -> Tensor:
        h, w, d = v.shape
        if d != self.config.d_attn:
            raise DimensionError(f"fag: expected {self.config.d_attn} channels, got {d}")
        if text is None:
            return v
        z = ad.reshape(v, (h * w, d))
        alpha = self.p("fag.alpha")
        sa = attention(self._lin(z, "fag.sa.q"), self._lin(z, "fag.sa.k"), self._lin(z, "fag.sa.v"))
        z_sa = ad.add(z, ad.mul(alpha, sa))
        words = self._lin(text.l_word, "fag.word")
        ca = attention(self._lin(z_sa, "fag.ca.q"), self._lin(words, "fag.ca.k"), self._lin(words, "fag.ca.v"), text.key_bias)
        ffn = self._lin(self._lin(ca, "fag.ffn1", relu=True), "fag.ffn2")
        z_ca = ad.add(z_sa, ad.mul(alpha, ffn))
        return ad.reshape(z_ca, (h, w, d))

    def _fuse_low(self, v: Tensor, v_low: Tensor) -> Tensor:
        up = ad.upsample_nearest(v, 2)
        if up.shape[:2] != v_low.shape[:2]:
            raise DimensionError(f"fusion: {v.shape} does not pair with v_low {v_low.shape}")
        x = self._conv(ad.concat([up, v_low], axis=-1), "low.conv", 1, 1)
        return self._convT(x, "low.up")

    def fuse(self, v_low, v_mid, v_high, text: TextFeatures | None) -> Tensor:
        """Variant-specific fusion producing ``v_fag`` at S/4."""
        v = self.variant
        if v == "tag" or text is None:
            if v not in ("graspclip", "tag"):
                raise ConfigurationError(f"variant {v} has no language-free path")
            return self.fag(self.cog(v_high, v_mid, None, ones=True), None, v_low)
        if v == "graspclip":
            return self.fag(self.cog(v_high, v_mid, text.l_sen), text, v_low)
        if v == "fag_only":
            return self.fag(self.cog(v_high, v_mid, None), text, v_low)
        if v == "cog_only":
            v_cog = self.cog(v_high, v_mid, text.l_sen)
            return self._fuse_low(ad.mul(v_cog, self.sentence_filter(text.l_sen, "cog2.sen")), v_low)
        # fag_cog: word attention at S/32 first, sentence grounding at S/16 second
        x = ad.concat([ad.upsample_nearest(v_high, 2), v_mid], axis=-1)
        x = self._attend(self._conv(x, "fagc.proj", relu=False), text)
        x = self._convT(x, "fagc.up")
        x = self._conv(x, "fagc.conv", 1, 1, relu=False)
        return self._fuse_low(ad.mul(x, self.sentence_filter(text.l_sen)), v_low)

    # ------------------------------------------------------------- decoder

    def decoder(self, v_fag: Tensor, theta_index: np.ndarray | None = None, full_theta: bool = True) -> Outputs:
        S = self.config.size
        if v_fag.shape != (S // 4, S // 4, self.config.d_fag):
            raise DimensionError(f"decoder: expected v_fag {(S // 4, S // 4, self.config.d_fag)}, got {v_fag.shape}")
        x = self._conv(v_fag, "dec1.reduce")
        x = self._conv(ad.upsample_nearest(x, 2), "dec1.conv", 1, 1)
        x = self._conv(x, "dec1.expand")
        x = self._conv(x, "dec2.reduce")
        x = self._conv(ad.upsample_nearest(x, 2), "dec2.conv", 1, 1)
        x = self._conv(x, "dec2.expand")
        x = self._conv(x, "dec3.reduce")
        x = self._conv(x, "dec3.conv", 1, 1)
        v_pred = self._conv(x, "dec3.expand")
        m_q = ad.reshape(ad.sigmoid(self._conv(v_pred, "head.q", relu=False)), (S, S))
        m_w = ad.reshape(ad.sigmoid(self._conv(v_pred, "head.w", relu=False)), (S, S))
        out = Outputs(m_q, m_w)
        if theta_index is not None:
            rows = ad.gather_rows(ad.reshape(v_pred, (S * S, self.config.d_pred)), theta_index)
            w = self.p("head.theta.w")
            out.theta_rows = ad.sigmoid(ad.linear(rows, ad.reshape(w, w.shape[2:]), self.p("head.theta.b")))
            out.theta_index = np.asarray(theta_index)
        if full_theta:
            out.M_theta = ad.sigmoid(self._conv(v_pred, "head.theta", relu=False))
        return out

    # ------------------------------------------------------------- forward

    def forward(self, image, token_ids=None, theta_index=None, full_theta: bool = True) -> Outputs:
        if self.variant == "tag":
            return self.forward_tag(image, theta_index, full_theta)
        if token_ids is None:
            raise ConfigurationError(f"variant {self.variant} needs an instruction")
        text = self.text_encoder(token_ids)
        v_low, v_mid, v_high = self.visual_encoder(image)
        return self.decoder(self.fuse(v_low, v_mid, v_high, text), theta_index, full_theta)

    def forward_tag(self, image, theta_index=None, full_theta: bool = True) -> Outputs:
        """Language-free pass: unit sentence filter, attention gate pinned at zero."""
        v_low, v_mid, v_high = self.visual_encoder(image)
        return self.decoder(self.fuse(v_low, v_mid, v_high, None), theta_index, full_theta)

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))
