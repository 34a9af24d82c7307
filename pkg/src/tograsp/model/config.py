from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from ..errors import ConfigurationError

VARIANTS = ("graspclip", "tag", "cog_only", "fag_only", "fag_cog")


@dataclass
class ModelConfig:
    """Network widths and decoding constants.

    Spatial levels are fixed ratios of ``size``: ``v_high`` at S/64, ``v_mid``
    at S/32, ``v_cog`` at S/16, ``v_low`` at S/8, ``v_fag`` at S/4.
    """

    size: int = 128
    d_high: int = 64
    d_mid: int = 64
    d_low: int = 32
    d_attn: int = 32
    d_word: int = 32
    d_fag: int = 32
    d_pred: int = 16
    stem: tuple[int, int] = (16, 32)  # trunk widths at S/2 and S/4
    bins: int = 120  # decoding uses OrientationBins(bins)
    t_max: int = 20
    vocab_size: int = 64
    w_max: float | None = None  # default S/4 px
    grasp_h: float | None = None  # default 4 px at S=128
    gaussian_sigma: float = 2.0
    variant: str = "graspclip"

    def __post_init__(self):
        self.stem = tuple(self.stem)
        if self.w_max is None:
            self.w_max = self.size / 4.0
        if self.grasp_h is None:
            self.grasp_h = 4.0 * self.size / 128.0

    def validate(self) -> None:
        if self.size < 64 or self.size % 64:
            raise ConfigurationError(f"size must be a positive multiple of 64, got {self.size}")
        if self.bins < 2:
            raise ConfigurationError(f"need at least 2 orientation bins, got {self.bins}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        widths = (self.d_high, self.d_mid, self.d_low, self.d_attn, self.d_word, self.d_fag, self.d_pred, *self.stem)
        if min(widths) < 1:
            raise ConfigurationError("all widths must be >= 1")
        if self.t_max < 4 or self.vocab_size < 3:
            raise ConfigurationError("need t_max >= 4 and vocab_size >= 3")
        if not (self.w_max > 0 and self.grasp_h > 0 and self.gaussian_sigma >= 0):
            raise ConfigurationError("w_max and grasp_h must be > 0, gaussian_sigma >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        d["stem"] = list(self.stem)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)
