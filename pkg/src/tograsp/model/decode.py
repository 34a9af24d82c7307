from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import DimensionError
from ..geometry import GraspRect, OrientationBins, bin_decode
from .config import ModelConfig

BLUR_TRUNCATE = 4.0


@dataclass
class PredictionMaps:
    M_q: np.ndarray  # S x S
    M_theta: np.ndarray  # S x S x bins
    M_w: np.ndarray  # S x S, width / W_max

    def __post_init__(self):
        S = self.M_q.shape[0]
        if self.M_q.shape != (S, S) or self.M_w.shape != (S, S) or self.M_theta.shape[:2] != (S, S):
            raise DimensionError(
                f"inconsistent map shapes {self.M_q.shape}, {self.M_theta.shape}, {self.M_w.shape}"
            )

    @classmethod
    def from_outputs(cls, out) -> "PredictionMaps":
        if out.M_theta is None:
            raise DimensionError("outputs hold no full orientation map")
        return cls(out.M_q.data.copy(), out.M_theta.data.copy(), out.M_w.data.copy())


def blur(m: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized Gaussian blur truncated at 4 sigma.

    Borders replicate the edge pixel: a uniform map stays uniform, and unlike
    reflection a peak next to the border is not mirrored onto the edge.
    """
    if sigma <= 0:
        return np.asarray(m, dtype=np.float64)
    return gaussian_filter(np.asarray(m, dtype=np.float64), sigma, truncate=BLUR_TRUNCATE, mode="nearest")


def decode_grasp(maps: PredictionMaps, config: ModelConfig) -> GraspRect:
    """Top-1 grasp: argmax of the blurred quality map, first in row-major order on ties."""
    q = blur(maps.M_q, config.gaussian_sigma)
    flat = int(np.argmax(q))  # numpy returns the first maximal index
    r, c = divmod(flat, q.shape[1])
    bins = OrientationBins(config.bins)
    theta = bin_decode(int(np.argmax(maps.M_theta[r, c])), bins)
    w = float(blur(maps.M_w, config.gaussian_sigma)[r, c]) * config.w_max
    return GraspRect(float(c), float(r), theta, w, float(config.grasp_h))
