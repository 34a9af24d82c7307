"""Language-conditioned grasp network, its ablations, decoding and checkpoints."""

from .checkpoint import describe, load_checkpoint, read_sidecar, save_checkpoint
from .config import VARIANTS, ModelConfig
from .decode import PredictionMaps, blur, decode_grasp
from .network import GraspNet, Outputs, TextFeatures, attention, init_params


def build_variant(name: str, config: ModelConfig | None = None, seed: int = 0) -> GraspNet:
    """Fresh model of the named variant; ``tag`` shares the full model's parameters."""
    from dataclasses import replace

    from ..errors import ConfigurationError

    if name not in VARIANTS:
        raise ConfigurationError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    cfg = replace(config or ModelConfig(), variant=name)
    return GraspNet(cfg, seed=seed)
