"""Full change-detection network: encoder variant + decoder + sigmoid head."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import TrunkPlan, init_parameters, load_trunk_archive
from .decoder import Decoder, DecoderPlan
from .encoder import SiameseEncoder, SingleEncoder, TripletEncoder
from .errors import ConfigurationError

BRANCHES = ("single", "siamese", "triplet")


@dataclass(frozen=True)
class ModelConfig:
    branches: str = "triplet"
    use_mbsscca: bool = True
    use_decoder_attention: bool = True
    input_size: tuple = (256, 256)
    pretrained_t1t2: bool = False

    def validate(self):
        if self.branches not in BRANCHES:
            raise ConfigurationError(
                f"branches must be one of {BRANCHES}, got {self.branches!r}"
            )
        if self.use_mbsscca and self.branches != "triplet":
            raise ConfigurationError("use_mbsscca requires branches='triplet'")
        h, w = self.input_size
        if h % 16 or w % 16:
            raise ConfigurationError(f"input_size must be divisible by 16, got {h}x{w}")
        return self


# Ablation grid, one entry per row of the branch/fusion/attention sweep.
VARIANTS = {
    "single": ModelConfig("single", False, False),
    "single-am": ModelConfig("single", False, True),
    "siamese": ModelConfig("siamese", False, False),
    "siamese-am": ModelConfig("siamese", False, True),
    "triplet": ModelConfig("triplet", False, False),
    "triplet-mbsscca": ModelConfig("triplet", True, False),
    "triplet-am": ModelConfig("triplet", False, True),
    "tunet": ModelConfig("triplet", True, True),
}


class ChangeDetector(nn.Module):
    """Bitemporal change detector; forward returns logits, decode probabilities."""

    def __init__(self, config=None, plan=None, reduction=16):
        super().__init__()
        self.config = (config or ModelConfig()).validate()
        self.plan = plan or TrunkPlan()
        if self.config.branches == "single":
            self.encoder = SingleEncoder(self.plan)
        elif self.config.branches == "siamese":
            self.encoder = SiameseEncoder(self.plan)
        else:
            self.encoder = TripletEncoder(self.plan, self.config.use_mbsscca, reduction)
        self.decoder = Decoder(
            DecoderPlan.from_trunk(self.plan),
            use_attention=self.config.use_decoder_attention,
            reduction=reduction,
        )

    def forward(self, x1, x2):
        out = self.encoder(x1, x2)
        return self.decoder(out.bottom, out.skips)

    def decode(self, x1, x2):
        """Change probability map, values strictly in (0, 1)."""
        return torch.sigmoid(self.forward(x1, x2))


def build_variant(config, trunk_weights=None, seed=0, plan=None):
    """Construct and seed-init a variant; optionally load pretrained trunk convs.

    The archive (if any) seeds the shared image trunk. The difference branch
    of the triplet stays randomly initialized: features of change are not the
    features of imagery, so pretrained convs do not transfer to it.
    """
    model = ChangeDetector(config, plan=plan)
    init_parameters(model, seed)
    if config.pretrained_t1t2:
        if trunk_weights is None:
            raise ConfigurationError(
                "pretrained_t1t2 set but no trunk weight archive given"
            )
        load_trunk_archive(model.encoder.t1t2, trunk_weights)
    return model
