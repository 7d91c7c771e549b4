from .attention import attention_scores, attention_transfer
from .blocks import (
    ConcatFuseBlock,
    LptBlock,
    PlainResidualBlock,
    SpaBlock,
    UpsampleConv,
    region_normalize,
)
from .discriminator import PatchDiscriminator
from .generator import BottleneckStack, Encoder, Generator, GeneratorOutput, composite_output
from .prompter import FrozenPyramidExtractor, PriorProjection, Prompter, prior_loss

__all__ = [
    "BottleneckStack",
    "ConcatFuseBlock",
    "Encoder",
    "FrozenPyramidExtractor",
    "Generator",
    "GeneratorOutput",
    "LptBlock",
    "PatchDiscriminator",
    "PlainResidualBlock",
    "PriorProjection",
    "Prompter",
    "SpaBlock",
    "UpsampleConv",
    "attention_scores",
    "attention_transfer",
    "composite_output",
    "prior_loss",
    "region_normalize",
]
