"""Left-UNet encoder / feature extractor, decoder with feature taps, classifier head."""

from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn

from . import nn as cnn
from .errors import ContractError, DimensionError

DEFAULT_CHANNELS = (32, 64, 128, 256, 320)
LEVELS = 5
MULTIPLE = 2 ** LEVELS


@dataclass
class ArchConfig:
    channels: List[int] = field(default_factory=lambda: list(DEFAULT_CHANNELS))
    num_classes: int = 1000
    scale: float = 1.0

    def __post_init__(self):
        if len(self.channels) != LEVELS:
            raise ContractError(f"need exactly {LEVELS} channel widths, got {self.channels}")
        if self.scale <= 0:
            raise ContractError("scale must be positive")
        if min(self.widths) < 4:
            raise ContractError(f"scaled widths {self.widths} fall below 4")

    @property
    def widths(self):
        return [max(1, int(round(c * self.scale))) for c in self.channels]


@dataclass
class EncoderTaps:
    y1: torch.Tensor
    y2: torch.Tensor
    y3: torch.Tensor
    y4: torch.Tensor
    y5: torch.Tensor

    def levels(self):
        return [self.y1, self.y2, self.y3, self.y4, self.y5]


@dataclass
class DecoderTaps:
    e1: torch.Tensor
    e2: torch.Tensor
    e3: torch.Tensor
    e4: torch.Tensor
    x_hat: Optional[torch.Tensor] = None

    def levels(self):
        return [self.e1, self.e2, self.e3, self.e4]


class LeftUNet(nn.Module):
    """Five stride-2 levels of two 3x3 convs each.

    Convolutions are shared by both modes; only the block-final activation of
    levels 1-4 differs (PReLU for classification, GDN for the codec).
    conv_5_2 has no activation.
    """

    def __init__(self, widths):
        super().__init__()
        c_prev = 3
        for l, c in enumerate(widths, start=1):
            setattr(self, f"conv_{l}_1", cnn.Conv(c_prev, c, stride=1))
            setattr(self, f"prelu_{l}_1", cnn.PReLU(c))
            setattr(self, f"conv_{l}_2", cnn.Conv(c, c, stride=2))
            if l < LEVELS:
                setattr(self, f"prelu_{l}_2", cnn.PReLU(c))
                setattr(self, f"gdn_{l}", cnn.GDN(c))
            c_prev = c

    def forward(self, x, mode="codec"):
        if mode not in ("codec", "classifier"):
            raise ContractError(f"unknown encoder mode {mode!r}")
        h, w = x.shape[-2:]
        if h % MULTIPLE or w % MULTIPLE:
            raise ContractError(f"input {h}x{w} is not a multiple of {MULTIPLE}; pad it first")
        taps = []
        for l in range(1, LEVELS + 1):
            x = getattr(self, f"prelu_{l}_1")(getattr(self, f"conv_{l}_1")(x))
            x = getattr(self, f"conv_{l}_2")(x)
            if l < LEVELS:
                act = f"gdn_{l}" if mode == "codec" else f"prelu_{l}_2"
                x = getattr(self, act)(x)
            taps.append(x)
        return EncoderTaps(*taps)


class Decoder(nn.Module):
    def __init__(self, widths):
        super().__init__()
        self.widths = list(widths)
        outs = [3] + self.widths[:-1]
        for l in range(LEVELS, 0, -1):
            c = self.widths[l - 1]
            setattr(self, f"deconv_{l}_1", cnn.Deconv(c, c))
            setattr(self, f"prelu_{l}_1", cnn.PReLU(c))
            setattr(self, f"conv_{l}_2", cnn.Conv(c, outs[l - 1], stride=1))
            if l > 1:
                setattr(self, f"gdn_{l}", cnn.GDN(outs[l - 1]))

    def forward(self, y_hat, taps_only=False):
        """Return e1..e4 and, unless ``taps_only``, the reconstruction."""
        if y_hat.shape[-3] != self.widths[-1]:
            raise DimensionError(f"latent has {y_hat.shape[-3]} channels, "
                                 f"decoder expects {self.widths[-1]}")
        x = y_hat
        taps = {}
        for l in range(LEVELS, 1, -1):
            x = getattr(self, f"prelu_{l}_1")(getattr(self, f"deconv_{l}_1")(x))
            x = getattr(self, f"gdn_{l}")(getattr(self, f"conv_{l}_2")(x))
            taps[f"e{l - 1}"] = x
        x_hat = None
        if not taps_only:
            x_hat = self.conv_1_2(self.prelu_1_1(self.deconv_1_1(x)))
        return DecoderTaps(x_hat=x_hat, **taps)


class ClassifierHead(nn.Module):
    def __init__(self, c_in, num_classes):
        super().__init__()
        self.linear = cnn.Linear(c_in, num_classes)

    def forward(self, y5):
        return self.linear(cnn.avgpool_global(y5))


class CodecModel(nn.Module):
    """Encoder, decoder, classifier head and latent density in one container.

    ``state_dict()`` keys are the canonical CPWT entry names
    (``enc.conv_1_1.w``, ``dec.deconv_5_1.w``, ``head.linear.w``, ...).
    """

    def __init__(self, arch=None):
        super().__init__()
        from .entropy import FactorizedDensity

        self.arch = arch or ArchConfig()
        widths = self.arch.widths
        self.enc = LeftUNet(widths)
        self.dec = Decoder(widths)
        self.head = ClassifierHead(widths[-1], self.arch.num_classes)
        self.density = FactorizedDensity(widths[-1])

    @property
    def latent_channels(self):
        return self.arch.widths[-1]

    def encode(self, x, mode="codec"):
        return self.enc(x, mode)

    def decode(self, y_hat, taps_only=False):
        return self.dec(y_hat, taps_only)

    def classify(self, x, mode="classifier"):
        return self.head(self.enc(x, mode).y5)
