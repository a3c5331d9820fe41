"""Binds a trained :class:`CodecModel` to the container format.

A codec weight file is a CPWT file holding the model's ``state_dict`` plus a few
``meta.*`` entries (layer widths, class count, quality index, lambda). Its
8-byte digest is stamped into every container it produces.
"""

import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch

from . import bitstream, weights
from .data import ImageBuffer, crop, pad_to_multiple
from .entropy import build_symbol_grid, clamp_to_support, quantize, range_decode, range_encode
from .errors import BindingError, ConfigError, DimensionError
from .models import ArchConfig, CodecModel


def codec_entries(model, quality_index=0, lam=0.0):
    entries = OrderedDict((k, v.detach().float()) for k, v in model.state_dict().items())
    entries["meta.channels"] = np.asarray(model.arch.widths, dtype=np.float32)
    entries["meta.num_classes"] = np.asarray([model.arch.num_classes], dtype=np.float32)
    entries["meta.quality_index"] = np.asarray([quality_index], dtype=np.float32)
    entries["meta.lambda"] = np.asarray([lam], dtype=np.float32)
    return entries


def model_from_entries(entries):
    try:
        widths = [int(c) for c in entries["meta.channels"]]
        num_classes = int(entries["meta.num_classes"][0])
    except KeyError as e:
        raise ConfigError(f"weight file lacks {e.args[0]}") from None
    model = CodecModel(ArchConfig(channels=widths, num_classes=num_classes))
    state = {k: torch.as_tensor(v) for k, v in entries.items() if not k.startswith("meta.")}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise ConfigError(f"weight file mismatch: missing {missing[:3]}, "
                          f"unexpected {unexpected[:3]}")
    return model


def save_codec(path, model, quality_index=0, lam=0.0):
    return weights.save(path, codec_entries(model, quality_index, lam))


def resolve_weights(path, quality=None):
    """A weights argument is either a CPWT file or a directory of ``codec_q{Q}.cpwt``."""
    if os.path.isdir(path):
        if quality is None:
            raise ConfigError("a weight directory needs a quality index")
        path = os.path.join(path, f"codec_q{quality}.cpwt")
    if not os.path.exists(path):
        raise ConfigError(f"weight file not found: {path}")
    return path


@dataclass
class EncodedImage:
    data: bytes
    header: bitstream.ContainerHeader
    latents: np.ndarray
    clamped: int


class Codec:
    """Inference-only image codec: encode images to containers and back."""

    def __init__(self, model, quality_index=0, lam=0.0, precision=16, model_hash=None):
        self.model = model.eval()
        self.quality_index = int(quality_index)
        self.lam = float(lam)
        self.grid = build_symbol_grid(model.density, precision)
        if model_hash is None:
            model_hash = weights.digest(weights.dumps(codec_entries(model, quality_index, lam)))
        self.model_hash = model_hash

    @classmethod
    def from_file(cls, path, precision=16):
        with open(path, "rb") as f:
            raw = f.read()
        entries = weights.loads(raw)
        model = model_from_entries(entries)
        q = int(entries["meta.quality_index"][0])
        lam = float(entries["meta.lambda"][0])
        return cls(model, q, lam, precision, model_hash=weights.digest(raw))

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    @torch.no_grad()
    def analyze(self, x):
        """(3, H, W) padded tensor -> integer latents (C, H/32, W/32)."""
        y5 = self.model.encode(x[None].to(self.dtype), "codec").y5[0]
        return quantize(y5, "infer").to(torch.int64).numpy()

    def encode(self, img):
        """Encode an ImageBuffer or an unpadded (3, H, W) tensor."""
        x, (h, w) = pad_to_multiple(img)
        latents, clamped = clamp_to_support(self.analyze(x), self.grid)
        payload = range_encode(latents, self.grid)
        header = bitstream.ContainerHeader(self.quality_index, w, h, latents.shape[0],
                                           self.model_hash, len(payload))
        return EncodedImage(bitstream.serialize(header, payload), header, latents, clamped)

    def read(self, data):
        """Parse a container and entropy-decode its latents (no network evaluation)."""
        header, payload = bitstream.parse(data)
        if header.model_hash != self.model_hash:
            raise BindingError(f"container was made with model {header.model_hash.hex()}, "
                               f"loaded weights are {self.model_hash.hex()}")
        if header.latent_channels != self.grid.channels:
            raise DimensionError(f"container has {header.latent_channels} latent channels, "
                                 f"model has {self.grid.channels}")
        return header, range_decode(payload, self.grid, header.latent_shape)

    @torch.no_grad()
    def synthesize(self, latents, taps_only=False):
        y_hat = torch.as_tensor(latents).to(self.dtype)
        return y_hat, self.model.decode(y_hat[None], taps_only)

    def decode(self, data):
        """Container bytes -> reconstructed ImageBuffer cropped to the original size."""
        header, latents = self.read(data)
        _, taps = self.synthesize(latents)
        x_hat = crop(taps.x_hat[0], (header.original_height, header.original_width))
        return ImageBuffer.from_tensor(x_hat)
