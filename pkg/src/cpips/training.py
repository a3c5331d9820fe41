"""Loss terms, the joint objective, and the two training stages.

Stage 1 trains the Left-UNet in classifier mode (PReLU path) with a linear head.
Stage 2 starts the codec from those weights and minimizes

    R + lam * 255^2 * D + alpha * L_C + beta * L_R

with R in bits per pixel, D the MSE on [0, 1] pixels, L_C the cross-entropy of the
head on the codec-path latent, and L_R the l1 distance between decoder and
encoder taps.
"""

import json
import math
import os
from dataclasses import dataclass, field, fields

import torch

from . import nn as cnn
from .entropy import quantize, rate_loss
from .errors import ConfigError, ContractError, DimensionError, TrainingError
from .models import ArchConfig, CodecModel

PIXEL_SCALE = 255.0 ** 2
DEFAULT_LAMBDAS = {1: 0.0018, 2: 0.0067, 3: 0.025, 4: 0.0932}


@dataclass
class TrainConfig:
    alpha: float = 0.3
    beta: float = 1.0
    lambda_table: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    learning_rate: float = 1e-4
    epochs_stage1: int = 20
    epochs_stage2: int = 30
    batch_size: int = 16
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)
    quality_index: int = 1
    crop_size: int = 64
    max_steps: int = 0
    reg_mode: str = "mean"
    straight_through: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if any(v <= 0 for v in self.lambda_table.values()):
            raise ConfigError("every lambda must be positive")
        if self.reg_mode not in ("mean", "sum"):
            raise ConfigError(f"reg_mode must be 'mean' or 'sum', got {self.reg_mode!r}")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size and learning_rate must be positive")

    @property
    def lam(self):
        try:
            return self.lambda_table[self.quality_index]
        except KeyError:
            raise ConfigError(f"no lambda for quality index {self.quality_index}") from None


def _parse_bool(v):
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


def parse_config(text):
    """Parse ``key = value`` lines (``#`` starts a comment).

    Keys are the TrainConfig field names, ``lambda.<q>`` for table entries and
    ``arch.channels`` / ``arch.num_classes`` / ``arch.scale``.
    """
    kw, arch, lambdas = {}, {}, {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("lambda."):
                lambdas[int(key[7:])] = float(value)
            elif key == "arch.channels":
                arch["channels"] = [int(c) for c in value.split(",")]
            elif key == "arch.num_classes":
                arch["num_classes"] = int(value)
            elif key == "arch.scale":
                arch["scale"] = float(value)
            elif key in types and key not in ("arch", "lambda_table"):
                t = types[key]
                conv = {"float": float, "int": int, "str": str, "bool": _parse_bool}[
                    t if isinstance(t, str) else t.__name__]
                kw[key] = conv(value)
            else:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value {value!r} for {key}") from None
    if lambdas:
        kw["lambda_table"] = lambdas
    if arch:
        try:
            kw["arch"] = ArchConfig(**arch)
        except ContractError as e:
            raise ConfigError(f"invalid architecture: {e}") from None
    return TrainConfig(**kw)


def dump_config(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "arch":
            lines.append(f"arch.channels = {','.join(str(c) for c in v.channels)}")
            lines.append(f"arch.num_classes = {v.num_classes}")
            lines.append(f"arch.scale = {v.scale!r}")
        elif f.name == "lambda_table":
            lines.extend(f"lambda.{q} = {lam!r}" for q, lam in sorted(v.items()))
        else:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None


# --- loss terms ----------------------------------------------------------------


def classification_loss(logits, target):
    return cnn.softmax_cross_entropy(logits, target)


def distortion_loss(x, x_hat, dims=None):
    """MSE over pixels and channels, on the unpadded ``dims`` region if given."""
    if dims is not None:
        h, w = dims
        x, x_hat = x[..., :h, :w], x_hat[..., :h, :w]
    if x.shape != x_hat.shape:
        raise DimensionError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((x - x_hat) ** 2)


def regularization_loss(enc_taps, dec_taps, mode="mean"):
    """l1 distance between e^l and y^l over l = 1..4; per-level mean by default."""
    total = 0.0
    for y, e in zip(enc_taps.levels()[:4], dec_taps.levels()):
        if y.shape != e.shape:
            raise DimensionError(f"tap shapes differ: {tuple(y.shape)} vs {tuple(e.shape)}")
        d = torch.abs(e - y)
        total = total + (d.mean() if mode == "mean" else d.sum())
    return total


def total_loss(model, x, target, cfg, lam=None, generator=None):
    """One forward pass through the codec; returns ``(loss, breakdown)``."""
    lam = cfg.lam if lam is None else lam
    n, _, h, w = x.shape
    enc = model.encode(x, "codec")
    y_tilde = quantize(enc.y5, "ste" if cfg.straight_through else "train", generator)
    bits = rate_loss(y_tilde, model.density)
    bpp = bits / (n * h * w)
    dec = model.decode(y_tilde)
    mse = distortion_loss(x, dec.x_hat)
    l_c = classification_loss(model.head(enc.y5), target)
    l_r = regularization_loss(enc, dec, cfg.reg_mode)
    terms = {
        "rate": bpp,
        "distortion": lam * PIXEL_SCALE * mse,
        "classification": cfg.alpha * l_c,
        "regularization": cfg.beta * l_r,
    }
    loss = terms["rate"] + terms["distortion"] + terms["classification"] + terms["regularization"]
    breakdown = {k: v.item() for k, v in terms.items()}
    breakdown.update(total=loss.item(), bits=bits.item(), bpp=bpp.item(), mse=mse.item(),
                     l_c=l_c.item(), l_r=l_r.item())
    bad = [k for k, v in breakdown.items() if not math.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite loss terms {bad}: {breakdown}")
    return loss, breakdown


# --- training loops --------------------------------------------------------------


class JsonlLog:
    def __init__(self, path=None):
        self.path = path
        self.records = []
        self._f = open(path, "w", encoding="utf-8") if path else None

    def __call__(self, record):
        self.records.append(record)
        if self._f:
            self._f.write(json.dumps(record) + "\n")
            self._f.flush()

    def close(self):
        if self._f:
            self._f.close()


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _augment(x, generator, crop=None):
    """Random crop (to ``crop``) and horizontal flip, per batch."""
    if crop is not None and (x.shape[-1] > crop or x.shape[-2] > crop):
        ch, cw = min(crop, x.shape[-2]), min(crop, x.shape[-1])
        top = int(torch.randint(0, x.shape[-2] - ch + 1, (1,), generator=generator))
        left = int(torch.randint(0, x.shape[-1] - cw + 1, (1,), generator=generator))
        x = x[..., top:top + ch, left:left + cw]
    if bool(torch.rand((), generator=generator) < 0.5):
        x = x.flip(-1)
    return x


@torch.no_grad()
def accuracy(model, images, labels, mode="classifier", batch_size=256):
    correct = 0
    for i in range(0, len(images), batch_size):
        logits = model.classify(images[i:i + batch_size], mode)
        correct += int((logits.argmax(-1) == labels[i:i + batch_size]).sum())
    return correct / max(1, len(images))


@torch.no_grad()
def mean_classification_loss(model, images, labels, mode="classifier", batch_size=256):
    total = 0.0
    for i in range(0, len(images), batch_size):
        logits = model.classify(images[i:i + batch_size], mode)
        total += float(classification_loss(logits, labels[i:i + batch_size])) * len(logits)
    return total / len(images)


def pretrain_classifier(images, labels, cfg, log=None, model=None):
    """Stage 1: classifier-mode encoder + head on labeled (N, 3, H, W) images."""
    if len(images) == 0:
        raise ConfigError("classification dataset is empty")
    torch.manual_seed(cfg.seed)
    g = torch.Generator().manual_seed(cfg.seed)
    model = model or CodecModel(cfg.arch)
    params = list(model.enc.parameters()) + list(model.head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    for epoch in range(cfg.epochs_stage1):
        model.train()
        total, correct = 0.0, 0
        for idx in _batches(len(images), cfg.batch_size, g):
            x = _augment(images[idx], g)
            logits = model.classify(x, "classifier")
            loss = classification_loss(logits, labels[idx])
            opt.zero_grad()
            cnn.backward(loss)
            opt.step()
            cnn.project_constraints(model)
            total += loss.item() * len(idx)
            correct += int((logits.argmax(-1) == labels[idx]).sum())
        if log is not None:
            log({"stage": 1, "epoch": epoch, "loss": total / len(images),
                 "top1": correct / len(images)})
    return model.eval()


def init_from_pretrained(pretrained, arch):
    """Fresh codec whose encoder convolutions, PReLUs and head come from stage 1."""
    model = CodecModel(arch)
    state = model.state_dict()
    for k, v in pretrained.state_dict().items():
        if (k.startswith("enc.") and ".gdn_" not in k) or k.startswith("head."):
            if state[k].shape != v.shape:
                raise ConfigError(f"pretrained {k} has shape {tuple(v.shape)}, "
                                  f"expected {tuple(state[k].shape)}")
            state[k] = v.clone()
    model.load_state_dict(state)
    return model


def train_joint(images, labels, cfg, pretrained=None, lam=None, log=None,
                allow_cold_start=False):
    """Stage 2: minimize the joint objective; returns the trained CodecModel."""
    if len(images) == 0:
        raise ConfigError("training dataset is empty")
    if pretrained is None and not allow_cold_start:
        raise ConfigError("joint training needs pretrained weights (or allow_cold_start)")
    torch.manual_seed(cfg.seed)
    g = torch.Generator().manual_seed(cfg.seed)
    noise = torch.Generator().manual_seed(cfg.seed + 1)
    model = init_from_pretrained(pretrained, cfg.arch) if pretrained else CodecModel(cfg.arch)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    lam = cfg.lam if lam is None else lam
    step = 0
    model.train()
    for epoch in range(cfg.epochs_stage2):
        for idx in _batches(len(images), cfg.batch_size, g):
            x = _augment(images[idx], g, cfg.crop_size)
            loss, parts = total_loss(model, x, labels[idx], cfg, lam, noise)
            opt.zero_grad()
            cnn.backward(loss)
            opt.step()
            cnn.project_constraints(model)
            if log is not None:
                log({"stage": 2, "step": step, "epoch": epoch, **parts})
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                return model.eval()
    return model.eval()


@torch.no_grad()
def evaluate_codec(codec, images):
    """Mean actual bits per pixel (container payload) and MSE of the reconstructions."""
    bpp, mse = [], []
    for x in images:
        enc = codec.encode(x)
        rec = codec.decode(enc.data).to_tensor(x.dtype)
        bpp.append(8 * enc.header.payload_length / (x.shape[-1] * x.shape[-2]))
        mse.append(float(torch.mean((rec - x) ** 2)))
    return sum(bpp) / len(bpp), sum(mse) / len(mse)


def save_log(path, records):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
