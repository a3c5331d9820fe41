"""CPIPS: perceptual distance over decoder taps e1..e4 and the quantized latent.

Each of the five feature maps is unit-normalized along channels, weighted per
channel, and the squared difference is averaged over space; the five layer
terms are summed.
"""

import json
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from . import nn as cnn
from . import weights
from .errors import ConfigError, DimensionError

NORM_EPS = 1e-10
N_LAYERS = 5


def normalize_channels(f, eps=NORM_EPS):
    norm = torch.sqrt(torch.sum(f * f, dim=-3, keepdim=True))
    return f / (norm + eps)


def layer_distance(f, f0, w):
    """Spatial mean of ||w * (f - f0)||^2; features must already be normalized.

    Batched inputs (N, C, H, W) give one value per sample.
    """
    if f.shape != f0.shape:
        raise DimensionError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(f0.shape)}")
    if w.shape != (f.shape[-3],):
        raise DimensionError(f"{w.numel()} weights for {f.shape[-3]} channels")
    diff = w.reshape(-1, 1, 1) * (f - f0)
    return torch.sum(diff * diff, dim=-3).mean(dim=(-2, -1))


def cpips_features(dec_taps, y_hat):
    """[e1, e2, e3, e4, y_hat], channel-normalized."""
    return [normalize_channels(f) for f in dec_taps.levels() + [y_hat]]


def cpips_distance(feats_a, feats_b, mw):
    """Sum of the five layer distances between two normalized feature lists."""
    if len(feats_a) != N_LAYERS or len(feats_b) != N_LAYERS:
        raise DimensionError(f"need {N_LAYERS} feature maps per image")
    total = 0.0
    for fa, fb, w in zip(feats_a, feats_b, mw.layers()):
        total = total + layer_distance(fa, fb, w)
    return total


class MetricWeights(nn.Module):
    """Nonnegative per-channel weights, one vector per layer (w1..w4 for e1..e4, w5 for y_hat)."""

    def __init__(self, widths):
        super().__init__()
        if len(widths) != N_LAYERS:
            raise DimensionError(f"need {N_LAYERS} channel counts, got {widths}")
        for i, c in enumerate(widths, start=1):
            self.register_parameter(f"w{i}", nn.Parameter(torch.ones(c)))

    def layers(self):
        return [getattr(self, f"w{i}") for i in range(1, N_LAYERS + 1)]

    @torch.no_grad()
    def project_(self):
        for w in self.layers():
            w.clamp_(min=0.0)

    def scaled(self, c):
        out = MetricWeights([w.numel() for w in self.layers()]).to(self.w1.dtype)
        with torch.no_grad():
            for dst, src in zip(out.layers(), self.layers()):
                dst.copy_(src * c)
        return out


class JudgmentNet(nn.Module):
    """Maps a distance pair (d0, d1) to the predicted fraction preferring patch 1.

    Input features are [d0, d1, d0 - d1, d0 / (d1 + 0.1), d1 / (d0 + 0.1)];
    two hidden layers of 32 leaky-ReLU units; output squeezed into (eps, 1 - eps).
    """

    def __init__(self, hidden=32, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.l1 = cnn.Linear(5, hidden)
        self.l2 = cnn.Linear(hidden, hidden)
        self.l3 = cnn.Linear(hidden, 1)

    def forward(self, d0, d1):
        e = 0.1
        x = torch.stack([d0, d1, d0 - d1, d0 / (d1 + e), d1 / (d0 + e)], dim=-1)
        x = nn.functional.leaky_relu(self.l1(x), 0.2)
        x = nn.functional.leaky_relu(self.l2(x), 0.2)
        p = torch.sigmoid(self.l3(x)[..., 0])
        return self.eps + (1 - 2 * self.eps) * p


def bce(h_pred, h):
    return -(h * torch.log(h_pred) + (1 - h) * torch.log(1 - h_pred)).mean()


def score_2afc(d0, d1, h):
    """Per-record credit: h if the metric prefers p1, 1 - h if p0, 0.5 on ties."""
    d0, d1, h = (np.asarray(v, dtype=np.float64) for v in (d0, d1, h))
    return np.where(d1 < d0, h, np.where(d0 < d1, 1.0 - h, 0.5))


def eval_2afc(records, metric):
    """Mean 2AFC credit; ``metric(record)`` returns the pair (d0, d1)."""
    pairs = [metric(r) for r in records]
    if not pairs:
        return 0.0
    d0, d1 = zip(*pairs)
    return float(score_2afc(d0, d1, [r.h for r in records]).mean())


def eval_2afc_report(records, metric):
    pairs = [metric(r) for r in records]
    d0 = np.array([p[0] for p in pairs], dtype=np.float64)
    d1 = np.array([p[1] for p in pairs], dtype=np.float64)
    credit = score_2afc(d0, d1, [r.h for r in records])
    report = {"n": len(records), "accuracy": float(credit.mean()) if len(records) else 0.0}
    subsets = sorted({r.subset for r in records if r.subset is not None})
    if subsets:
        report["subsets"] = {
            s: {"n": int(sum(r.subset == s for r in records)),
                "accuracy": float(np.mean([c for c, r in zip(credit, records) if r.subset == s]))}
            for s in subsets}
    return report, d0, d1


# --- evaluation from pixels or bitstreams -------------------------------------


class CpipsMetric:
    """CPIPS bound to a codec and trained metric weights."""

    def __init__(self, codec, mw, judge=None):
        self.codec = codec
        self.mw = mw.to(codec.dtype)
        self.judge = judge

    def features_from_latents(self, latents):
        y_hat, taps = self.codec.synthesize(latents, taps_only=True)
        return cpips_features(taps, y_hat[None])

    def features_from_bitstream(self, data):
        header, latents = self.codec.read(data)
        return header, self.features_from_latents(latents)

    def features_from_pixels(self, x):
        """Encoder forward + rounding, no entropy coding; x is an unpadded (3, H, W) tensor."""
        from .data import pad_to_multiple

        padded, _ = pad_to_multiple(x)
        return self.features_from_latents(self.codec.analyze(padded))

    @torch.no_grad()
    def distance(self, feats_a, feats_b):
        return float(cpips_distance(feats_a, feats_b, self.mw).reshape(()))

    def distance_from_bitstreams(self, bits_a, bits_b):
        ha, fa = self.features_from_bitstream(bits_a)
        hb, fb = self.features_from_bitstream(bits_b)
        if (ha.padded_width, ha.padded_height) != (hb.padded_width, hb.padded_height):
            raise DimensionError("containers have different padded dimensions")
        return self.distance(fa, fb)

    def distance_from_pixels(self, a, b):
        return self.distance(self.features_from_pixels(a), self.features_from_pixels(b))

    def pair(self, record):
        ref = self.features_from_pixels(record.ref)
        return (self.distance(ref, self.features_from_pixels(record.p0)),
                self.distance(ref, self.features_from_pixels(record.p1)))


def distance_from_bitstreams(bits_a, bits_b, codec, mw):
    return CpipsMetric(codec, mw).distance_from_bitstreams(bits_a, bits_b)


# --- metric training ------------------------------------------------------------


@torch.no_grad()
def layer_statistics(metric, records):
    """Per-record, per-layer, per-channel spatial means of squared normalized
    differences for (ref, p0) and (ref, p1). CPIPS is linear in these once the
    weights are squared, which makes metric training cheap."""
    s0 = [[] for _ in range(N_LAYERS)]
    s1 = [[] for _ in range(N_LAYERS)]
    for r in records:
        ref, f0, f1 = (metric.features_from_pixels(x) for x in (r.ref, r.p0, r.p1))
        for l in range(N_LAYERS):
            s0[l].append(((ref[l] - f0[l]) ** 2).mean(dim=(-2, -1))[0])
            s1[l].append(((ref[l] - f1[l]) ** 2).mean(dim=(-2, -1))[0])
    return [torch.stack(s).double() for s in s0], [torch.stack(s).double() for s in s1]


def distances_from_statistics(stats, mw):
    return sum(s @ (w.double() ** 2) for s, w in zip(stats, mw.layers()))


def train_metric(records, codec, epochs=200, lr=1e-2, batch_size=64, seed=0, log=None):
    """Fit MetricWeights and JudgmentNet to 2AFC records with BCE; returns both."""
    if not records:
        raise ConfigError("judgment set is empty")
    torch.manual_seed(seed)
    widths = [w for w in codec.model.arch.widths[:4]] + [codec.model.latent_channels]
    mw = MetricWeights(widths).double()
    judge = JudgmentNet().double()
    stats0, stats1 = layer_statistics(CpipsMetric(codec, mw), records)
    h = torch.tensor([r.h for r in records], dtype=torch.float64)
    # Swapped-pair augmentation: ((d1, d0), 1 - h) for every record.
    a0 = [torch.cat([s0, s1]) for s0, s1 in zip(stats0, stats1)]
    a1 = [torch.cat([s1, s0]) for s0, s1 in zip(stats0, stats1)]
    target = torch.cat([h, 1 - h])
    params = list(mw.parameters()) + list(judge.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    g = torch.Generator().manual_seed(seed)
    n = target.numel()
    for epoch in range(epochs):
        order = torch.randperm(n, generator=g)
        total = 0.0
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            d0 = distances_from_statistics([s[idx] for s in a0], mw)
            d1 = distances_from_statistics([s[idx] for s in a1], mw)
            loss = bce(judge(d0, d1), target[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            mw.project_()
            total += loss.item() * idx.numel()
        if log is not None:
            log({"epoch": epoch, "bce": total / n})
    return mw.float(), judge.float()


def metric_entries(mw, judge):
    entries = OrderedDict()
    for k, v in mw.state_dict().items():
        entries[f"metric.{k}"] = v
    for k, v in judge.state_dict().items():
        entries[f"metric.D.{k}"] = v
    return entries


def save_metric(path, mw, judge):
    return weights.save(path, metric_entries(mw, judge))


def load_metric(path):
    entries = weights.load(path)
    try:
        widths = [entries[f"metric.w{i}"].shape[0] for i in range(1, N_LAYERS + 1)]
    except KeyError as e:
        raise ConfigError(f"metric file lacks {e.args[0]}") from None
    mw = MetricWeights(widths)
    mw.load_state_dict({k[len("metric."):]: torch.as_tensor(v) for k, v in entries.items()
                        if k.startswith("metric.w")})
    judge = JudgmentNet()
    judge_state = {k[len("metric.D."):]: torch.as_tensor(v) for k, v in entries.items()
                   if k.startswith("metric.D.")}
    if judge_state:
        judge.load_state_dict(judge_state)
    return mw, judge


def write_report(path, report):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
