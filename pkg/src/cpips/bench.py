"""Wall-clock comparison of three ways to get a perceptual distance for an image pair.

``bitstream``  entropy-decode both containers, run the decoder up to e1, CPIPS.
``pixels``     encoder forward + rounding for both images, decoder taps, CPIPS.
``full``       both images through every encoder and decoder layer, all taps
               channel-normalized and compared (a conventional feature-network
               perceptual distance built from the same layers).
"""

import csv
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import load_image, pad_to_multiple
from .entropy import quantize
from .errors import ConfigError
from .metric import CpipsMetric, normalize_channels

IMAGE_SUFFIXES = (".ppm", ".png")

BENCH_SCHEMA = {
    "type": "object",
    "required": ["images", "pairs", "reps", "methods", "speedup", "config"],
    "properties": {
        "images": {"type": "integer", "minimum": 2},
        "pairs": {"type": "integer", "minimum": 1},
        "reps": {"type": "integer", "minimum": 1},
        "methods": {
            "type": "object",
            "required": ["bitstream", "pixels", "full"],
            "additionalProperties": {
                "type": "object",
                "required": ["mean_s", "std_s"],
                "properties": {"mean_s": {"type": "number", "exclusiveMinimum": 0},
                               "std_s": {"type": "number", "minimum": 0}},
            },
        },
        "speedup": {
            "type": "object",
            "required": ["full_over_bitstream", "pixels_over_bitstream"],
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
        "config": {"type": "object"},
    },
}


@dataclass
class BenchReport:
    images: int
    pairs: int
    reps: int
    methods: dict
    speedup: dict
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method", "mean_s", "std_s", "reps"])
            for name, m in self.methods.items():
                w.writerow([name, f"{m['mean_s']:.6g}", f"{m['std_s']:.6g}", self.reps])


@torch.no_grad()
def full_network_distance(codec, a, b):
    """Both images through all encoder and decoder layers; uniform channel weights."""
    feats = []
    for x in (a, b):
        padded, _ = pad_to_multiple(x)
        enc = codec.model.encode(padded[None].to(codec.dtype), "codec")
        y_hat = quantize(enc.y5, "infer")
        dec = codec.model.decode(y_hat)
        maps = enc.levels()[:4] + [y_hat] + dec.levels() + [dec.x_hat]
        feats.append([normalize_channels(f) for f in maps])
    return float(sum(torch.sum((fa - fb) ** 2, dim=-3).mean() for fa, fb in zip(*feats)))


def list_images(directory):
    if not os.path.isdir(directory):
        raise ConfigError(f"not a directory: {directory}")
    return sorted(os.path.join(directory, n) for n in os.listdir(directory)
                  if n.lower().endswith(IMAGE_SUFFIXES))


def _time(fn, reps):
    fn()  # warm-up, discarded
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench(images, codec, mw, reps=10, noise=0.05, seed=0, single_thread=True):
    """Time the three pipelines on (original, re-encoded noisy copy) pairs.

    ``images`` is a directory or a list of (3, H, W) tensors.
    """
    if isinstance(images, (str, os.PathLike)):
        images = [load_image(p).to_tensor() for p in list_images(images)]
    if len(images) < 2:
        raise ConfigError("bench needs at least two images")
    if reps < 1:
        raise ConfigError("reps must be positive")
    threads = torch.get_num_threads()
    if single_thread:
        torch.set_num_threads(1)
    try:
        rng = np.random.default_rng(seed)
        metric = CpipsMetric(codec, mw)
        pairs = []
        for x in images:
            noisy = (x + torch.from_numpy(rng.normal(0, noise, x.shape)).to(x.dtype)).clamp(0, 1)
            bits_a, bits_b = codec.encode(x).data, codec.encode(noisy).data
            distorted = codec.decode(bits_b).to_tensor(x.dtype)
            pairs.append((x, distorted, bits_a, bits_b))
        times = {"bitstream": [], "pixels": [], "full": []}
        for x, xd, ba, bb in pairs:
            times["bitstream"] += _time(lambda: metric.distance_from_bitstreams(ba, bb), reps)
            times["pixels"] += _time(lambda: metric.distance_from_pixels(x, xd), reps)
            times["full"] += _time(lambda: full_network_distance(codec, x, xd), reps)
    finally:
        torch.set_num_threads(threads)
    methods = {k: {"mean_s": statistics.fmean(v), "std_s": statistics.pstdev(v)}
               for k, v in times.items()}
    base = methods["bitstream"]["mean_s"]
    speedup = {"full_over_bitstream": methods["full"]["mean_s"] / base,
               "pixels_over_bitstream": methods["pixels"]["mean_s"] / base}
    h, w = images[0].shape[-2:]
    config = {"height": int(h), "width": int(w), "noise": noise, "seed": seed,
              "single_thread": single_thread, "widths": codec.model.arch.widths}
    return BenchReport(len(images), len(pairs), reps, methods, speedup, config)
