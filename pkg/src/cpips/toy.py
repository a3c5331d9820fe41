"""Procedural toy datasets for desk-scale runs.

``make_classification`` renders ten easily separable pattern classes;
``make_judgments`` builds 2AFC triplets whose preferred patch is known because it
carries less additive noise.  ``python -m cpips.toy OUT_DIR`` writes both as PPM
files plus JSON-lines manifests.
"""

import argparse
import json
import os

import numpy as np
import torch

from .data import ImageBuffer, JudgmentRecord, save_image

NUM_CLASSES = 10


def _render(kind, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / size
    freq = rng.uniform(3, 7)
    phase = rng.uniform(0, 2 * np.pi)
    cy, cx = rng.uniform(0.3, 0.7, 2)
    r = rng.uniform(0.15, 0.3)
    if kind == 0:
        mask = np.sin(2 * np.pi * freq * yy + phase) > 0
    elif kind == 1:
        mask = np.sin(2 * np.pi * freq * xx + phase) > 0
    elif kind == 2:
        mask = np.sin(2 * np.pi * freq * (xx + yy) / np.sqrt(2) + phase) > 0
    elif kind == 3:
        mask = (np.sin(2 * np.pi * freq * xx + phase) > 0) ^ (np.sin(2 * np.pi * freq * yy) > 0)
    elif kind == 4:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
    elif kind == 5:
        mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)
    elif kind == 6:
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = np.abs(d - r) < 0.06
    elif kind == 7:
        mask = (np.abs(yy - cy) < 0.07) | (np.abs(xx - cx) < 0.07)
    elif kind == 8:
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(4, 9)):
            py, px = rng.uniform(0, 1, 2)
            mask |= (yy - py) ** 2 + (xx - px) ** 2 < 0.06 ** 2
    else:
        mask = None
    fg = rng.uniform(0, 1, 3)
    bg = rng.uniform(0, 1, 3)
    if mask is None:
        t = np.cos(phase) * xx + np.sin(phase) * yy
        t = (t - t.min()) / (np.ptp(t) + 1e-9)
        img = bg[None, None] * (1 - t[..., None]) + fg[None, None] * t[..., None]
    else:
        img = np.where(mask[..., None], fg[None, None], bg[None, None])
    return img


def make_classification(n, size=32, seed=0, noise=0.05):
    """(images[N, 3, size, size], labels[N]) with balanced classes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % NUM_CLASSES
    rng.shuffle(labels)
    imgs = np.empty((n, 3, size, size), dtype=np.float32)
    for i, k in enumerate(labels):
        img = _render(int(k), size, rng) + rng.normal(0, noise, (size, size, 3))
        imgs[i] = np.clip(img, 0, 1).transpose(2, 0, 1)
    return torch.from_numpy(imgs), torch.from_numpy(labels.astype(np.int64))


def make_judgments(n, size=64, seed=0, weak=(0.01, 0.04), strong=(0.12, 0.25)):
    """2AFC records: one patch gets weak noise, the other strong; humans prefer the weak one."""
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        ref = np.clip(_render(int(rng.integers(NUM_CLASSES)), size, rng)
                      + rng.normal(0, 0.02, (size, size, 3)), 0, 1)
        lo = np.clip(ref + rng.normal(0, rng.uniform(*weak), ref.shape), 0, 1)
        hi = np.clip(ref + rng.normal(0, rng.uniform(*strong), ref.shape), 0, 1)
        swap = bool(rng.integers(2))
        p0, p1 = (hi, lo) if swap else (lo, hi)
        t = [torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1), dtype=np.float32))
             for a in (ref, p0, p1)]
        records.append(JudgmentRecord(*t, h=1.0 if swap else 0.0, subset="noise"))
    return records


def write_classification(out_dir, n, size=32, seed=0):
    images, labels = make_classification(n, size, seed)
    os.makedirs(os.path.join(out_dir, "cls"), exist_ok=True)
    path = os.path.join(out_dir, "classification.jsonl")
    with open(path, "w") as f:
        for i, (img, label) in enumerate(zip(images, labels)):
            rel = f"cls/{i:05d}.ppm"
            save_image(os.path.join(out_dir, rel), img)
            f.write(json.dumps({"path": rel, "label": int(label)}) + "\n")
    return path


def write_judgments(out_dir, n, size=64, seed=0):
    records = make_judgments(n, size, seed)
    os.makedirs(os.path.join(out_dir, "2afc"), exist_ok=True)
    path = os.path.join(out_dir, "judgments.jsonl")
    with open(path, "w") as f:
        for i, r in enumerate(records):
            names = {}
            for key in ("ref", "p0", "p1"):
                rel = f"2afc/{i:05d}_{key}.ppm"
                save_image(os.path.join(out_dir, rel), getattr(r, key))
                names[key] = rel
            f.write(json.dumps({**names, "h": r.h, "subset": r.subset}) + "\n")
    return path


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m cpips.toy", description=__doc__.split("\n")[0])
    p.add_argument("out_dir")
    p.add_argument("--classification", type=int, default=2000)
    p.add_argument("--judgments", type=int, default=1000)
    p.add_argument("--size", type=int, default=32, help="classification image size")
    p.add_argument("--patch", type=int, default=64, help="judgment patch size")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.classification:
        print(write_classification(args.out_dir, args.classification, args.size, args.seed))
    if args.judgments:
        print(write_judgments(args.out_dir, args.judgments, args.patch, args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
