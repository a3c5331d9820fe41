"""Acceptance criteria 1-10, each at its stated tolerance.

Every test wraps its checks in a ``Criterion`` block; a PASS/FAIL line per
criterion is printed in the terminal summary of the run.
"""

import math
import time

import numpy as np
import pytest
import torch
from scipy import stats

from cpips import nn as cnn
from cpips.bench import bench
from cpips.bitstream import ContainerHeader, parse, serialize
from cpips.codec import Codec
from cpips.data import JudgmentRecord
from cpips.entropy import SymbolGrid, ideal_bits, range_decode, range_encode, rate_loss
from cpips.metric import (CpipsMetric, MetricWeights, cpips_distance, eval_2afc, layer_distance,
                          train_metric)
from cpips.models import ArchConfig, CodecModel
from cpips.toy import make_classification, make_judgments
from cpips.training import (JsonlLog, TrainConfig, accuracy, evaluate_codec, pretrain_classifier,
                            total_loss, train_joint)

from conftest import Criterion, make_codec
from fuzz import fuzz_parse, random_grid, random_symbols
from oracles import gradient_check, model_gradient_check

TOY = ArchConfig(num_classes=10, scale=0.25)
Q_LOW, Q_HIGH = 1, 4  # lambda 0.0018 and 0.0932 from the shipped table


# --- shared desk-scale training runs ----------------------------------------------


@pytest.fixture(scope="module")
def stage1():
    x, y = make_classification(2000, 32, seed=0)
    xt, yt = make_classification(500, 32, seed=1)
    cfg = TrainConfig(arch=TOY, batch_size=32, epochs_stage1=20)
    t0 = time.perf_counter()
    model = pretrain_classifier(x, y, cfg)
    elapsed = time.perf_counter() - t0
    return model, accuracy(model, xt, yt), elapsed


@pytest.fixture(scope="module")
def joint_data():
    return make_classification(1000, 64, seed=2), make_classification(20, 64, seed=3)[0]


@pytest.fixture(scope="module")
def lambda_runs(stage1, joint_data):
    (x, y), held_out = joint_data
    out = {}
    for q in (Q_LOW, Q_HIGH):
        cfg = TrainConfig(arch=TOY, quality_index=q, batch_size=8, epochs_stage2=100,
                          max_steps=1000, learning_rate=1e-3)
        model = train_joint(x, y, cfg, pretrained=stage1[0])
        codec = Codec(model, quality_index=q, lam=cfg.lam)
        out[q] = (codec, evaluate_codec(codec, held_out))
    return out


# --- 1 -----------------------------------------------------------------------------------


def _primitive_cases(g):
    r = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64).requires_grad_()  # noqa: E731
    x, w, b = r(2, 3, 6, 6), r(4, 3, 3, 3), r(4)
    yield "conv2d", lambda: (cnn.conv2d(x, w, b, stride=2) ** 2).sum(), [x, w, b]
    xd, wd, bd = r(2, 3, 3, 3), r(3, 2, 3, 3), r(2)
    yield "deconv2d", lambda: (cnn.deconv2d(xd, wd, bd) ** 2).sum(), [xd, wd, bd]
    xp, a = r(2, 3, 4, 4), r(3)
    yield "prelu", lambda: (cnn.prelu(xp, a) ** 2).sum(), [xp, a]
    xg = r(4, 3, 3)
    beta = (torch.rand(4, generator=g, dtype=torch.float64) + 0.5).requires_grad_()
    gamma = torch.rand(4, 4, generator=g, dtype=torch.float64).requires_grad_()
    yield "gdn", lambda: (cnn.gdn(xg, beta, gamma) ** 2).sum(), [xg, beta, gamma]
    xl, wl, bl = r(3, 5), r(6, 5), r(6)
    yield "linear", lambda: (cnn.linear(xl, wl, bl) ** 2).sum(), [xl, wl, bl]
    logits = r(4, 10)
    yield "softmax-CE", lambda: cnn.softmax_cross_entropy(logits, [0, 3, 9, 5]), [logits]


def test_criterion_01_gradient_fidelity():
    with Criterion(1, "gradient fidelity (f64, step 1e-4, rel <= 1e-3, >= 100 params, < 2 min)") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        for name, f, tensors in _primitive_cases(torch.Generator().manual_seed(0)):
            worst, n = gradient_check(f, tensors, 30, rng)
            c.note(f"{name} {worst:.1e}")
            assert worst <= 1e-3, name
        torch.manual_seed(0)
        model = CodecModel(TOY).double()
        with torch.no_grad():  # move GDN couplings off the gamma >= 0 boundary
            for name, p in model.named_parameters():
                if name.endswith(".gamma"):
                    p.add_(0.01 + 0.02 * torch.rand(p.shape, dtype=p.dtype))
        x, y = make_classification(2, 32, seed=1)
        x = x.double()
        assert x.shape == (2, 3, 32, 32)
        cfg = TrainConfig(arch=TOY)

        def loss():
            return total_loss(model, x, y, cfg, generator=torch.Generator().manual_seed(7))[0]

        # classifier-path PReLUs are not part of the joint objective's graph
        params = [(n, p) for n, p in model.named_parameters()
                  if not (n.startswith("enc.prelu_") and n.split(".")[1].endswith("_2"))]
        worst, checked, straddled = model_gradient_check(loss, model, params, rng, per_tensor=4)
        elapsed = time.perf_counter() - t0
        c.note(f"joint objective {worst:.1e} on {checked} params ({straddled} kink-straddling probes skipped)")
        c.note(f"{elapsed:.1f} s")
        assert checked >= 100
        assert worst <= 1e-3
        assert elapsed < 120


# --- 2 -----------------------------------------------------------------------------------


def test_criterion_02_coder_optimality():
    with Criterion(2, "range coder within 1% + 64 bits of the Shannon bound; fuzz round-trips exact; < 30 s") as c:
        t0 = time.perf_counter()
        n, p1 = 100_000, 0.1
        grid = SymbolGrid.from_pmf([[1 - p1, p1]], [0])
        h = -(p1 * math.log2(p1) + (1 - p1) * math.log2(1 - p1))
        bound = n * h
        # a typical realization: exactly n * p1 ones at random positions
        rng = np.random.default_rng(0)
        s = np.zeros(n, dtype=np.int64)
        s[rng.choice(n, size=int(n * p1), replace=False)] = 1
        bits = 8 * len(data := range_encode(s, grid))
        assert np.array_equal(range_decode(data, grid, n), s)
        c.note(f"{bits} bits vs bound {bound:.0f} (limit {1.01 * bound + 64:.0f})")
        assert bits <= 1.01 * bound + 64
        # i.i.d. draws against the Shannon bound of their own empirical frequency
        for seed in range(5):
            s = (np.random.default_rng(seed).random(n) < p1).astype(np.int64)
            q = s.mean()
            emp = n * -(q * math.log2(q) + (1 - q) * math.log2(1 - q))
            bits = 8 * len(data := range_encode(s, grid))
            assert np.array_equal(range_decode(data, grid, n), s)
            assert bits <= 1.01 * emp + 64, (seed, bits, emp)
        for i in range(10_000):
            g = random_grid(rng)
            sym = random_symbols(rng, g, max_per_channel=60)
            data = range_encode(sym, g)
            assert np.array_equal(range_decode(data, g, sym.shape), sym), i
            assert 8 * len(data) <= 1.01 * ideal_bits(sym, g) + 64
        elapsed = time.perf_counter() - t0
        c.note(f"10^4 fuzzed round-trips exact, {elapsed:.1f} s")
        assert elapsed < 30


# --- 3 -----------------------------------------------------------------------------------


def test_criterion_03_rate_consistency(lambda_runs):
    with Criterion(3, "payload bits <= rate_loss + 2% + 64 on 10 images (frozen model)") as c:
        codec = lambda_runs[Q_HIGH][0]
        images = make_classification(10, 256, seed=4)[0]
        worst = -math.inf
        for x in images:
            enc = codec.encode(x)
            y_hat = torch.as_tensor(codec.analyze(x), dtype=codec.dtype)
            with torch.no_grad():
                r = rate_loss(y_hat[None], codec.model.density).item()
            measured = 8 * enc.header.payload_length
            worst = max(worst, measured - (1.02 * r + 64))
            assert measured <= 1.02 * r + 64, (measured, r)
        c.note(f"max(measured - limit) = {worst:.0f} bits")


# --- 4 -----------------------------------------------------------------------------------


def test_criterion_04_codec_roundtrip(lambda_runs):
    with Criterion(4, "codec round-trip exact; header identity on 10^3 headers; 10^5 fuzz inputs crash-free") as c:
        codec = lambda_runs[Q_LOW][0]
        for x in make_classification(5, 96, seed=5)[0]:
            enc = codec.encode(x[:, :90, :77])
            _, latents = codec.read(enc.data)
            assert np.array_equal(latents, enc.latents)
            a, b = codec.decode(enc.data), codec.decode(enc.data)
            assert a.pixels.tobytes() == b.pixels.tobytes()
            assert (a.height, a.width) == (90, 77)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            h = ContainerHeader(int(rng.integers(256)), int(rng.integers(1, 2 ** 32 - 32)),
                                int(rng.integers(1, 2 ** 32 - 32)), int(rng.integers(1, 2 ** 16)),
                                rng.bytes(8))
            payload = rng.bytes(int(rng.integers(0, 32)))
            data = serialize(h, payload)
            parsed, body = parse(data)
            assert (parsed, body) == (ContainerHeader(h.quality_index, h.original_width,
                                                      h.original_height, h.latent_channels,
                                                      h.model_hash, len(payload)), payload)
            assert serialize(parsed, body) == data
        valid = fuzz_parse(100_000, seed=1)
        c.note(f"{valid} of 10^5 fuzz inputs parsed as valid, the rest raised typed errors")


# --- 5 -----------------------------------------------------------------------------------


def test_criterion_05_metric_axioms(tiny_codec64):
    with Criterion(5, "metric axioms over >= 50 random instances") as c:
        codec = tiny_codec64
        widths = codec.model.arch.widths[:4] + [codec.model.latent_channels]
        g = torch.Generator().manual_seed(0)
        recs = make_judgments(8, size=64, seed=7)
        for i in range(50):
            mw = MetricWeights(widths).double()
            with torch.no_grad():
                for w in mw.layers():
                    w.copy_(torch.rand(w.shape, generator=g, dtype=torch.float64) * 2)
            m = CpipsMetric(codec, mw)
            a = torch.rand(3, 64, 96, generator=g, dtype=torch.float64)
            b = (a + 0.1 * torch.randn(a.shape, generator=g, dtype=torch.float64)).clamp(0, 1)
            fa, fb = m.features_from_pixels(a), m.features_from_pixels(b)
            d = m.distance(fa, fb)
            assert abs(m.distance(fa, fa)) <= 1e-12
            assert d == m.distance(fb, fa)
            assert d >= 0
            parts = sum(layer_distance(u, v, w).item() for u, v, w in zip(fa, fb, mw.layers()))
            assert abs(d - parts) <= 1e-10 * abs(d)
            scale = float(0.05 + 10 * torch.rand((), generator=g))
            m2 = CpipsMetric(codec, mw.scaled(scale))
            assert eval_2afc(recs, m.pair) == eval_2afc(recs, m2.pair)
        c.note("50 instances: identity, symmetry, nonnegativity, decomposition, 2AFC scale invariance")


# --- 6 -----------------------------------------------------------------------------------


@torch.no_grad()
def test_criterion_06_tap_shapes():
    with Criterion(6, "shape(e^l) == shape(y^l) for H, W in {32..160}^2 at scales 1 and 1/4") as c:
        sizes = (32, 64, 96, 128, 160)
        for arch in (ArchConfig(), TOY):
            torch.manual_seed(0)
            m = CodecModel(arch).eval()
            for h in sizes:
                for w in sizes:
                    enc = m.encode(torch.rand(1, 3, h, w))
                    dec = m.decode(torch.round(enc.y5), taps_only=True)
                    for y, e in zip(enc.levels()[:4], dec.levels()):
                        assert y.shape == e.shape, (arch.scale, h, w)
        c.note("50 (size, scale) combinations")


# --- 7 -----------------------------------------------------------------------------------


def test_criterion_07_training_smoke(stage1, joint_data, lambda_runs):
    with Criterion(7, "classifier > 40% in < 30 min; joint loss MA drops >= 20% over 500 steps; lambda ordering") as c:
        _, top1, elapsed = stage1
        c.note(f"held-out top-1 {top1:.1%} in {elapsed:.0f} s")
        assert top1 > 0.40 and elapsed < 30 * 60
        (x, y), _ = joint_data
        log = JsonlLog()
        train_joint(x, y, TrainConfig(arch=TOY, batch_size=8, epochs_stage2=100, max_steps=500),
                    pretrained=stage1[0], log=log)
        total = np.array([r["total"] for r in log.records])
        start, end = total[:50].mean(), total[450:500].mean()
        drop = 1 - end / start
        c.note(f"MA {start:.2f} -> {end:.2f} ({drop:.0%} drop)")
        assert len(total) == 500 and drop >= 0.20
        (bpp_lo, mse_lo), (bpp_hi, mse_hi) = lambda_runs[Q_LOW][1], lambda_runs[Q_HIGH][1]
        c.note(f"lambda {lambda_runs[Q_LOW][0].lam}: bpp {bpp_lo:.3f} mse {mse_lo:.4f}; "
               f"lambda {lambda_runs[Q_HIGH][0].lam}: bpp {bpp_hi:.3f} mse {mse_hi:.4f}")
        assert mse_hi < mse_lo and bpp_hi > bpp_lo


# --- 8 -----------------------------------------------------------------------------------


def test_criterion_08_synthetic_2afc(lambda_runs):
    with Criterion(8, "synthetic 2AFC held-out accuracy >= 0.85; hand fixture exact") as c:
        recs = [JudgmentRecord(None, None, None, h) for h in (1.0, 0.25, 0.6, 0.9)]
        ds = iter([(0.7, 0.2), (0.1, 0.3), (0.4, 0.4), (0.2, 0.1)])
        hand = (1.0 + 0.75 + 0.5 + 0.9) / 4
        assert eval_2afc(recs, lambda r: next(ds)) == hand
        codec = lambda_runs[Q_HIGH][0]
        data = make_judgments(1000, size=64, seed=11)
        train, held = data[:800], data[800:]
        mw, judge = train_metric(train, codec, epochs=200, seed=0)
        acc = eval_2afc(held, CpipsMetric(codec, mw, judge).pair)
        c.note(f"held-out accuracy {acc:.3f} on {len(held)} records")
        assert acc >= 0.85


# --- 9 -----------------------------------------------------------------------------------


def _bench_images(n, h=512, w=768, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        coarse = rng.random((3, h // 32, w // 32))
        smooth = np.kron(coarse, np.ones((1, 32, 32)))
        out.append(torch.from_numpy(np.clip(smooth + rng.normal(0, 0.03, smooth.shape), 0, 1)).float())
    return out


@pytest.fixture(scope="module")
def bench_report():
    torch.manual_seed(0)
    codec = Codec(CodecModel(ArchConfig()))
    mw = MetricWeights(codec.model.arch.widths[:4] + [codec.model.latent_channels])
    return bench(_bench_images(2), codec, mw, reps=10)


@pytest.mark.slow
def test_criterion_09_bench_ratio(bench_report):
    with Criterion(9, "bench full-pipeline / bitstream-path >= 10 at 768x512, default channels") as c:
        m = bench_report.methods
        c.note(f"bitstream {m['bitstream']['mean_s']:.3f} s, pixels {m['pixels']['mean_s']:.3f} s, "
               f"full {m['full']['mean_s']:.3f} s")
        ratio = bench_report.speedup["full_over_bitstream"]
        c.note(f"ratio {ratio:.2f}")
        assert ratio >= 10


@pytest.mark.slow
def test_bench_pixels_slower_than_bitstream(bench_report):
    assert bench_report.speedup["pixels_over_bitstream"] > 1


# --- 10 ----------------------------------------------------------------------------------


def test_criterion_10_classifier_above_chance(stage1):
    with Criterion(10, "classification accuracy substitute: held-out top-1 above 10% chance") as c:
        top1 = stage1[1]
        p = stats.binomtest(round(top1 * 500), 500, 0.1, alternative="greater").pvalue
        c.note(f"top-1 {top1:.1%}, binomial p = {p:.1e}")
        assert top1 > 0.10 and p < 1e-3
