import itertools

import pytest
import torch

from cpips.errors import ContractError, DimensionError
from cpips.models import ArchConfig, CodecModel

SIZES = (32, 64, 96, 128, 160)


@pytest.fixture(scope="module")
def full():
    torch.manual_seed(0)
    return CodecModel(ArchConfig()).eval()


@pytest.fixture(scope="module")
def quarter():
    torch.manual_seed(0)
    return CodecModel(ArchConfig(num_classes=10, scale=0.25)).eval()


@torch.no_grad()
def test_encoder_schedule_32(full):
    taps = full.encode(torch.rand(1, 3, 32, 32), "classifier")
    shapes = [tuple(t.shape[1:]) for t in taps.levels()]
    assert shapes == [(32, 16, 16), (64, 8, 8), (128, 4, 4), (256, 2, 2), (320, 1, 1)]


@torch.no_grad()
def test_encode_decode_64(full):
    y5 = full.encode(torch.rand(3, 64, 64)).y5
    assert y5.shape == (320, 2, 2)
    dec = full.decode(torch.zeros(320, 2, 2))
    assert [tuple(t.shape) for t in dec.levels()] == [(32, 32, 32), (64, 16, 16), (128, 8, 8), (256, 4, 4)]
    assert dec.x_hat.shape == (3, 64, 64)


@pytest.mark.parametrize("model", ["full", "quarter"])
@torch.no_grad()
def test_tap_shape_law(model, request):
    m = request.getfixturevalue(model)
    for h, w in itertools.product(SIZES, SIZES):
        enc = m.encode(torch.rand(1, 3, h, w))
        dec = m.decode(torch.round(enc.y5), taps_only=True)
        for l, (y, e) in enumerate(zip(enc.levels()[:4], dec.levels()), start=1):
            assert e.shape == y.shape, (h, w, l)
            assert y.shape[-2:] == (h >> l, w >> l)
        assert enc.y5.shape[-2:] == (h // 32, w // 32)
        assert dec.x_hat is None


def test_non_multiple_rejected(quarter):
    with pytest.raises(ContractError):
        quarter.encode(torch.rand(3, 48, 64))


def test_decoder_channel_mismatch(quarter):
    with pytest.raises(DimensionError):
        quarter.decode(torch.zeros(7, 1, 1))


def test_arch_validation():
    with pytest.raises(ContractError):
        ArchConfig(channels=[8, 8, 8, 8])
    with pytest.raises(ContractError):
        ArchConfig(scale=1 / 16)
    assert ArchConfig(scale=0.25).widths == [8, 16, 32, 64, 80]


@torch.no_grad()
def test_modes_agree_when_activations_are_identity(quarter):
    m = CodecModel(quarter.arch)
    for name, p in m.enc.named_parameters():
        if name.endswith(".a"):
            p.fill_(1.0)
        elif name.endswith(".beta"):
            p.fill_(1.0)
        elif name.endswith(".gamma"):
            p.zero_()
    x = torch.rand(2, 3, 64, 64)
    a, b = m.encode(x, "codec"), m.encode(x, "classifier")
    for ya, yb in zip(a.levels(), b.levels()):
        assert torch.equal(ya, yb)


@torch.no_grad()
def test_modes_share_convolutions(quarter):
    m = CodecModel(quarter.arch)
    x = torch.rand(1, 3, 32, 32)
    before = [m.encode(x, mode).y5.clone() for mode in ("codec", "classifier")]
    m.enc.conv_2_1.w.add_(0.1)
    after = [m.encode(x, mode).y5 for mode in ("codec", "classifier")]
    assert all(not torch.equal(u, v) for u, v in zip(before, after))


def test_mode_parameter_counts_differ_only_in_activations():
    m = CodecModel(ArchConfig())
    convs = sum(p.numel() for n, p in m.enc.named_parameters() if n.startswith("conv_"))
    prelu2 = sum(p.numel() for n, p in m.enc.named_parameters() if n.startswith("prelu_") and n.split(".")[0].endswith("_2"))
    gdn = sum(p.numel() for n, p in m.enc.named_parameters() if n.startswith("gdn_"))
    shared = sum(p.numel() for n, p in m.enc.named_parameters()) - prelu2 - gdn
    classifier_params, codec_params = shared + prelu2, shared + gdn
    assert convs > 0 and classifier_params - prelu2 == codec_params - gdn


@torch.no_grad()
def test_classify(full):
    assert full.classify(torch.rand(1, 3, 32, 32)).shape == (1, 1000)
    logits = full.classify(torch.zeros(3, 32, 32))
    assert torch.equal(logits, torch.zeros(1000))


@torch.no_grad()
def test_decode_deterministic(quarter):
    y = torch.round(quarter.encode(torch.rand(1, 3, 96, 160)).y5)
    a, b = quarter.decode(y), quarter.decode(y)
    assert torch.equal(a.x_hat, b.x_hat)
    assert all(torch.equal(u, v) for u, v in zip(a.levels(), b.levels()))


def test_canonical_names(quarter):
    keys = set(quarter.state_dict())
    for k in ("enc.conv_1_1.w", "enc.conv_5_2.b", "enc.gdn_3.beta", "enc.gdn_4.gamma",
              "enc.prelu_2_2.a", "dec.deconv_5_1.w", "dec.conv_1_2.w", "dec.gdn_2.beta",
              "head.linear.w", "head.linear.b"):
        assert k in keys
    assert "enc.gdn_5.beta" not in keys and "dec.gdn_1.beta" not in keys
