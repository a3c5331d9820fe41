from collections import OrderedDict

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cpips import weights
from cpips.codec import codec_entries, model_from_entries
from cpips.errors import BadMagicError, FormatError, TruncatedError, UnsupportedVersionError
from cpips.models import ArchConfig, CodecModel

names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20)
arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=4),
                    elements=st.floats(width=32, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(names, arrays, max_size=6))
def test_roundtrip_bit_exact(d):
    entries = OrderedDict(d)
    back = weights.loads(weights.dumps(entries))
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape
        assert back[k].tobytes() == entries[k].tobytes()


def test_golden_bytes():
    data = weights.dumps({"a": np.array([1.0, -2.0], dtype=np.float32)})
    assert data.hex() == ("43505754" "01" "01000000" "0100" "61" "00" "01" "02000000"
                          "0000803f" "000000c0")


def test_errors():
    good = weights.dumps({"x": np.zeros(3, np.float32)})
    with pytest.raises(BadMagicError):
        weights.loads(b"XPWT" + good[4:])
    with pytest.raises(UnsupportedVersionError) as e:
        weights.loads(good[:4] + b"\x02" + good[5:])
    assert e.value.offset == 4
    for cut in range(len(good)):
        with pytest.raises(TruncatedError):
            weights.loads(good[:cut])
    with pytest.raises(FormatError):
        weights.loads(good + b"\x00")


def test_model_roundtrip_and_digest():
    torch.manual_seed(1)
    m = CodecModel(ArchConfig(num_classes=10, scale=0.25))
    data = weights.dumps(codec_entries(m, 2, 0.0067))
    m2 = model_from_entries(weights.loads(data))
    for (k, v), (k2, v2) in zip(m.state_dict().items(), m2.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    assert weights.digest(data) == weights.digest(weights.dumps(codec_entries(m2, 2, 0.0067)))
    assert len(weights.digest(data)) == 8
