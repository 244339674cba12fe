import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pipeflow.model import make_model  # noqa: E402

TINY_LAYERS = [
    {"kind": "conv", "c": 3, "m": 8, "r": 3, "s": 3},
    {"kind": "pool", "c": 8, "m": 8, "r": 2, "s": 2, "stride": 2},
    {"kind": "conv", "c": 8, "m": 6, "r": 3, "s": 3, "stride": 2},
    {"kind": "fc", "c": 54, "m": 10},
]


@pytest.fixture
def tiny_model():
    return make_model("tiny", (12, 12, 3), TINY_LAYERS)


@pytest.fixture
def tiny_doc():
    return {"name": "tiny", "bit_mode": 16, "input": {"h": 12, "w": 12, "c": 3},
            "layers": [dict(layer) for layer in TINY_LAYERS]}


def single_conv(c=4, m=4, h=8, w=8, r=3, stride=1, pad=None, bits=16, groups=1):
    layer = {"kind": "conv", "c": c, "m": m, "r": r, "s": r, "stride": stride, "groups": groups}
    if pad is not None:
        layer["pad"] = pad
    return make_model("one", (h, w, c), [layer], bit_mode=bits)
