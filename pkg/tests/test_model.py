import json

import pytest
from hypothesis import given, settings, strategies as st

from oracles import count_conv_macs
from pipeflow.model import (
    BUILTIN_MODELS, LayerKind, ModelParseError, ModelValidationError, QuantFormat,
    UnknownModelError, builtin_model, load_model_file, make_model, parse_model,
    serialize_model, validate_model,
)

TABLE_GOP = {"vgg16": 30.94, "alexnet": 1.45, "zf": 2.34, "yolo": 40.14}


def test_vgg16_layer_census():
    model = builtin_model("vgg16")
    kinds = [layer.kind for layer in model.layers]
    assert kinds.count(LayerKind.CONV) == 13
    assert kinds.count(LayerKind.POOL) == 5
    assert kinds.count(LayerKind.FC) == 3
    assert model.complexity_gop == pytest.approx(30.94)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_preset_complexity_matches_declared(name):
    model = builtin_model(name)
    assert model.complexity_gop == TABLE_GOP[name]
    assert model.computed_gop == pytest.approx(TABLE_GOP[name], rel=0.01)
    assert validate_model(model) == []


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_preset_complexity_by_loop_count(name):
    model = builtin_model(name)
    ops = 0
    for layer in model.compute_layers:
        per_group = count_conv_macs(layer.height, layer.width, layer.kernel_h, layer.kernel_w,
                                    layer.in_channels // layer.groups,
                                    layer.out_channels // layer.groups)
        ops += 2 * per_group * layer.groups
    assert ops == model.ops
    assert ops / 1e9 == pytest.approx(TABLE_GOP[name], rel=0.01)


def test_unknown_preset_lists_names():
    with pytest.raises(UnknownModelError) as err:
        builtin_model("resnet")
    for name in BUILTIN_MODELS:
        assert name in str(err.value)


def test_minimal_model_has_one_mac():
    model = make_model("dot", (1, 1, 1), [{"kind": "conv", "c": 1, "m": 1, "r": 1, "s": 1}])
    assert model.total_macs == 1
    assert model.layers[0].macs == 1


def test_channel_mismatch_names_both_layers(tiny_doc):
    tiny_doc["layers"][2]["c"] = 7
    with pytest.raises(ModelValidationError) as err:
        parse_model(tiny_doc)
    text = str(err.value)
    assert "layers[2]" in text and "layers[1]" in text


def test_malformed_json_reports_position():
    with pytest.raises(ModelParseError) as err:
        parse_model('{"name": "x",\n "layers": [}')
    assert "line 2" in str(err.value)


def test_missing_field_is_named(tiny_doc):
    del tiny_doc["layers"][0]["m"]
    with pytest.raises(ModelParseError, match="'m'"):
        parse_model(tiny_doc)


def test_pool_changing_channels_is_one_violation(tiny_model):
    from dataclasses import replace
    layers = list(tiny_model.layers)
    layers[1] = replace(layers[1], out_channels=9)
    layers[2] = replace(layers[2], in_channels=9)
    report = validate_model(replace(tiny_model, layers=tuple(layers)))
    assert len(report) == 1
    assert "pool" in report[0]


def test_doubled_complexity_is_flagged(tiny_model):
    from dataclasses import replace
    bad = replace(tiny_model, complexity_gop=2 * tiny_model.computed_gop)
    report = validate_model(bad)
    assert len(report) == 1 and "complexity mismatch" in report[0]


def test_fc_is_canonical(tiny_model):
    fc = tiny_model.layers[-1]
    assert (fc.height, fc.width, fc.kernel_h, fc.kernel_w) == (1, 1, 1, 1)
    assert fc.in_channels == 6 * 3 * 3


@pytest.mark.parametrize("size", [7, 8, 13, 224])
def test_geometry_propagation(size):
    model = make_model("g", (size, size, 2), [
        {"kind": "conv", "c": 2, "m": 2, "r": 3, "s": 3},
        {"kind": "conv", "c": 2, "m": 2, "r": 3, "s": 3, "stride": 2},
    ])
    assert model.layers[0].height == size
    assert model.layers[1].height == -(-size // 2)


def test_quant_format_bounds():
    QuantFormat(8, (0, 7))
    with pytest.raises(ValueError):
        QuantFormat(8, (8,))
    with pytest.raises(ValueError):
        QuantFormat(12, (0,))
    fmt = QuantFormat(16, (3,))
    assert (fmt.lo, fmt.hi) == (-32768, 32767)


def test_preset_file_loads(tmp_path):
    doc = serialize_model(builtin_model("zf"))
    path = tmp_path / "zf.json"
    path.write_text(json.dumps(doc))
    assert load_model_file(path) == builtin_model("zf")


def test_models_dir_override(tmp_path, monkeypatch, tiny_doc):
    tiny_doc["name"] = "vgg16"
    (tmp_path / "vgg16.json").write_text(json.dumps(tiny_doc))
    monkeypatch.setenv("PIPEFLOW_MODELS_DIR", str(tmp_path))
    assert len(builtin_model("vgg16").layers) == 4


@st.composite
def chains(draw):
    c = draw(st.integers(1, 6))
    h = draw(st.integers(4, 20))
    layers = []
    cur_c, cur_h = c, h
    for _ in range(draw(st.integers(1, 4))):
        kind = draw(st.sampled_from(["conv", "pool"])) if cur_h >= 2 else "conv"
        if kind == "conv":
            m = draw(st.integers(1, 8))
            r = draw(st.sampled_from([1, 3]))
            stride = draw(st.sampled_from([1, 2]))
            layers.append({"kind": "conv", "c": cur_c, "m": m, "r": r, "s": r, "stride": stride})
            cur_c, cur_h = m, (cur_h - 1) // stride + 1
        else:
            layers.append({"kind": "pool", "c": cur_c, "m": cur_c, "r": 2, "s": 2, "stride": 2})
            cur_h = cur_h // 2
    if draw(st.booleans()):
        layers.append({"kind": "fc", "c": cur_c * cur_h * cur_h, "m": draw(st.integers(1, 9))})
    return {"name": "rand", "bit_mode": draw(st.sampled_from([8, 16])),
            "input": {"h": h, "w": h, "c": c}, "layers": layers}


@settings(max_examples=60, deadline=None)
@given(chains())
def test_serialize_round_trip(doc):
    model = parse_model(doc)
    again = parse_model(json.dumps(serialize_model(model)))
    assert again == model
