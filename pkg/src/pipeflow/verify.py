"""Whole-network bit-exactness check: engine against the reference arithmetic.

Each layer runs twice, once through ``engine.conv_forward``/``pool_forward``
with the allocation's parallelism and once through ``engine.reference``.  The
two chains are kept separate, so a wrong layer output cannot hide behind a
matching one downstream.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import Allocation
from .engine import EngineConfig, QuantTensor, conv_forward, flatten_for_fc, pool_forward
from .engine import reference
from .engine.tensorio import load_tensor
from .model import LayerKind, LayerSpec, NetworkModel, QuantFormat

__all__ = ["LayerParams", "LayerVerdict", "random_params", "load_params", "verify_network"]


@dataclass
class LayerParams:
    weights: QuantTensor | None = None
    shifts: tuple[int, ...] = ()
    bias: tuple[int, ...] = ()
    bias_fraction_bits: tuple[int, ...] | None = None
    activation: str = "relu"


@dataclass
class LayerVerdict:
    index: int
    kind: str
    elements: int
    mismatches: int
    first_mismatch: tuple[int, int, int] | None = None
    engine_value: int | None = None
    reference_value: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {"layer": self.index, "kind": self.kind, "elements": self.elements,
                "mismatches": self.mismatches,
                "first_mismatch": list(self.first_mismatch) if self.first_mismatch else None,
                "engine_value": self.engine_value, "reference_value": self.reference_value,
                "passed": self.passed}


def _input_dims(model: NetworkModel) -> tuple[int, int, int]:
    return model.input_channels, model.input_height, model.input_width


def random_params(model: NetworkModel, seed: int = 0, zero: bool = False):
    """Random input tensor and per-layer parameters that keep outputs mostly unsaturated."""
    rng = np.random.default_rng(seed)
    bits = model.bit_mode
    half = bits // 2
    c, h, w = _input_dims(model)
    act_frac = tuple(int(f) for f in rng.integers(0, half, c))
    amp = 1 << (bits - 2)
    x = np.zeros((c, h, w), np.int64) if zero else rng.integers(-amp, amp, (c, h, w))
    iact = QuantTensor(x, QuantFormat(bits, act_frac))
    params = []
    cur_frac = max(act_frac)
    for layer in model.layers:
        if not layer.is_compute:
            params.append(LayerParams())
            continue
        m = layer.out_channels
        w_frac = rng.integers(0, half, m)
        fan_in = layer.channels_per_group * layer.kernel_size
        w_amp = max(1, int((1 << (bits - 1)) / np.sqrt(fan_in)) >> 2)
        shape = (m, layer.channels_per_group, layer.kernel_h, layer.kernel_w)
        wv = np.zeros(shape, np.int64) if zero else rng.integers(-w_amp, w_amp + 1, shape)
        psum_frac = cur_frac + w_frac
        target = half - 1
        shifts = np.maximum(psum_frac - target, 0)
        # the weight's amplitude adds log2(w_amp) integer bits; shift them away as well
        shifts = np.minimum(psum_frac, shifts + int(np.log2(w_amp)) + 1)
        bias = np.zeros(m, np.int64) if zero else rng.integers(-amp, amp, m)
        params.append(LayerParams(
            weights=QuantTensor(wv, QuantFormat(bits, tuple(int(f) for f in w_frac))),
            shifts=tuple(int(s) for s in shifts), bias=tuple(int(b) for b in bias),
            bias_fraction_bits=tuple(int(f) for f in w_frac)))
        cur_frac = int((psum_frac - shifts).max())
    return iact, params


def load_params(model: NetworkModel, weights_dir: str | Path) -> list[LayerParams]:
    """Read ``layer<i>_weights.bin``/``.json`` and optional ``layer<i>_config.json``.

    The config holds ``shifts``, ``bias``, ``bias_fraction_bits`` and
    ``activation``; missing entries default to zero shift, zero bias and ReLU.
    """
    root = Path(weights_dir)
    params = []
    for layer in model.layers:
        if not layer.is_compute:
            params.append(LayerParams())
            continue
        weights = load_tensor(root / f"layer{layer.index}_weights.bin")
        cfg_path = root / f"layer{layer.index}_config.json"
        cfg = json.loads(cfg_path.read_text()) if cfg_path.exists() else {}
        bf = cfg.get("bias_fraction_bits")
        params.append(LayerParams(
            weights=weights, shifts=tuple(cfg.get("shifts", ())), bias=tuple(cfg.get("bias", ())),
            bias_fraction_bits=tuple(bf) if bf is not None else None,
            activation=cfg.get("activation", "relu")))
    return params


def _reference_layer(layer: LayerSpec, x: QuantTensor, p: LayerParams) -> QuantTensor:
    if layer.kind is LayerKind.POOL:
        out = reference.pool_reference(x.values, layer.kernel_h, layer.kernel_w, layer.stride,
                                       layer.padding, (layer.height, layer.width))
        return QuantTensor(out, x.fmt)
    if layer.kind is LayerKind.FC:
        x = flatten_for_fc(x)
    m = layer.out_channels
    shifts = p.shifts if len(p.shifts) > 0 else (0,)
    bias = p.bias if len(p.bias) > 0 else (0,)
    out, frac = reference.conv_reference(
        x.values, x.fmt.fraction_bits, p.weights.values, p.weights.fmt.fraction_bits,
        layer.stride, layer.padding, (layer.height, layer.width),
        np.broadcast_to(shifts, (m,)), np.broadcast_to(bias, (m,)),
        None if p.bias_fraction_bits is None else np.broadcast_to(p.bias_fraction_bits, (m,)),
        out_bits=x.bits, groups=layer.groups, activation=p.activation)
    return QuantTensor(out, QuantFormat(x.bits, tuple(int(f) for f in frac)))


def verify_network(model: NetworkModel, alloc: Allocation | None, iact: QuantTensor,
                   params: list[LayerParams], backend=None, debug: bool = False):
    """Run both chains; returns one LayerVerdict per layer."""
    if iact.dims != _input_dims(model):
        raise ValueError(f"input tensor {iact.dims} does not match model input "
                         f"{_input_dims(model)}")
    verdicts = []
    eng, ref = iact, iact
    for pos, layer in enumerate(model.layers):
        p = params[pos]
        if layer.kind is LayerKind.POOL:
            eng_out = pool_forward(layer, eng)
        else:
            la = alloc.layers[pos] if alloc is not None else None
            cfg = EngineConfig(
                c_par=la.c_par if la else 1, m_par=la.m_par if la else 1,
                k_par=la.k_par if la else 1, shifts=p.shifts, bias=p.bias,
                bias_fraction_bits=p.bias_fraction_bits, activation=p.activation, debug=debug)
            eng_out = conv_forward(layer, cfg, p.weights, eng, backend=backend)
        ref_out = _reference_layer(layer, ref, p)
        diff = eng_out.values != ref_out.values
        verdict = LayerVerdict(layer.index, layer.kind.value, int(diff.size), int(diff.sum()))
        if eng_out.fmt != ref_out.fmt:
            verdict.notes.append("output formats differ")
            verdict.mismatches = max(verdict.mismatches, 1)
        if diff.any():
            first = tuple(int(i) for i in np.argwhere(diff)[0])
            verdict.first_mismatch = first
            verdict.engine_value = int(eng_out.values[first])
            verdict.reference_value = int(ref_out.values[first])
        verdicts.append(verdict)
        eng, ref = eng_out, ref_out
    return verdicts
