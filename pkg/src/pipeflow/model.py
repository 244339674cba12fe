"""Network description: layer IR, model-file parsing/validation and benchmark presets.

Model files are JSON::

    {"name": "vgg16", "bit_mode": 16,
     "input": {"h": 224, "w": 224, "c": 3},
     "layers": [{"kind": "conv", "c": 3, "m": 64, "h": 224, "w": 224,
                 "r": 3, "s": 3, "stride": 1, "pad": 1}, ...],
     "complexity_gop": 30.94}

``h``/``w`` are the layer's *output* geometry and may be omitted (they are then
derived with floor division).  Two optional per-layer keys extend the schema:
``groups`` (grouped convolution, default 1) and, at top level, ``notes``.
Fully-connected layers are canonical 1x1 convolutions over a 1x1 map whose
``c`` is the flattened size of the previous layer's output.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

__all__ = [
    "LayerKind",
    "LayerSpec",
    "NetworkModel",
    "QuantFormat",
    "ModelError",
    "ModelParseError",
    "ModelValidationError",
    "UnknownModelError",
    "parse_model",
    "load_model_file",
    "serialize_model",
    "validate_model",
    "builtin_model",
    "BUILTIN_MODELS",
    "COMPLEXITY_TOLERANCE",
]

BUILTIN_MODELS = ("vgg16", "alexnet", "zf", "yolo")
COMPLEXITY_TOLERANCE = 0.01
MODELS_DIR_ENV = "PIPEFLOW_MODELS_DIR"


class ModelError(Exception):
    pass


class ModelParseError(ModelError):
    pass


class ModelValidationError(ModelError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownModelError(ModelError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


class LayerKind(str, enum.Enum):
    CONV = "conv"
    POOL = "pool"
    FC = "fc"

    @classmethod
    def parse(cls, text: str) -> "LayerKind":
        aliases = {"conv": cls.CONV, "pool": cls.POOL, "fc": cls.FC,
                   "fullyconnected": cls.FC, "fully_connected": cls.FC}
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown layer kind {text!r}") from None


@dataclass(frozen=True)
class LayerSpec:
    """One pipelined layer.

    ``height``/``width`` are output geometry; ``in_height``/``in_width`` are
    the geometry of the rows this layer consumes.
    """

    index: int
    kind: LayerKind
    in_channels: int
    out_channels: int
    height: int
    width: int
    kernel_h: int = 1
    kernel_w: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    in_height: int = 1
    in_width: int = 1

    @property
    def is_compute(self) -> bool:
        return self.kind is not LayerKind.POOL

    @property
    def kernel_size(self) -> int:
        return self.kernel_h * self.kernel_w

    @property
    def channels_per_group(self) -> int:
        return self.in_channels // self.groups

    @property
    def weight_count(self) -> int:
        """Weights loaded for one pass over all channels (0 for pools)."""
        if not self.is_compute:
            return 0
        return self.kernel_size * self.channels_per_group * self.out_channels

    @property
    def macs(self) -> int:
        if not self.is_compute:
            return 0
        return self.height * self.width * self.weight_count


@dataclass(frozen=True)
class NetworkModel:
    name: str
    layers: tuple[LayerSpec, ...]
    input_height: int
    input_width: int
    input_channels: int
    bit_mode: int = 16
    complexity_gop: float | None = None
    notes: str = ""

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    @property
    def ops(self) -> int:
        """Operation count per frame, two per MAC."""
        return 2 * self.total_macs

    @property
    def computed_gop(self) -> float:
        return self.ops / 1e9

    @property
    def compute_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(layer for layer in self.layers if layer.is_compute)

    def with_bits(self, bits: int) -> "NetworkModel":
        if bits not in (8, 16):
            raise ValueError(f"bit mode must be 8 or 16, got {bits}")
        return replace(self, bit_mode=bits)


@dataclass(frozen=True)
class QuantFormat:
    """Per-channel fixed-point format: value = integer * 2**-fraction_bits[ch]."""

    total_bits: int
    fraction_bits: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.total_bits not in (8, 16):
            raise ValueError(f"total_bits must be 8 or 16, got {self.total_bits}")
        object.__setattr__(self, "fraction_bits", tuple(int(f) for f in self.fraction_bits))
        for ch, frac in enumerate(self.fraction_bits):
            if not 0 <= frac < self.total_bits:
                raise ValueError(
                    f"channel {ch}: fraction_bits {frac} outside [0, {self.total_bits})")

    @classmethod
    def uniform(cls, total_bits: int, channels: int, fraction_bits: int = 0) -> "QuantFormat":
        return cls(total_bits, (fraction_bits,) * channels)

    @property
    def lo(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def hi(self) -> int:
        return (1 << (self.total_bits - 1)) - 1


# ---------------------------------------------------------------------------
# geometry

def _window_out(size: int, kernel: int, stride: int, pad: int) -> tuple[int, int]:
    """(floor, ceil) output extents of a sliding window."""
    span = size + 2 * pad - kernel
    if span < 0:
        return 0, 0
    return span // stride + 1, -(-span // stride) + 1


def _expected_geometry(kind: LayerKind, in_c: int, in_h: int, in_w: int, layer: dict):
    """Allowed output geometries for ``layer`` given its input."""
    if kind is LayerKind.FC:
        return {(1, 1)}, in_c * in_h * in_w
    fh, ch = _window_out(in_h, layer["r"], layer["stride"], layer["pad"])
    fw, cw = _window_out(in_w, layer["s"], layer["stride"], layer["pad"])
    return {(fh, fw), (ch, cw)}, in_c


# ---------------------------------------------------------------------------
# parsing

_LAYER_INT_FIELDS = ("c", "m", "r", "s", "stride", "pad", "groups")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ModelParseError(f"{where}: missing field '{key}'")
    return obj[key]


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ModelParseError(f"{where}: expected integer, got {value!r}")
    return int(value)


def parse_model(document: str | bytes | dict) -> NetworkModel:
    """Parse and validate a model document (JSON text or an already-loaded dict).

    Raises ModelParseError for malformed input and ModelValidationError when
    the layers are not dimension-consistent.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ModelParseError("top level: expected a JSON object")

    name = str(_require(doc, "name", "model"))
    bits = _as_int(doc.get("bit_mode", 16), "bit_mode")
    if bits not in (8, 16):
        raise ModelParseError(f"bit_mode: expected 8 or 16, got {bits}")
    inp = _require(doc, "input", "model")
    if not isinstance(inp, dict):
        raise ModelParseError("input: expected an object {h, w, c}")
    in_h = _as_int(_require(inp, "h", "input"), "input.h")
    in_w = _as_int(_require(inp, "w", "input"), "input.w")
    in_c = _as_int(_require(inp, "c", "input"), "input.c")
    raw_layers = _require(doc, "layers", "model")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelParseError("layers: expected a non-empty list")
    complexity = doc.get("complexity_gop")
    if complexity is not None and not isinstance(complexity, (int, float)):
        raise ModelParseError(f"complexity_gop: expected number, got {complexity!r}")

    layers = []
    violations = []
    cur_c, cur_h, cur_w = in_c, in_h, in_w
    for idx, raw in enumerate(raw_layers):
        where = f"layers[{idx}]"
        if not isinstance(raw, dict):
            raise ModelParseError(f"{where}: expected an object")
        try:
            kind = LayerKind.parse(str(_require(raw, "kind", where)))
        except ValueError as exc:
            raise ModelParseError(f"{where}.kind: {exc}") from None
        vals = {"r": 1, "s": 1, "stride": 1, "pad": 0, "groups": 1}
        if kind is not LayerKind.FC:
            vals["pad"] = None
        for key in _LAYER_INT_FIELDS:
            if key in raw:
                vals[key] = _as_int(raw[key], f"{where}.{key}")
            elif key in ("c", "m"):
                raise ModelParseError(f"{where}: missing field '{key}'")
        if vals["pad"] is None:
            vals["pad"] = vals["r"] // 2 if kind is LayerKind.CONV else 0
        for key in ("c", "m", "r", "s", "stride", "groups"):
            if vals[key] < 1:
                violations.append(f"{where}.{key} must be >= 1, got {vals[key]}")
        if vals["pad"] < 0:
            violations.append(f"{where}.pad must be >= 0, got {vals['pad']}")
        if violations:
            raise ModelValidationError(violations)

        allowed, expected_c = _expected_geometry(kind, cur_c, cur_h, cur_w, vals)
        floor_hw = min(allowed)
        out_h = _as_int(raw["h"], f"{where}.h") if "h" in raw else floor_hw[0]
        out_w = _as_int(raw["w"], f"{where}.w") if "w" in raw else floor_hw[1]
        prev = f"layers[{idx - 1}]" if idx else "input"
        if vals["c"] != expected_c:
            violations.append(
                f"{where}.c = {vals['c']} inconsistent with {prev} output "
                f"({cur_c}x{cur_h}x{cur_w} gives {expected_c})")
        if (out_h, out_w) not in allowed:
            violations.append(
                f"{where} output {out_h}x{out_w} inconsistent with {prev} output "
                f"{cur_h}x{cur_w} (expected one of {sorted(allowed)})")
        layers.append(LayerSpec(
            index=idx, kind=kind, in_channels=vals["c"], out_channels=vals["m"],
            height=out_h, width=out_w, kernel_h=vals["r"], kernel_w=vals["s"],
            stride=vals["stride"], padding=vals["pad"], groups=vals["groups"],
            in_height=cur_h if kind is not LayerKind.FC else 1,
            in_width=cur_w if kind is not LayerKind.FC else 1,
        ))
        cur_c, cur_h, cur_w = vals["m"], out_h, out_w

    if violations:
        raise ModelValidationError(violations)
    model = NetworkModel(
        name=name, layers=tuple(layers), input_height=in_h, input_width=in_w,
        input_channels=in_c, bit_mode=bits,
        complexity_gop=float(complexity) if complexity is not None else None,
        notes=str(doc.get("notes", "")),
    )
    report = validate_model(model)
    if report:
        raise ModelValidationError(report)
    return model


def load_model_file(path: str | os.PathLike) -> NetworkModel:
    return parse_model(Path(path).read_text())


def serialize_model(model: NetworkModel) -> dict:
    layers = []
    for layer in model.layers:
        entry = {
            "kind": layer.kind.value, "c": layer.in_channels, "m": layer.out_channels,
            "h": layer.height, "w": layer.width, "r": layer.kernel_h, "s": layer.kernel_w,
            "stride": layer.stride, "pad": layer.padding,
        }
        if layer.groups != 1:
            entry["groups"] = layer.groups
        layers.append(entry)
    doc = {
        "name": model.name,
        "bit_mode": model.bit_mode,
        "input": {"h": model.input_height, "w": model.input_width, "c": model.input_channels},
        "layers": layers,
    }
    if model.complexity_gop is not None:
        doc["complexity_gop"] = model.complexity_gop
    if model.notes:
        doc["notes"] = model.notes
    return doc


# ---------------------------------------------------------------------------
# validation

def validate_model(model: NetworkModel) -> list[str]:
    """Return one entry per violated invariant; an empty list means valid."""
    report = []
    cur_c, cur_h, cur_w = model.input_channels, model.input_height, model.input_width
    if model.bit_mode not in (8, 16):
        report.append(f"bit_mode must be 8 or 16, got {model.bit_mode}")
    if min(cur_c, cur_h, cur_w) < 1:
        report.append("input dimensions must be >= 1")
    for pos, layer in enumerate(model.layers):
        tag = f"layer {layer.index} ({layer.kind.value})"
        if layer.index != pos:
            report.append(f"{tag}: index {layer.index} != position {pos}")
        dims = dict(C=layer.in_channels, M=layer.out_channels, H=layer.height, W=layer.width,
                    R=layer.kernel_h, S=layer.kernel_w, G=layer.stride)
        for sym, val in dims.items():
            if val < 1:
                report.append(f"{tag}: {sym} must be >= 1, got {val}")
        if layer.padding < 0:
            report.append(f"{tag}: padding must be >= 0")
        if (layer.groups < 1 or layer.in_channels % layer.groups
                or layer.out_channels % layer.groups):
            report.append(f"{tag}: groups={layer.groups} must divide C and M")
        if layer.kind is LayerKind.POOL and layer.in_channels != layer.out_channels:
            report.append(f"{tag}: pool must preserve channels (C={layer.in_channels}, "
                          f"M={layer.out_channels})")
        if layer.kind is LayerKind.FC and (layer.height, layer.width, layer.kernel_h,
                                           layer.kernel_w) != (1, 1, 1, 1):
            report.append(f"{tag}: fully-connected layers must have H=W=R=S=1")
        try:
            allowed, expected_c = _expected_geometry(
                layer.kind, cur_c, cur_h, cur_w,
                {"r": layer.kernel_h, "s": layer.kernel_w, "stride": layer.stride,
                 "pad": layer.padding})
        except ZeroDivisionError:
            allowed, expected_c = set(), cur_c
        prev = f"layer {layer.index - 1}" if pos else "input"
        if layer.in_channels != expected_c:
            report.append(f"{tag}: in_channels {layer.in_channels} != {prev} output "
                          f"channels ({expected_c})")
        if (layer.height, layer.width) not in allowed:
            report.append(f"{tag}: output {layer.height}x{layer.width} does not follow from "
                          f"{prev} output {cur_h}x{cur_w}")
        cur_c, cur_h, cur_w = layer.out_channels, layer.height, layer.width
    if model.complexity_gop is not None and model.complexity_gop > 0:
        actual = model.computed_gop
        if abs(actual - model.complexity_gop) > COMPLEXITY_TOLERANCE * model.complexity_gop:
            report.append(f"complexity mismatch: declared {model.complexity_gop} GOP, "
                          f"layers give {actual:.4f} GOP")
    return report


# ---------------------------------------------------------------------------
# presets

def models_dir() -> Path:
    override = os.environ.get(MODELS_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("pipeflow") / "models"))


def builtin_model(name: str) -> NetworkModel:
    key = name.strip().lower()
    path = models_dir() / f"{key}.json"
    if key not in BUILTIN_MODELS and not path.is_file():
        raise UnknownModelError(
            f"unknown model {name!r}; valid names: {', '.join(BUILTIN_MODELS)}")
    if not path.is_file():
        raise UnknownModelError(f"preset file {path} not found; valid names: "
                                f"{', '.join(BUILTIN_MODELS)}")
    return load_model_file(path)


def make_model(name: str, input_hwc: tuple[int, int, int], layers: Iterable[dict],
               bit_mode: int = 16, complexity_gop: float | None = None) -> NetworkModel:
    """Convenience constructor going through the same validation as files."""
    h, w, c = input_hwc
    return parse_model({"name": name, "bit_mode": bit_mode, "input": {"h": h, "w": w, "c": c},
                        "layers": list(layers), "complexity_gop": complexity_gop})

