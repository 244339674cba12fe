"""Analytical throughput model for the layer pipeline.

Per layer, one K-row computation takes ``K * W * ceil(C/C') * ceil(M/M')``
cycles.  A frame needs ``ceil(H/K)`` of them; a short final block only
computes its remaining rows, so the stage's busy time per frame is
``H * T_row / K``.  Dividing by the input height ``H0`` gives
cycles per input-frame row; the largest such value is ``T_rowmax`` and the
pipeline delivers ``lanes * f / (H0 * T_rowmax)`` frames per second.

Normalized values are kept as exact ``Fraction`` so that ``H0 * T_rowmax``
is an integer cycle count and 8/16-bit comparisons are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

from .model import LayerSpec, NetworkModel

if TYPE_CHECKING:
    from .allocator import Allocation, LayerAllocation, ResourceBudget

__all__ = [
    "PerfReport",
    "PerfModelError",
    "row_cycles",
    "block_cycles",
    "frame_busy_cycles",
    "normalized_row_cycles",
    "bottleneck",
    "throughput_fps",
    "gops_and_efficiency",
    "weight_traffic",
    "bandwidth_demand",
    "estimate",
]


class PerfModelError(RuntimeError):
    """Raised when the model produces a physically impossible figure."""


def row_cycles(layer: LayerSpec, alloc: "LayerAllocation") -> int:
    """Cycles for one K-row computation of ``layer``.

    Pools reuse the channel parallelism recorded in ``alloc.c_par`` and cost
    ``K * W * ceil(C / c_par)``.
    """
    k = alloc.k_par
    c_groups = math.ceil(layer.channels_per_group / alloc.c_par)
    if not layer.is_compute:
        return k * layer.width * c_groups
    return k * layer.width * c_groups * math.ceil(layer.out_channels / alloc.m_par)


def block_cycles(layer: LayerSpec, alloc: "LayerAllocation", rows: int) -> int:
    """Cycles for a block computing ``rows`` (<= K) output rows."""
    return rows * (row_cycles(layer, alloc) // alloc.k_par)


def frame_busy_cycles(layer: LayerSpec, alloc: "LayerAllocation") -> int:
    return block_cycles(layer, alloc, layer.height)


def normalized_row_cycles(layer: LayerSpec, alloc: "LayerAllocation", h0: int) -> Fraction:
    """Busy cycles of this stage per input-frame row."""
    return Fraction(frame_busy_cycles(layer, alloc), h0)


def bottleneck(model: NetworkModel, alloc: "Allocation") -> tuple[Fraction, int]:
    """(T_rowmax, index of the slowest stage); ties go to the lowest index."""
    _check_cover(model, alloc)
    best, best_idx = Fraction(-1), -1
    for layer, la in zip(model.layers, alloc.layers):
        value = normalized_row_cycles(layer, la, model.input_height)
        if value > best:
            best, best_idx = value, layer.index
    return best, best_idx


def throughput_fps(model: NetworkModel, t_rowmax: Fraction | float, frequency: float,
                   lanes: int = 1) -> float:
    """Frames per second; ``lanes`` frames share every pipeline pass."""
    if t_rowmax <= 0:
        raise ValueError("T_rowmax must be positive")
    pass_cycles = model.input_height * t_rowmax
    return lanes * frequency / float(pass_cycles)


def gops_and_efficiency(model: NetworkModel, fps: float, alloc: "Allocation",
                        budget: "ResourceBudget") -> tuple[float, float]:
    gops = model.ops * fps / 1e9
    total = alloc.total_multipliers
    if total == 0 or gops == 0:
        return gops, 0.0
    # slices_used * mults_per_slice == total multipliers
    peak_gops = total * 2 * budget.frequency / 1e9
    efficiency = gops / peak_gops
    if efficiency > 1 + 1e-9:
        raise PerfModelError(
            f"DSP efficiency {efficiency:.6f} > 1: {gops:.3f} GOPS on a {peak_gops:.3f} GOPS peak")
    return gops, efficiency


def weight_traffic(layer: LayerSpec, k_par: int) -> Fraction:
    """Weight words fetched per frame pass, H*R*S*C*M / K."""
    return Fraction(layer.height * layer.weight_count, k_par)


def bandwidth_demand(model: NetworkModel, alloc: "Allocation", budget: "ResourceBudget",
                     t_rowmax: Fraction | None = None) -> float:
    """Off-chip weight bandwidth in bytes/second."""
    if t_rowmax is None:
        t_rowmax, _ = bottleneck(model, alloc)
    omega = sum(weight_traffic(layer, la.k_par) for layer, la in zip(model.layers, alloc.layers))
    passes_per_second = budget.frequency / float(model.input_height * t_rowmax)
    return passes_per_second * float(omega) * model.bit_mode / 8


def _check_cover(model: NetworkModel, alloc: "Allocation") -> None:
    if len(alloc.layers) != len(model.layers):
        raise ValueError(f"allocation has {len(alloc.layers)} layers, "
                         f"model has {len(model.layers)}")


@dataclass(frozen=True)
class PerfReport:
    model: str
    bit_mode: int
    lanes: int
    frequency: float
    row_cycles: tuple[int, ...]
    normalized_row_cycles: tuple[Fraction, ...]
    t_rowmax: Fraction
    bottleneck_layer: int
    pass_cycles: int
    fps: float
    gops: float
    dsp_efficiency: float
    required_bandwidth: float
    idle_fraction: tuple[float, ...]
    multipliers_used: int
    dsp_slices_used: int
    bram_used: int
    bram_budget: int
    dsp_budget: int
    complexity_gop: float

    @property
    def cycles_per_frame(self) -> Fraction:
        return Fraction(self.pass_cycles, self.lanes)

    @property
    def bram_utilization(self) -> float:
        return self.bram_used / self.bram_budget

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "bit_mode": self.bit_mode,
            "lanes": self.lanes,
            "frequency_hz": self.frequency,
            "row_cycles": list(self.row_cycles),
            "normalized_row_cycles": [float(v) for v in self.normalized_row_cycles],
            "t_rowmax": float(self.t_rowmax),
            "bottleneck_layer": self.bottleneck_layer,
            "pass_cycles": self.pass_cycles,
            "fps": self.fps,
            "gops": self.gops,
            "dsp_efficiency": self.dsp_efficiency,
            "required_bandwidth_bytes_per_s": self.required_bandwidth,
            "idle_fraction": list(self.idle_fraction),
            "multipliers_used": self.multipliers_used,
            "dsp_slices_used": self.dsp_slices_used,
            "dsp_budget": self.dsp_budget,
            "bram_used": self.bram_used,
            "bram_budget": self.bram_budget,
            "complexity_gop": self.complexity_gop,
        }


def estimate(model: NetworkModel, alloc: "Allocation", budget: "ResourceBudget") -> PerfReport:
    t_rowmax, slowest = bottleneck(model, alloc)
    pass_cycles = model.input_height * t_rowmax
    assert pass_cycles.denominator == 1
    fps = throughput_fps(model, t_rowmax, budget.frequency, alloc.lanes)
    gops, eff = gops_and_efficiency(model, fps, alloc, budget)
    busy = [frame_busy_cycles(layer, la) for layer, la in zip(model.layers, alloc.layers)]
    normalized = tuple(Fraction(b, model.input_height) for b in busy)
    return PerfReport(
        model=model.name,
        bit_mode=model.bit_mode,
        lanes=alloc.lanes,
        frequency=budget.frequency,
        row_cycles=tuple(row_cycles(layer, la) for layer, la in zip(model.layers, alloc.layers)),
        normalized_row_cycles=normalized,
        t_rowmax=t_rowmax,
        bottleneck_layer=slowest,
        pass_cycles=int(pass_cycles),
        fps=fps,
        gops=gops,
        dsp_efficiency=eff,
        required_bandwidth=bandwidth_demand(model, alloc, budget, t_rowmax),
        idle_fraction=tuple(1 - b / int(pass_cycles) for b in busy),
        multipliers_used=alloc.total_multipliers,
        dsp_slices_used=alloc.total_multipliers // alloc.lanes,
        bram_used=alloc.total_bram,
        bram_budget=budget.bram_blocks,
        dsp_budget=budget.multipliers // alloc.lanes,
        complexity_gop=model.computed_gop,
    )

