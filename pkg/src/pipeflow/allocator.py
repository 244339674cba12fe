"""Per-layer resource allocation.

``allocate_dsps`` hands out multipliers in whole R*S kernel arrays in
proportion to each layer's MAC count, then keeps granting one more array to
the layer with the highest MACs-per-multiplier until the next grant no longer
fits.  ``decompose_parallelism`` turns a layer's share into input/output
channel parallelism, and ``allocate_bram_bandwidth`` raises row parallelism K
on the heaviest weight consumers while off-chip bandwidth is over budget and
the activation line buffers still fit in BRAM.

In 8-bit mode one DSP slice holds two multipliers.  The pair shares its weight
operand across two frames, so allocation is carried out per slice and every
layer's multiplier count is twice its slice count; a pipeline pass then
advances two frames (``Allocation.lanes == 2``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from . import perf
from .model import LayerSpec, NetworkModel

__all__ = [
    "ResourceBudget",
    "LayerAllocation",
    "Allocation",
    "BramPlan",
    "AllocationError",
    "InfeasibleBudgetError",
    "UnsupportedLayerError",
    "mults_per_slice",
    "mac_count",
    "allocate_dsps",
    "decompose_parallelism",
    "activation_buffer_rows",
    "overlap_slack_rows",
    "provisioned_buffer_rows",
    "bram_blocks_for_buffer",
    "allocate_bram_bandwidth",
    "allocate",
]

# XC7Z045 (ZC706): 900 DSP48E1, 545 x 36 Kb block RAM, 200 MHz design clock
DEFAULT_DSP_SLICES = 900
DEFAULT_BRAM_BLOCKS = 545
DEFAULT_BRAM_BLOCK_BITS = 36 * 1024
DEFAULT_FREQUENCY = 200e6
DEFAULT_BANDWIDTH = 12.8e9


class AllocationError(ValueError):
    pass


class InfeasibleBudgetError(AllocationError):
    pass


class UnsupportedLayerError(AllocationError):
    pass


def mults_per_slice(bit_mode: int) -> int:
    if bit_mode not in (8, 16):
        raise ValueError(f"bit mode must be 8 or 16, got {bit_mode}")
    return 2 if bit_mode == 8 else 1


@dataclass(frozen=True)
class ResourceBudget:
    """FPGA envelope. ``multipliers`` counts multiply units, not DSP slices."""

    multipliers: int
    bram_blocks: int = DEFAULT_BRAM_BLOCKS
    bram_block_bits: int = DEFAULT_BRAM_BLOCK_BITS
    ddr_bandwidth: float = DEFAULT_BANDWIDTH
    frequency: float = DEFAULT_FREQUENCY

    def __post_init__(self):
        for name in ("multipliers", "bram_blocks", "bram_block_bits", "ddr_bandwidth", "frequency"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_slices(cls, dsp_slices: int, bit_mode: int, **kwargs) -> "ResourceBudget":
        return cls(multipliers=dsp_slices * mults_per_slice(bit_mode), **kwargs)


@dataclass(frozen=True)
class LayerAllocation:
    index: int
    theta: int
    c_par: int
    m_par: int
    k_par: int = 1
    act_rows: int = 0
    bram_blocks: int = 0

    def to_dict(self) -> dict:
        return {"theta": self.theta, "c_par": self.c_par, "m_par": self.m_par,
                "k_par": self.k_par, "act_rows": self.act_rows, "bram_blocks": self.bram_blocks}


@dataclass(frozen=True)
class Allocation:
    layers: tuple[LayerAllocation, ...]
    lanes: int = 1
    required_bandwidth: float = 0.0
    bandwidth_satisfied: bool = True
    k0: int = 1
    overlap: bool = True

    @property
    def total_multipliers(self) -> int:
        return sum(la.theta for la in self.layers)

    @property
    def total_bram(self) -> int:
        return sum(la.bram_blocks for la in self.layers)

    def to_dict(self) -> dict:
        return {
            "layers": [la.to_dict() for la in self.layers],
            "lanes": self.lanes,
            "total_multipliers": self.total_multipliers,
            "total_bram": self.total_bram,
            "required_bandwidth": self.required_bandwidth,
            "bandwidth_satisfied": self.bandwidth_satisfied,
            "k0": self.k0,
            "overlap_buffers": self.overlap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# Algorithm 1: multipliers

def mac_count(layer: LayerSpec) -> int:
    """MACs per frame, H*W*R*S*C*M (C per group for grouped convolution)."""
    if not layer.is_compute:
        raise UnsupportedLayerError(f"layer {layer.index}: pool layers use no multipliers")
    return layer.macs


def allocate_dsps(model: NetworkModel, budget: ResourceBudget) -> list[int]:
    """Multipliers per layer (0 for pools)."""
    lanes = mults_per_slice(model.bit_mode)
    slices = budget.multipliers // lanes
    compute = model.compute_layers
    if not compute:
        return [0] * len(model.layers)
    floor_need = sum(layer.kernel_size for layer in compute)
    if slices < floor_need:
        raise InfeasibleBudgetError(
            f"{model.name}: {slices * lanes} multipliers cannot host one kernel array per "
            f"layer ({floor_need * lanes} needed, short by {(floor_need - slices) * lanes})")

    pi = {layer.index: mac_count(layer) for layer in compute}
    rs = {layer.index: layer.kernel_size for layer in compute}
    total_pi = sum(pi.values())
    theta = {}
    for i in pi:
        share = pi[i] * slices // total_pi  # floor(pi_i * theta / sum(pi))
        theta[i] = max(rs[i], share // rs[i] * rs[i])

    # the one-array minimum can push the sum over budget; give back from the
    # layer with the most slack (lowest pi/theta), highest index on ties
    while sum(theta.values()) > slices:
        j = min((i for i in theta if theta[i] > rs[i]),
                key=lambda i: (Fraction(pi[i], theta[i]), -i))
        theta[j] -= rs[j]

    used = sum(theta.values())
    while used <= slices:
        j = max(theta, key=lambda i: (Fraction(pi[i], theta[i]), -i))
        if used + rs[j] <= slices:
            theta[j] += rs[j]
            used += rs[j]
        else:
            break
    return [theta.get(layer.index, 0) * lanes for layer in model.layers]


def decompose_parallelism(layer: LayerSpec, theta: int) -> tuple[int, int]:
    """(C', M') minimizing ceil(C/C') * ceil(M/M') with C'*M'*R*S <= theta.

    For a fixed C' the largest feasible M' is optimal, so only C' is scanned.
    Ties prefer the larger C', then the larger M'.
    """
    arrays = theta // layer.kernel_size
    if theta <= 0 or theta % layer.kernel_size:
        raise AllocationError(f"layer {layer.index}: theta={theta} is not a positive multiple "
                              f"of R*S={layer.kernel_size}")
    c, m = layer.channels_per_group, layer.out_channels
    best = None
    for cp in range(min(c, arrays), 0, -1):
        mp = min(m, arrays // cp)
        cost = -(-c // cp) * -(-m // mp)
        if best is None or cost < best[0]:
            best = (cost, cp, mp)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Algorithm 2: row parallelism, BRAM and bandwidth

def activation_buffer_rows(layer: LayerSpec, k: int, k_prev: int) -> int:
    """Minimal rowBuffers for ``layer``: ``K_prev`` rows being written plus the
    ``R + G(K-1)`` rows one K-row block reads (``R + 2K - 1`` for stride 1 and
    equal K)."""
    if k < 1 or k_prev < 1:
        raise ValueError("row parallelism must be >= 1")
    return k_prev + layer.kernel_h + layer.stride * (k - 1)


def overlap_slack_rows(layer: LayerSpec, k: int, k_prev: int) -> int:
    """Extra rows that let producer and consumer run fully overlapped.

    With only the minimal buffer the producer can deposit a single block while
    the consumer computes.  A compute layer whose next block advances by
    ``G*K`` rows then waits for ``G*K - 1`` rows after every block, and blocks
    of different heights (``K != K_prev``) drift out of alignment at frame
    edges by up to ``max(K, K_prev) - 1`` rows.  Pools are cheap enough that
    their stride never starves them, so only their alignment term counts.
    Zero whenever ``K == K_prev == 1`` and the stride is 1.
    """
    if k < 1 or k_prev < 1:
        raise ValueError("row parallelism must be >= 1")
    advance = layer.stride * k if layer.is_compute else k
    return (advance - 1) + (max(k, k_prev) - 1)


def provisioned_buffer_rows(layer: LayerSpec, k: int, k_prev: int, overlap: bool = True) -> int:
    rows = activation_buffer_rows(layer, k, k_prev)
    return rows + overlap_slack_rows(layer, k, k_prev) if overlap else rows


def bram_blocks_for_buffer(layer: LayerSpec, rows: int, bits_per_element: int,
                           block_bits: int) -> int:
    row_bits = layer.in_width * layer.in_channels * bits_per_element
    return rows * -(-row_bits // block_bits)


@dataclass
class BramPlan:
    k_par: list[int]
    act_rows: list[int]
    bram_blocks: list[int]
    bandwidth: float
    bandwidth_satisfied: bool
    # one (granted layer, sum of omega after the grant, bandwidth after) per iteration
    history: list[tuple[int, Fraction, float]] = field(default_factory=list)

    @property
    def total_bram(self) -> int:
        return sum(self.bram_blocks)


def _pool_parallelism(model: NetworkModel, cm: dict[int, tuple[int, int]]) -> dict[int, int]:
    """Pools inherit the output-channel parallelism of the closest compute layer upstream."""
    par, last = {}, 1
    for layer in model.layers:
        if layer.is_compute:
            last = cm[layer.index][1]
        else:
            par[layer.index] = max(1, min(last, layer.in_channels))
    return par


def _layer_allocs(model, thetas, cm, pool_par, ks, rows=None, blocks=None):
    out = []
    for pos, layer in enumerate(model.layers):
        if layer.is_compute:
            cp, mp = cm[layer.index]
        else:
            cp = mp = pool_par[layer.index]
        out.append(LayerAllocation(
            index=layer.index, theta=thetas[pos], c_par=cp, m_par=mp, k_par=ks[pos],
            act_rows=rows[pos] if rows else 0, bram_blocks=blocks[pos] if blocks else 0))
    return tuple(out)


def _buffers(model, ks, k0, bits_per_element, block_bits, overlap):
    rows, blocks = [], []
    for pos, layer in enumerate(model.layers):
        rows.append(provisioned_buffer_rows(layer, ks[pos], ks[pos - 1] if pos else k0, overlap))
        blocks.append(bram_blocks_for_buffer(layer, rows[-1], bits_per_element, block_bits))
    return rows, blocks


def allocate_bram_bandwidth(model: NetworkModel, thetas: list[int], budget: ResourceBudget,
                            k0: int = 1, overlap: bool = True) -> BramPlan:
    """Raise row parallelism while bandwidth is over budget and BRAM allows.

    Line buffers are sized by ``provisioned_buffer_rows``; ``overlap=False``
    uses the minimal ``activation_buffer_rows`` instead.
    """
    lanes = mults_per_slice(model.bit_mode)
    cm = {layer.index: decompose_parallelism(layer, thetas[pos] // lanes)
          for pos, layer in enumerate(model.layers) if layer.is_compute}
    pool_par = _pool_parallelism(model, cm)
    # both lanes' rows are buffered, so an 8-bit element costs 16 bits of BRAM
    bits_per_element = model.bit_mode * lanes
    weight_bytes = model.bit_mode / 8
    ks = [1] * len(model.layers)

    def demand():
        allocs = Allocation(_layer_allocs(model, thetas, cm, pool_par, ks), lanes=lanes)
        t_rowmax, _ = perf.bottleneck(model, allocs)
        omega = [perf.weight_traffic(layer, ks[pos]) for pos, layer in enumerate(model.layers)]
        passes = budget.frequency / float(model.input_height * t_rowmax)
        return omega, passes * float(sum(omega)) * weight_bytes

    rows, blocks = _buffers(model, ks, k0, bits_per_element, budget.bram_block_bits, overlap)
    if sum(blocks) > budget.bram_blocks:
        raise InfeasibleBudgetError(
            f"{model.name}: line buffers need {sum(blocks)} BRAM blocks at K=1, budget is "
            f"{budget.bram_blocks} (short by {sum(blocks) - budget.bram_blocks})")
    omega, bandwidth = demand()
    history = []
    while bandwidth > budget.ddr_bandwidth:
        # K beyond the layer's row count cannot cut traffic further
        eligible = [pos for pos, layer in enumerate(model.layers)
                    if layer.is_compute and ks[pos] < layer.height]
        if not eligible:
            break
        pick = max(eligible, key=lambda pos: (omega[pos], -pos))
        trial = list(ks)
        trial[pick] += 1
        t_rows, t_blocks = _buffers(model, trial, k0, bits_per_element,
                                    budget.bram_block_bits, overlap)
        if sum(t_blocks) < budget.bram_blocks:
            ks, rows, blocks = trial, t_rows, t_blocks
        else:
            break
        omega, bandwidth = demand()
        history.append((model.layers[pick].index, sum(omega), bandwidth))
    return BramPlan(k_par=ks, act_rows=rows, bram_blocks=blocks, bandwidth=bandwidth,
                    bandwidth_satisfied=bandwidth <= budget.ddr_bandwidth, history=history)


def allocate(model: NetworkModel, budget: ResourceBudget, k0: int = 1,
             overlap: bool = True) -> Allocation:
    """Run both allocation passes and assemble the per-layer result."""
    thetas = allocate_dsps(model, budget)
    plan = allocate_bram_bandwidth(model, thetas, budget, k0=k0, overlap=overlap)
    lanes = mults_per_slice(model.bit_mode)
    cm = {layer.index: decompose_parallelism(layer, thetas[pos] // lanes)
          for pos, layer in enumerate(model.layers) if layer.is_compute}
    layers = _layer_allocs(model, thetas, cm, _pool_parallelism(model, cm), plan.k_par,
                           plan.act_rows, plan.bram_blocks)
    return Allocation(layers=layers, lanes=lanes, required_bandwidth=plan.bandwidth,
                      bandwidth_satisfied=plan.bandwidth_satisfied, k0=k0, overlap=overlap)
