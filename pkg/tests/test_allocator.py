import math
import random
from fractions import Fraction

import pytest

from conftest import single_conv
from oracles import (algorithm1_steps, algorithm2_grant_order, brute_decompose,
                     count_conv_macs)
from pipeflow import perf
from pipeflow.allocator import (
    Allocation, InfeasibleBudgetError, LayerAllocation, ResourceBudget,
    UnsupportedLayerError, activation_buffer_rows, allocate, allocate_bram_bandwidth,
    allocate_dsps, bram_blocks_for_buffer, decompose_parallelism, mac_count,
    overlap_slack_rows, provisioned_buffer_rows,
)
from pipeflow.model import BUILTIN_MODELS, LayerKind, LayerSpec, builtin_model, make_model


def conv_spec(c=1, m=1, h=1, w=1, r=1, s=1, stride=1, in_w=None, kind=LayerKind.CONV):
    return LayerSpec(index=0, kind=kind, in_channels=c, out_channels=m, height=h, width=w,
                     kernel_h=r, kernel_w=s, stride=stride, padding=r // 2,
                     in_height=h * stride, in_width=in_w or w * stride)


def random_model(rng: random.Random, n_layers: int, bits: int = 16):
    h = rng.choice([8, 12, 16, 28])
    c = rng.randint(1, 16)
    layers = []
    for _ in range(n_layers):
        r = rng.choice([1, 3, 5])
        m = rng.randint(1, 64)
        layers.append({"kind": "conv", "c": c, "m": m, "r": r, "s": r})
        c = m
    return make_model("rand", (h, h, layers[0]["c"]), layers, bit_mode=bits)


# ---------------------------------------------------------------------------
# mac_count


def test_mac_count_vgg_conv1_1():
    layer = builtin_model("vgg16").layers[0]
    assert mac_count(layer) == 86_704_128 == count_conv_macs(224, 224, 3, 3, 3, 64)


def test_mac_count_unit_and_fc():
    assert mac_count(conv_spec()) == 1
    fc = conv_spec(c=4096, m=1000, kind=LayerKind.FC)
    assert mac_count(fc) == 4_096_000 == count_conv_macs(1, 1, 1, 1, 4096, 1000)


def test_mac_count_rejects_pool():
    with pytest.raises(UnsupportedLayerError):
        mac_count(conv_spec(kind=LayerKind.POOL))


# ---------------------------------------------------------------------------
# decompose_parallelism


def test_decompose_examples():
    assert decompose_parallelism(conv_spec(c=4, m=4), 4) == (4, 1)
    assert decompose_parallelism(conv_spec(c=4, m=4, r=3, s=3), 9) == (1, 1)
    assert decompose_parallelism(conv_spec(c=3, m=64, r=3, s=3), 96 * 9) == (3, 32)


def test_decompose_exhaustive_sweep():
    """Every (C, M) <= 64 and theta/RS <= 64 against enumeration."""
    mismatches = []
    for c in range(1, 65):
        for m in range(1, 65):
            layer = conv_spec(c=c, m=m)
            for arrays in range(1, 65):
                got = decompose_parallelism(layer, arrays)
                if got != brute_decompose(c, m, arrays):
                    mismatches.append((c, m, arrays, got))
    assert mismatches == []


# ---------------------------------------------------------------------------
# Algorithm 1


def test_two_layer_equal_pi_example():
    l0 = {"kind": "conv", "c": 1, "m": 1, "r": 3, "s": 3}
    l1 = {"kind": "conv", "c": 1, "m": 9, "r": 1, "s": 1}
    model = make_model("two", (4, 4, 1), [l0, l1])
    assert model.layers[0].macs == model.layers[1].macs
    assert allocate_dsps(model, ResourceBudget(multipliers=20)) == [9, 10]
    assert algorithm1_steps([144, 144], [9, 1], 20) == [9, 10]


def test_single_layer_takes_whole_budget():
    model = single_conv(c=8, m=8, r=3)
    assert allocate_dsps(model, ResourceBudget(multipliers=18)) == [18]


@pytest.mark.parametrize("seed", range(20))
def test_algorithm1_matches_manual_execution(seed):
    rng = random.Random(seed)
    model = random_model(rng, rng.randint(2, 6))
    rs = [layer.kernel_size for layer in model.layers]
    theta = rng.randint(sum(rs), 40 * sum(rs))
    pi = [layer.macs for layer in model.layers]
    got = allocate_dsps(model, ResourceBudget(multipliers=theta))
    assert got == algorithm1_steps(pi, rs, theta)


@pytest.mark.parametrize("seed", range(5))
def test_algorithm1_eight_bit_works_on_slices(seed):
    rng = random.Random(100 + seed)
    model = random_model(rng, rng.randint(2, 6), bits=8)
    rs = [layer.kernel_size for layer in model.layers]
    slices = rng.randint(sum(rs), 30 * sum(rs))
    pi = [layer.macs for layer in model.layers]
    got = allocate_dsps(model, ResourceBudget(multipliers=2 * slices))
    assert got == [2 * t for t in algorithm1_steps(pi, rs, slices)]


def test_infeasible_budget_names_shortfall():
    with pytest.raises(InfeasibleBudgetError, match="short by"):
        allocate_dsps(builtin_model("vgg16"), ResourceBudget(multipliers=5))


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_allocation_invariants(name):
    model = builtin_model(name)
    budget = ResourceBudget(multipliers=900)
    alloc = allocate(model, budget)
    assert alloc.total_multipliers <= 900
    assert alloc.total_bram <= budget.bram_blocks
    for layer, la in zip(model.layers, alloc.layers):
        if layer.is_compute:
            assert la.theta > 0 and la.theta % layer.kernel_size == 0
            assert la.c_par * la.m_par * layer.kernel_size <= la.theta
            assert 1 <= la.c_par <= layer.channels_per_group and 1 <= la.m_par <= layer.out_channels
        else:
            assert la.theta == 0
        assert la.k_par >= 1


def _normalized_times(model, thetas):
    layers = []
    for layer, t in zip(model.layers, thetas):
        cp, mp = decompose_parallelism(layer, t) if layer.is_compute else (1, 1)
        layers.append(LayerAllocation(layer.index, t, cp, mp))
    alloc = Allocation(tuple(layers))
    return [perf.normalized_row_cycles(layer, la, model.input_height)
            for layer, la in zip(model.layers, alloc.layers) if layer.is_compute]


def _preallocation(pi, rs, theta):
    return [max(q, (p * theta // sum(pi)) // q * q) for p, q in zip(pi, rs)]


@pytest.mark.parametrize("seed", range(10))
def test_grants_never_worsen_balance(seed):
    rng = random.Random(200 + seed)
    model = random_model(rng, rng.randint(2, 6))
    rs = [layer.kernel_size for layer in model.layers]
    pi = [layer.macs for layer in model.layers]
    theta = rng.randint(2 * sum(rs), 40 * sum(rs))
    before = _preallocation(pi, rs, theta)
    if sum(before) > theta:
        pytest.skip("clamp overshoot case")
    after = allocate_dsps(model, ResourceBudget(multipliers=theta))
    assert sum(after) >= sum(before)
    # the slowest layer never gets slower, in ideal pi/theta terms and in
    # decomposed row time; the max/min spread can widen (a granted layer may
    # drop below the previous minimum)
    ideal0 = max(Fraction(p, t) for p, t in zip(pi, before))
    ideal1 = max(Fraction(p, t) for p, t in zip(pi, after))
    assert ideal1 <= ideal0
    assert max(_normalized_times(model, after)) <= max(_normalized_times(model, before))


def test_presets_use_unconstrained_parallelism():
    odd_sizes, mismatched = 0, 0
    for name in BUILTIN_MODELS:
        model = builtin_model(name)
        alloc = allocate(model, ResourceBudget(multipliers=900))
        prev_m = None
        for layer, la in zip(model.layers, alloc.layers):
            if not layer.is_compute:
                continue
            for v in (la.c_par, la.m_par):
                odd_sizes += v & (v - 1) != 0
            mismatched += prev_m is not None and la.c_par != prev_m
            prev_m = la.m_par
    assert odd_sizes > 0
    assert mismatched > 0


# ---------------------------------------------------------------------------
# buffers and BRAM


def test_activation_buffer_rows_examples():
    assert activation_buffer_rows(conv_spec(r=3, s=3), 1, 1) == 4
    for k in range(1, 9):
        assert activation_buffer_rows(conv_spec(r=3, s=3), k, k) == 3 + 2 * k - 1
    assert activation_buffer_rows(conv_spec(r=3, s=3, stride=2), 2, 1) == 6


def test_provisioned_rows_add_slack_only_when_needed():
    stride1 = conv_spec(r=3, s=3)
    assert overlap_slack_rows(stride1, 1, 1) == 0
    assert provisioned_buffer_rows(stride1, 1, 1) == 4
    strided = conv_spec(r=3, s=3, stride=2)
    assert overlap_slack_rows(strided, 2, 1) == 3 + 1
    assert provisioned_buffer_rows(strided, 2, 1, overlap=False) == 6


def test_bram_blocks_examples():
    layer = conv_spec(c=1, w=4)
    assert bram_blocks_for_buffer(layer, 4, 16, 36864) == 4
    wide = conv_spec(c=1, w=18433, in_w=18433)
    assert bram_blocks_for_buffer(wide, 1, 1, 18432) == 2
    assert bram_blocks_for_buffer(wide, 3, 1, 18432) == 6


def test_vgg16_bram_within_budget():
    alloc = allocate(builtin_model("vgg16"), ResourceBudget(multipliers=900))
    assert 0 < alloc.total_bram <= 545


# ---------------------------------------------------------------------------
# Algorithm 2


def test_unbounded_bandwidth_keeps_k_one():
    model = builtin_model("alexnet")
    alloc = allocate(model, ResourceBudget(multipliers=900, ddr_bandwidth=math.inf))
    assert all(la.k_par == 1 for la in alloc.layers)
    thetas = allocate_dsps(model, ResourceBudget(multipliers=900))
    plan = allocate_bram_bandwidth(model, thetas, ResourceBudget(multipliers=900,
                                                                 ddr_bandwidth=math.inf))
    assert plan.history == []


def test_doubling_k_halves_traffic():
    layer = builtin_model("vgg16").layers[5]
    assert perf.weight_traffic(layer, 2) * 2 == perf.weight_traffic(layer, 1)


def test_traffic_strictly_decreases_and_bram_stays_in_budget():
    model = builtin_model("alexnet")
    budget = ResourceBudget(multipliers=900, ddr_bandwidth=1e9)
    thetas = allocate_dsps(model, budget)
    plan = allocate_bram_bandwidth(model, thetas, budget)
    sums = [s for _, s, _ in plan.history]
    assert len(sums) > 3
    assert all(b < a for a, b in zip(sums, sums[1:]))
    assert plan.total_bram <= budget.bram_blocks


def test_grant_order_matches_manual_execution():
    model = make_model("two", (16, 16, 8), [
        {"kind": "conv", "c": 8, "m": 64, "r": 3, "s": 3},
        {"kind": "conv", "c": 64, "m": 16, "r": 1, "s": 1},
    ])
    budget = ResourceBudget(multipliers=300, ddr_bandwidth=2e8, bram_blocks=100_000)
    thetas = allocate_dsps(model, budget)
    plan = allocate_bram_bandwidth(model, thetas, budget)

    omega = [layer.height * layer.weight_count for layer in model.layers]
    assert omega[0] > omega[1]
    row_time = max(
        Fraction(layer.height * layer.width * math.ceil(layer.in_channels / cp)
                 * math.ceil(layer.out_channels / mp), model.input_height)
        for layer, t in zip(model.layers, thetas)
        for cp, mp in [brute_decompose(layer.in_channels, layer.out_channels,
                                       t // layer.kernel_size)])
    order = algorithm2_grant_order(omega, [layer.height for layer in model.layers], row_time,
                                   model.input_height, budget.frequency, budget.ddr_bandwidth, 2)
    assert order[0] == 0
    assert [idx for idx, _, _ in plan.history] == order


def test_initial_buffers_over_budget_raise():
    with pytest.raises(InfeasibleBudgetError, match="BRAM"):
        allocate(builtin_model("vgg16"), ResourceBudget(multipliers=900, bram_blocks=50))


def test_allocation_json_fields():
    alloc = allocate(builtin_model("zf"), ResourceBudget(multipliers=900))
    doc = alloc.to_dict()
    assert set(doc["layers"][0]) == {"theta", "c_par", "m_par", "k_par", "act_rows",
                                     "bram_blocks"}
    assert doc["total_multipliers"] == alloc.total_multipliers
