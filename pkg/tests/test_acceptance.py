"""Acceptance criteria, one check per criterion.

Each check prints a single ``criterion N: PASS|FAIL ...`` line with the
measured figures.  Run directly (``python3 tests/test_acceptance.py``) for the
summary alone, or through pytest, where a failing criterion fails its test.
"""
from __future__ import annotations

import random
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cases import random_case  # noqa: E402
from oracles import algorithm1_steps, brute_decompose  # noqa: E402
from pipeflow import perf, sim  # noqa: E402
from pipeflow.allocator import (  # noqa: E402
    ResourceBudget, allocate, allocate_bram_bandwidth, allocate_dsps, decompose_parallelism,
)
from pipeflow.engine import conv_forward  # noqa: E402
from pipeflow.model import (  # noqa: E402
    BUILTIN_MODELS, LayerKind, LayerSpec, builtin_model, make_model,
)

FREQ = 200e6


def _estimate(name, bits=16, slices=900):
    model = builtin_model(name).with_bits(bits)
    budget = ResourceBudget.from_slices(slices, bits, frequency=FREQ)
    alloc = allocate(model, budget)
    return model, budget, alloc, perf.estimate(model, alloc, budget)


def criterion_1():
    start = time.perf_counter()
    _, budget, alloc, rep = _estimate("vgg16")
    elapsed = time.perf_counter() - start
    peak = budget.multipliers * 2 * FREQ / 1e9  # 360 GOPS for 900 multipliers
    gops_identity = rep.dsp_efficiency * peak
    checks = {
        "efficiency in [96%, 100%]": 0.96 <= rep.dsp_efficiency <= 1.0,
        "GOPS within 2% of 353": abs(gops_identity - 353) <= 0.02 * 353,
        "FPS within 5% of 11.3": abs(rep.fps - 11.3) <= 0.05 * 11.3,
        "runtime < 5 s": elapsed < 5,
    }
    detail = (f"efficiency {rep.dsp_efficiency:.2%}, GOPS {gops_identity:.1f}, "
              f"FPS {rep.fps:.2f}, {alloc.total_multipliers} multipliers, {elapsed:.2f} s")
    return checks, detail


def criterion_2():
    floors = {"zf": 0.88, "yolo": 0.96, "alexnet": 0.88}
    checks, parts = {}, []
    for name, floor in floors.items():
        _, _, alloc, rep = _estimate(name)
        # peak of the multipliers actually in use
        peak = alloc.total_multipliers * 2 * FREQ / 1e9
        checks[f"{name} efficiency >= {floor:.0%}"] = rep.dsp_efficiency >= floor
        checks[f"{name} GOPS = efficiency x peak"] = (
            abs(rep.gops - rep.dsp_efficiency * peak) <= 1e-6 * rep.gops)
        parts.append(f"{name} {rep.dsp_efficiency:.2%}")
    return checks, ", ".join(parts)


def criterion_3():
    checks, parts = {}, []
    for name in BUILTIN_MODELS:
        r16 = _estimate(name, 16)[3]
        r8 = _estimate(name, 8)[3]
        checks[f"{name} 8-bit GOPS = 2 x 16-bit"] = r8.gops == 2 * r16.gops
        parts.append(f"{name} {r16.gops:.1f}/{r8.gops:.1f}")
    return checks, "GOPS 16b/8b: " + ", ".join(parts)


def criterion_4():
    checks, parts = {}, []
    for name in BUILTIN_MODELS:
        model, _, alloc, rep = _estimate(name)
        start = time.perf_counter()
        result = sim.run(sim.build_pipeline(model, alloc), 10)
        elapsed = time.perf_counter() - start
        div = sim.compare_with_analytical(result, rep, model, alloc)
        checks[f"{name} within 5%"] = div.cycles_rel_error <= 0.05
        parts.append(f"{name} {div.cycles_rel_error:.2%}")
        if name == "vgg16":
            checks["vgg16 10 frames < 60 s"] = elapsed < 60
            parts.append(f"vgg16 sim {elapsed:.2f} s")
    exact = 0
    singles = [dict(kind="conv", c=3, m=8, r=3, s=3),
               dict(kind="conv", c=4, m=5, r=5, s=5, stride=2),
               dict(kind="conv", c=6, m=6, r=1, s=1),
               dict(kind="pool", c=4, m=4, r=2, s=2, stride=2)]
    for spec in singles:
        model = make_model("single", (14, 14, spec["c"]), [spec])
        budget = ResourceBudget(multipliers=60)
        alloc = allocate(model, budget)
        rep = perf.estimate(model, alloc, budget)
        div = sim.compare_with_analytical(sim.run(sim.build_pipeline(model, alloc), 5), rep,
                                          model, alloc)
        exact += div.cycles_rel_error == 0
    checks["single-layer agreement exact"] = exact == len(singles)
    parts.append(f"single-layer exact {exact}/{len(singles)}")
    return checks, ", ".join(parts)


def _random_conv_model(rng, n_layers):
    h = rng.choice([8, 12, 16, 28])
    c = rng.randint(1, 16)
    layers = []
    for _ in range(n_layers):
        r = rng.choice([1, 3, 5])
        m = rng.randint(1, 64)
        layers.append({"kind": "conv", "c": c, "m": m, "r": r, "s": r})
        c = m
    return make_model("rand", (h, h, layers[0]["c"]), layers)


def criterion_5():
    sweep_bad = 0
    for c in range(1, 65):
        for m in range(1, 65):
            layer = LayerSpec(0, LayerKind.CONV, c, m, 1, 1)
            for arrays in range(1, 65):
                sweep_bad += decompose_parallelism(layer, arrays) != brute_decompose(c, m, arrays)
    rng = random.Random(2024)
    alg_bad = 0
    for _ in range(20):
        model = _random_conv_model(rng, rng.randint(2, 6))
        rs = [layer.kernel_size for layer in model.layers]
        theta = rng.randint(sum(rs), 40 * sum(rs))
        pi = [layer.macs for layer in model.layers]
        alg_bad += allocate_dsps(model, ResourceBudget(multipliers=theta)) != \
            algorithm1_steps(pi, rs, theta)
    checks = {"decomposition sweep 0 mismatches": sweep_bad == 0,
              "Algorithm 1 on 20 models": alg_bad == 0}
    return checks, (f"sweep mismatches {sweep_bad} of {64 ** 3}, "
                    f"Algorithm 1 mismatches {alg_bad}/20")


def criterion_6():
    checks, parts = {}, []
    for stride in (1, 2):
        for bits in (8, 16):
            for same in (True, False):
                rng = np.random.default_rng(100 * stride + bits + int(same))
                bad = 0
                for _ in range(100):
                    case = random_case(rng, stride, bits, same)
                    out = conv_forward(case.layer, case.cfg, case.weights, case.iact)
                    ref, frac = case.oracle()
                    bad += not (np.array_equal(out.values, ref)
                                and list(out.fmt.fraction_bits) == frac)
                tag = f"G={stride} {bits}b {'same' if same else 'valid'}"
                checks[tag] = bad == 0
                parts.append(f"{tag}: {bad}")
    rng = np.random.default_rng(31337)
    k_bad = 0
    for _ in range(50):
        case = random_case(rng, int(rng.integers(1, 3)), int(rng.choice([8, 16])),
                           bool(rng.integers(0, 2)))
        outs = [conv_forward(case.layer, replace(case.cfg, k_par=k), case.weights,
                             case.iact).values for k in (1, 2, 4)]
        k_bad += not (np.array_equal(outs[0], outs[1]) and np.array_equal(outs[0], outs[2]))
    checks["K in {1,2,4} invariance"] = k_bad == 0
    parts.append(f"K-invariance failures {k_bad}/50")
    return checks, "mismatching layers per combination: " + ", ".join(parts)


TIGHT_CHAIN = [{"kind": "conv", "c": 16, "m": 16, "r": 3, "s": 3}] * 4


def _sim_divergence(model, alloc, rep):
    try:
        result = sim.run(sim.build_pipeline(model, alloc), 6)
    except sim.SimDeadlockError:
        return None
    return abs(result.steady_state_cycles_per_pass - rep.pass_cycles) / rep.pass_cycles


def criterion_7():
    model = make_model("tight", (32, 32, 16), TIGHT_CHAIN)
    budget = ResourceBudget(multipliers=4 * 9 * 16, ddr_bandwidth=3e9, bram_blocks=4000)
    thetas = allocate_dsps(model, budget)
    plan = allocate_bram_bandwidth(model, thetas, budget)
    sums = [s for _, s, _ in plan.history]
    alloc = allocate(model, budget)
    rep = perf.estimate(model, alloc, budget)
    full = _sim_divergence(model, alloc, rep)
    short = replace(alloc, layers=tuple(replace(la, act_rows=la.act_rows - 1)
                                        for la in alloc.layers))
    cut = _sim_divergence(model, short, rep)
    checks = {
        "loop entered": len(sums) > 0,
        "sum(omega) strictly decreasing": all(b < a for a, b in zip(sums, sums[1:])),
        "final BRAM <= alpha": plan.total_bram <= budget.bram_blocks,
        "a_i rows: no deadlock, loss <= 5%": full is not None and full <= 0.05,
        "a_i - 1 rows: deadlock or loss > 5%": cut is None or cut > 0.05,
    }
    cut_text = "deadlock" if cut is None else f"{cut:.1%} loss"
    detail = (f"{len(sums)} iterations, K={list(plan.k_par)}, BRAM {plan.total_bram}/"
              f"{budget.bram_blocks}, a_i loss {full:.1%}, a_i - 1 {cut_text}")
    return checks, detail


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7]


def evaluate(number: int) -> tuple[bool, str]:
    checks, detail = CRITERIA[number - 1]()
    failed = [name for name, ok in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    line = f"criterion {number}: {status}  {detail}"
    if failed:
        line += "  [failed: " + "; ".join(failed) + "]"
    return not failed, line


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(number, capsys):
    ok, line = evaluate(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(n) for n in range(1, len(CRITERIA) + 1)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
