"""Time conv_forward on the compiled and pure-Python kernels.

    python3 benchmarks/bench_engine.py --size 28 --channels 16 --repeat 3

Both backends run the same layer and their outputs are compared before any
timing is reported.
"""
from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from pipeflow.engine import EngineConfig, QuantTensor, conv_forward, kernels
from pipeflow.model import QuantFormat, make_model


def build_case(size: int, channels: int, bits: int, seed: int):
    model = make_model("bench", (size, size, channels), [
        {"kind": "conv", "c": channels, "m": channels, "r": 3, "s": 3},
    ], bit_mode=bits)
    layer = model.layers[0]
    rng = np.random.default_rng(seed)
    amp = 1 << (bits - 2)
    x = QuantTensor(rng.integers(-amp, amp, (channels, size, size)),
                    QuantFormat.uniform(bits, channels, bits // 2))
    w = QuantTensor(rng.integers(-amp, amp, (channels, channels, 3, 3)),
                    QuantFormat.uniform(bits, channels, bits // 2))
    cfg = EngineConfig(c_par=4, m_par=4, k_par=2, shifts=(bits,))
    return layer, cfg, w, x


def time_backend(backend, case, repeat: int) -> tuple[list[float], np.ndarray]:
    layer, cfg, w, x = case
    times, out = [], None
    for _ in range(repeat):
        start = time.perf_counter()
        out = conv_forward(layer, cfg, w, x, backend=backend).values
        times.append(time.perf_counter() - start)
    return times, out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=28, help="feature map height and width")
    parser.add_argument("--channels", type=int, default=16, help="input and output channels")
    parser.add_argument("--bits", type=int, choices=(8, 16), default=16)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    case = build_case(args.size, args.channels, args.bits, args.seed)
    macs = case[0].macs
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.insert(0, ("cython", kernels.compiled_backend))
    else:
        print("compiled kernel not built; timing the Python fallback only")

    results = {}
    for name, backend in backends:
        times, out = time_backend(backend, case, args.repeat)
        results[name] = (statistics.median(times), out)

    outputs = [out for _, out in results.values()]
    if any(not np.array_equal(outputs[0], o) for o in outputs[1:]):
        print("backends disagree", file=sys.stderr)
        return 1

    print(f"layer {args.size}x{args.size}, C=M={args.channels}, 3x3, {args.bits}-bit, "
          f"{macs:,} MACs, median of {args.repeat}")
    for name, (t, _) in results.items():
        print(f"  {name:7s} {t * 1e3:10.1f} ms  {macs / t / 1e6:8.2f} MMAC/s")
    if len(results) == 2:
        print(f"  speedup {results['python'][0] / results['cython'][0]:.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
