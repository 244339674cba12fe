"""Command-line front end.

    pipeflow allocate --model vgg16 --dsp 900 --bits 16
    pipeflow estimate --model-file my_net.json --out json
    pipeflow simulate --model zf --frames 10 --trace zf_trace.csv
    pipeflow verify --model-file tiny.json --seed 0
    pipeflow report

Exit status is 0 when every requested check passes, 1 when a check fails
(simulation divergence, verification mismatch) and 2 for unusable input
(bad model file, infeasible budget, deadlock).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

from . import allocator as alloc_mod
from . import perf, report, sim
from .allocator import AllocationError, ResourceBudget
from .engine import EngineError, kernels
from .engine.tensorio import load_tensor
from .model import BUILTIN_MODELS, ModelError, builtin_model, load_model_file
from .verify import load_params, random_params, verify_network

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    model: str | None
    model_file: str | None
    dsp: int
    bram: int
    bram_bits: int
    bandwidth: float
    frequency: float
    bits: int
    out: str
    frames: int
    trace: str | None
    seed: int
    k0: int
    minimal_buffers: bool
    tolerance: float

    def load_model(self):
        model = load_model_file(self.model_file) if self.model_file else builtin_model(self.model)
        return model.with_bits(self.bits)

    def budget(self) -> ResourceBudget:
        return ResourceBudget.from_slices(
            self.dsp, self.bits, bram_blocks=self.bram, bram_block_bits=self.bram_bits,
            ddr_bandwidth=self.bandwidth, frequency=self.frequency)


def _positive(kind):
    def parse(text: str):
        try:
            value = kind(float(text)) if kind is int and "e" in text.lower() else kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--model", help=f"preset name ({', '.join(BUILTIN_MODELS)})")
    src.add_argument("--model-file", help="JSON model description")
    common.add_argument("--dsp", type=_positive(int), default=alloc_mod.DEFAULT_DSP_SLICES,
                        help="DSP slices (default %(default)s)")
    common.add_argument("--bram", type=_positive(int), default=alloc_mod.DEFAULT_BRAM_BLOCKS,
                        help="BRAM blocks (default %(default)s)")
    common.add_argument("--bram-bits", type=_positive(int),
                        default=alloc_mod.DEFAULT_BRAM_BLOCK_BITS,
                        help="bits per BRAM block (default %(default)s)")
    common.add_argument("--bw", type=_positive(float), default=alloc_mod.DEFAULT_BANDWIDTH,
                        help="DDR bandwidth in bytes/s (default %(default)g)")
    common.add_argument("--freq", type=_positive(float), default=alloc_mod.DEFAULT_FREQUENCY,
                        help="clock in Hz (default %(default)g)")
    common.add_argument("--bits", type=int, choices=(8, 16), default=16)
    common.add_argument("--out", choices=("table", "json", "csv"), default="table")
    common.add_argument("--frames", type=_positive(int), default=10,
                        help="pipeline passes to simulate (default %(default)s)")
    common.add_argument("--trace", nargs="?", const="trace.csv", default=None,
                        help="write the per-event simulation trace as CSV")
    common.add_argument("--seed", type=int, default=0, help="seed for generated tensors")
    common.add_argument("--k0", type=_positive(int), default=1,
                        help="rows the frame source delivers at a time")
    common.add_argument("--minimal-buffers", action="store_true",
                        help="size line buffers without the overlap slack")
    common.add_argument("--tolerance", type=float, default=0.05,
                        help="allowed simulated/analytical divergence (default %(default)s)")

    parser = argparse.ArgumentParser(
        prog="pipeflow", description="Layer-pipelined CNN accelerator exploration")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("allocate", parents=[common], help="allocate multipliers, rows and BRAM")
    sub.add_parser("estimate", parents=[common], help="analytical performance summary")
    sub.add_parser("simulate", parents=[common], help="event-driven pipeline simulation")
    v = sub.add_parser("verify", parents=[common], help="engine vs reference bit-exactness")
    v.add_argument("--input", help="input activation tensor (.bin with .json sidecar)")
    v.add_argument("--weights", help="directory with layer<i>_weights.bin files")
    v.add_argument("--zero", action="store_true", help="use all-zero generated tensors")
    v.add_argument("--debug", action="store_true", help="raise on 32-bit psum overflow")
    sub.add_parser("report", parents=[common],
                   help="side-by-side figures for the presets (or one model)")
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        model=args.model, model_file=args.model_file, dsp=args.dsp, bram=args.bram,
        bram_bits=args.bram_bits, bandwidth=args.bw, frequency=args.freq, bits=args.bits,
        out=args.out, frames=args.frames, trace=args.trace, seed=args.seed, k0=args.k0,
        minimal_buffers=args.minimal_buffers, tolerance=args.tolerance)


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _allocate(cfg: RunConfig):
    model = cfg.load_model()
    budget = cfg.budget()
    alloc = alloc_mod.allocate(model, budget, k0=cfg.k0, overlap=not cfg.minimal_buffers)
    return model, budget, alloc, perf.estimate(model, alloc, budget)


def cmd_allocate(cfg: RunConfig) -> int:
    model, budget, alloc, rep = _allocate(cfg)
    rows = report.layer_rows(model, alloc, rep)
    if cfg.out == "json":
        _emit(report.dumps({"model": model.name, "allocation": alloc.to_dict(),
                            "performance": rep.to_dict()}))
    elif cfg.out == "csv":
        _emit(report.to_csv(report.LAYER_HEADER, rows))
    else:
        _emit(f"{model.name}, {model.bit_mode}-bit, {cfg.dsp} DSP slices "
              f"({budget.multipliers} multipliers)\n")
        _emit(report.format_table(report.LAYER_HEADER, rows, "ll" + "r" * 9) + "\n")
        _emit(report.format_table(["", model.name], report.summary_rows(rep, alloc, budget), "lr"))
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    model, budget, alloc, rep = _allocate(cfg)
    rows = report.summary_rows(rep, alloc, budget)
    if cfg.out == "json":
        _emit(report.dumps(rep.to_dict()))
    elif cfg.out == "csv":
        _emit(report.to_csv(["metric", model.name], rows))
    else:
        _emit(report.format_table(["", model.name], rows, "lr"))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    model, budget, alloc, rep = _allocate(cfg)
    pipe = sim.build_pipeline(model, alloc)
    result = sim.run(pipe, cfg.frames, trace=cfg.trace is not None)
    div = sim.compare_with_analytical(result, rep, model, alloc)
    if cfg.trace:
        result.write_trace(cfg.trace)
    ok = div.cycles_rel_error <= cfg.tolerance
    if cfg.out == "json":
        _emit(report.dumps({"model": model.name, "simulation": result.to_dict(),
                            "divergence": div.to_dict(), "within_tolerance": ok}))
    else:
        header = ["stage", "busy cycles", "idle", "max rows", "capacity"]
        rows = [[st.name, result.busy_cycles[i], f"{result.idle_fraction[i]:.1%}",
                 result.max_buffer_occupancy[i], result.buffer_capacity[i]]
                for i, st in enumerate(pipe.stages)]
        summary = [
            ["Frames", result.frames_completed],
            ["Total cycles", result.total_cycles],
            ["Simulated cycles/pass", f"{div.simulated_cycles_per_pass:.0f}"],
            ["Analytical cycles/pass", div.analytical_cycles_per_pass],
            ["Cycle divergence", f"{div.cycles_rel_error:.2%}"],
            ["Weight words/frame (sim)", f"{div.simulated_weight_words:.0f}"],
            ["Weight words/frame (model)", f"{div.analytical_weight_words:.0f}"],
            ["Within tolerance", "yes" if ok else "no"],
        ]
        if cfg.out == "csv":
            _emit(report.to_csv(header, rows))
        else:
            _emit(report.format_table(header, rows, "lrrrr") + "\n")
            _emit(report.format_table(["", model.name], summary, "lr"))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(cfg: RunConfig, input_path=None, weights_dir=None, zero=False,
               debug=False) -> int:
    model = cfg.load_model()
    budget = cfg.budget()
    alloc = alloc_mod.allocate(model, budget, k0=cfg.k0, overlap=not cfg.minimal_buffers)
    iact, params = random_params(model, cfg.seed, zero=zero)
    if input_path:
        iact = load_tensor(input_path)
    if weights_dir:
        params = load_params(model, weights_dir)
    verdicts = verify_network(model, alloc, iact, params, debug=debug)
    ok = all(v.passed for v in verdicts)
    if cfg.out == "json":
        _emit(report.dumps({"model": model.name, "backend": kernels.BACKEND_NAME,
                            "passed": ok, "layers": [v.to_dict() for v in verdicts]}))
    else:
        header = ["layer", "kind", "elements", "mismatches", "verdict"]
        rows = [[v.index, v.kind, v.elements, v.mismatches, "PASS" if v.passed else "FAIL"]
                for v in verdicts]
        _emit(report.to_csv(header, rows) if cfg.out == "csv"
              else report.format_table(header, rows, "llrrl"))
        for v in verdicts:
            if not v.passed and v.first_mismatch:
                c, y, x = v.first_mismatch
                _emit(f"first mismatch: layer {v.index}, channel {c}, y {y}, x {x}: "
                      f"engine {v.engine_value}, reference {v.reference_value}")
                break
        _emit(f"{'PASS' if ok else 'FAIL'} ({kernels.BACKEND_NAME} kernel)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(cfg: RunConfig) -> int:
    if cfg.model or cfg.model_file:
        models = [cfg.load_model()]
    else:
        models = [builtin_model(name) for name in BUILTIN_MODELS]
    budget_kwargs = dict(bram_blocks=cfg.bram, bram_block_bits=cfg.bram_bits,
                         ddr_bandwidth=cfg.bandwidth, frequency=cfg.frequency)
    summaries = [report.summarize(m, cfg.dsp, **budget_kwargs) for m in models]
    if cfg.out == "json":
        _emit(report.dumps({s.name: {"16": s.report16.to_dict(), "8": s.report8.to_dict()}
                            for s in summaries}))
        return EXIT_OK
    header, rows = report.comparison_rows(summaries)
    _emit(report.to_csv(header, rows) if cfg.out == "csv"
          else report.format_table(header, rows))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "report" and not (args.model or args.model_file):
        parser.error("one of --model or --model-file is required")
    cfg = _config(args)
    try:
        if args.command == "allocate":
            return cmd_allocate(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.input, args.weights, args.zero, args.debug)
        return cmd_report(cfg)
    except sim.SimDeadlockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ModelError, AllocationError, EngineError, sim.SimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
