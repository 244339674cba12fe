"""Text, CSV and JSON rendering of allocation, performance and simulation results."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from . import perf
from .allocator import Allocation, ResourceBudget, allocate, mults_per_slice
from .model import NetworkModel

__all__ = [
    "REFERENCE_FIGURES",
    "ModelSummary",
    "format_table",
    "to_csv",
    "layer_rows",
    "summary_rows",
    "summarize",
    "comparison_rows",
    "dumps",
]

# Published ZC706 figures for the four benchmarks, used by ``report``.
REFERENCE_FIGURES = {
    "vgg16": {"gop": 30.94, "dsp": 900, "bram": 0.74, "efficiency": 0.980,
              "gops16": 353, "fps16": 11.3, "gops8": 706, "fps8": 22.6},
    "alexnet": {"gop": 1.45, "dsp": 864, "bram": 0.84, "efficiency": 0.904,
                "gops16": 312, "fps16": 230, "gops8": 624, "fps8": 459},
    "zf": {"gop": 2.34, "dsp": 892, "bram": 0.58, "efficiency": 0.908,
           "gops16": 324, "fps16": 138.4, "gops8": 648, "fps8": 276.8},
    "yolo": {"gop": 40.14, "dsp": 892, "bram": 0.76, "efficiency": 0.984,
             "gops16": 351, "fps16": 8.8, "gops8": 702, "fps8": 17.5},
}


def format_table(header: list[str], rows: list[list], align: str | None = None) -> str:
    """Aligned plain-text table; ``align`` holds one 'l' or 'r' per column."""
    cells = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    align = align or "l" + "r" * (len(header) - 1)
    lines = []
    for n, row in enumerate(cells):
        parts = [c.ljust(w) if a == "l" else c.rjust(w) for c, w, a in zip(row, widths, align)]
        lines.append("  ".join(parts).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}" if abs(value) < 1e4 else f"{value:.4e}"
    return str(value)


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


LAYER_HEADER = ["layer", "kind", "theta", "C'", "M'", "K", "rows", "BRAM", "T_row",
                "norm T_row", "idle"]


def layer_rows(model: NetworkModel, alloc: Allocation, report: perf.PerfReport) -> list[list]:
    rows = []
    for pos, (layer, la) in enumerate(zip(model.layers, alloc.layers)):
        rows.append([
            layer.index, layer.kind.value, la.theta, la.c_par, la.m_par, la.k_par,
            la.act_rows, la.bram_blocks, report.row_cycles[pos],
            f"{float(report.normalized_row_cycles[pos]):.1f}",
            f"{report.idle_fraction[pos]:.1%}",
        ])
    return rows


def summary_rows(report: perf.PerfReport, alloc: Allocation, budget: ResourceBudget) -> list[list]:
    return [
        ["Frequency(MHz)", f"{budget.frequency / 1e6:g}"],
        [f"DSP ({report.dsp_budget})", report.dsp_slices_used],
        [f"BRAM({budget.bram_blocks})", f"{report.bram_utilization:.1%} ({report.bram_used})"],
        ["DSP Efficiency", f"{report.dsp_efficiency:.2%}"],
        ["Complexity(GOP)", f"{report.complexity_gop:.2f}"],
        [f"Performance(GOPS,{report.bit_mode}b)", f"{report.gops:.1f}"],
        [f"Performance(FPS,{report.bit_mode}b)", f"{report.fps:.2f}"],
        ["Bottleneck layer", report.bottleneck_layer],
        ["Cycles per pass", report.pass_cycles],
        ["Required bandwidth(GB/s)", f"{report.required_bandwidth / 1e9:.2f}"],
        ["Bandwidth satisfied", "yes" if alloc.bandwidth_satisfied else "no"],
    ]


@dataclass(frozen=True)
class ModelSummary:
    name: str
    report16: perf.PerfReport
    report8: perf.PerfReport
    bram_blocks: int


def summarize(model: NetworkModel, dsp_slices: int, **budget_kwargs) -> ModelSummary:
    """Allocate and estimate ``model`` in both bit modes on the same slice budget."""
    reports = {}
    for bits in (16, 8):
        m = model.with_bits(bits)
        budget = ResourceBudget(multipliers=dsp_slices * mults_per_slice(bits), **budget_kwargs)
        reports[bits] = perf.estimate(m, allocate(m, budget), budget)
    return ModelSummary(model.name, reports[16], reports[8], reports[16].bram_budget)


COMPARISON_LABELS = [
    "Frequency(MHz)", "DSP", "BRAM", "DSP Efficiency", "Complexity(GOP)",
    "Performance(GOPS,16b)", "Performance(FPS,16b)", "Performance(GOPS,8b)",
    "Performance(FPS,8b)",
]


def comparison_rows(summaries: list[ModelSummary], with_reference: bool = True):
    """Rows in the order of COMPARISON_LABELS, one (ours[, ref]) column pair per model."""
    header = [""]
    for s in summaries:
        header.append(s.name)
        if with_reference and s.name in REFERENCE_FIGURES:
            header.append(f"{s.name} ref")
    rows = [[label] for label in COMPARISON_LABELS]
    for s in summaries:
        r16, r8 = s.report16, s.report8
        ours = [f"{r16.frequency / 1e6:g}", r16.dsp_slices_used, f"{r16.bram_utilization:.0%}",
                f"{r16.dsp_efficiency:.2%}", f"{r16.complexity_gop:.2f}", f"{r16.gops:.0f}",
                f"{r16.fps:.1f}", f"{r8.gops:.0f}", f"{r8.fps:.1f}"]
        for row, value in zip(rows, ours):
            row.append(value)
        if with_reference and s.name in REFERENCE_FIGURES:
            ref = REFERENCE_FIGURES[s.name]
            refs = ["200", ref["dsp"], f"{ref['bram']:.0%}", f"{ref['efficiency']:.2%}",
                    f"{ref['gop']:.2f}", ref["gops16"], ref["fps16"], ref["gops8"], ref["fps8"]]
            for row, value in zip(rows, refs):
                row.append(value)
    return header, rows
