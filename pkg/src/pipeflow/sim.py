"""Row-group discrete-event simulation of the layer pipeline.

Every stage owns the line buffer in front of it.  A stage starts a block of
K output rows once (a) all input rows its window touches have been written
and (b) the next buffer has room for the rows it will write; the block then
occupies the stage for ``rows * T_row / K`` cycles.  Rows are released from a
buffer when the consumer finishes the last block that reads them.  Zero-padding
rows are synthesized by the consumer and never occupy buffer space.  The frame
source is infinitely fast and limited only by backpressure.

Stage ``i``'s buffer holds the ``act_rows`` recorded by the allocator (see
``allocator.provisioned_buffer_rows``).  A fully-connected stage reads the
whole previous feature map as one flattened row, so its window and capacity
are measured in producer rows.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import perf
from .allocator import Allocation, provisioned_buffer_rows
from .model import LayerKind, NetworkModel

__all__ = [
    "Stage",
    "Pipeline",
    "SimReport",
    "Divergence",
    "SimError",
    "SimDeadlockError",
    "build_pipeline",
    "run",
    "compare_with_analytical",
]


class SimError(RuntimeError):
    pass


class SimDeadlockError(SimError):
    def __init__(self, cycle: int, waits: list[str]):
        self.cycle = cycle
        self.waits = waits
        super().__init__(f"deadlock at cycle {cycle}: " + "; ".join(waits))


@dataclass
class Stage:
    index: int
    name: str
    in_rows: int          # producer rows per frame feeding this stage
    out_rows: int         # rows produced per frame
    k: int
    window: int           # R_eff: producer rows read by a single output row
    step: int             # G_eff: producer rows advanced per output row
    pad: int
    capacity: int
    row_cost: int         # cycles per output row (T_row / K)
    weight_words: int     # weights fetched per block

    # dynamic state
    written: int = 0
    inflight: int = 0
    freed: int = 0
    frame: int = 0
    block: int = 0
    busy_until: int | None = None
    busy_cycles: int = 0
    rows_produced: int = 0
    weight_words_loaded: int = 0
    max_occupancy: int = 0

    @property
    def blocks_per_frame(self) -> int:
        return -(-self.out_rows // self.k)

    @property
    def occupancy(self) -> int:
        return self.written + self.inflight - self.freed

    def block_rows(self, block: int) -> int:
        return min(self.k, self.out_rows - block * self.k)

    def span(self, block: int) -> tuple[int, int]:
        """Inclusive producer-row range read by ``block`` within one frame."""
        first = block * self.k
        last = first + self.block_rows(block) - 1
        lo = max(0, first * self.step - self.pad)
        hi = min(self.in_rows - 1, last * self.step - self.pad + self.window - 1)
        return lo, hi


@dataclass
class Pipeline:
    model: NetworkModel
    stages: list[Stage]
    lanes: int = 1
    k0: int = 1


@dataclass
class SimReport:
    frames_completed: int
    passes: int
    lanes: int
    total_cycles: int
    steady_state_cycles_per_frame: float
    steady_state_cycles_per_pass: float
    idle_fraction: list[float]
    busy_cycles: list[int]
    max_buffer_occupancy: list[int]
    buffer_capacity: list[int]
    weight_traffic_per_frame: float
    rows_produced: list[int]
    rows_consumed: list[int]
    frame_done_cycles: list[int] = field(default_factory=list)
    trace: list[tuple[int, int, str, int]] | None = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "trace"}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["cycle", "stage", "event", "buffer_occupancy"])
        writer.writerows(self.trace or [])
        return buf.getvalue()

    def write_trace(self, path: str | Path) -> None:
        Path(path).write_text(self.trace_csv())


def build_pipeline(model: NetworkModel, alloc: Allocation) -> Pipeline:
    if len(alloc.layers) != len(model.layers):
        have = {la.index for la in alloc.layers}
        missing = [layer.index for layer in model.layers if layer.index not in have]
        detail = f"missing layer(s) {missing}" if missing else "extra layers"
        raise SimError(f"allocation covers {len(alloc.layers)} of {len(model.layers)} "
                       f"layers: {detail}")
    stages = []
    prev_h = model.input_height
    for pos, (layer, la) in enumerate(zip(model.layers, alloc.layers)):
        if la.index != layer.index:
            raise SimError(f"allocation entry {pos} is for layer {la.index}, "
                           f"expected layer {layer.index}")
        k_prev = alloc.layers[pos - 1].k_par if pos else alloc.k0
        if layer.kind is LayerKind.FC:
            unit = prev_h
            window, step, pad = prev_h, prev_h, 0
        else:
            unit = 1
            window, step, pad = layer.kernel_h, layer.stride, layer.padding
        rows = la.act_rows or provisioned_buffer_rows(layer, la.k_par, k_prev)
        # a fully-connected buffer row is one whole flattened producer map
        capacity = rows * unit
        stages.append(Stage(
            index=layer.index, name=f"{layer.kind.value}{layer.index}",
            in_rows=prev_h, out_rows=layer.height, k=la.k_par, window=window, step=step,
            pad=pad, capacity=capacity,
            row_cost=perf.row_cycles(layer, la) // la.k_par,
            weight_words=layer.weight_count,
        ))
        prev_h = layer.height
    return Pipeline(model=model, stages=stages, lanes=alloc.lanes, k0=alloc.k0)


def _reset(pipe: Pipeline) -> None:
    for st in pipe.stages:
        st.written = st.inflight = st.freed = 0
        st.frame = st.block = 0
        st.busy_until = None
        st.busy_cycles = st.rows_produced = st.weight_words_loaded = st.max_occupancy = 0


def run(pipe: Pipeline, frames: int, trace: bool = False) -> SimReport:
    """Simulate ``frames`` pipeline passes (each pass carries ``lanes`` frames)."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    _reset(pipe)
    stages = pipe.stages
    n = len(stages)
    first = stages[0]
    source_total = frames * first.in_rows
    events: list[tuple[int, int, int]] = []
    seq = 0
    now = 0
    done_at: list[int] = []
    log = [] if trace else None

    def note(st: Stage):
        occ = st.occupancy
        if occ > st.capacity:
            raise SimError(f"stage {st.index}: buffer holds {occ} rows, capacity {st.capacity}")
        st.max_occupancy = max(st.max_occupancy, occ)

    def feed_source() -> bool:
        moved = False
        while first.written < source_total:
            rows = min(pipe.k0, source_total - first.written)
            if first.occupancy + rows > first.capacity:
                break
            first.written += rows
            note(first)
            moved = True
        return moved

    def try_start(pos: int) -> bool:
        nonlocal seq
        st = stages[pos]
        if st.busy_until is not None or st.frame >= frames:
            return False
        lo, hi = st.span(st.block)
        if st.written < st.frame * st.in_rows + hi + 1:
            return False
        rows = st.block_rows(st.block)
        if pos + 1 < n:
            nxt = stages[pos + 1]
            if nxt.occupancy + rows > nxt.capacity:
                return False
            nxt.inflight += rows
            note(nxt)
        duration = rows * st.row_cost
        st.busy_until = now + duration
        st.busy_cycles += duration
        st.weight_words_loaded += st.weight_words
        heapq.heappush(events, (st.busy_until, seq, pos))
        seq += 1
        if log is not None:
            log.append((now, st.index, "start", st.occupancy))
        return True

    def finish(pos: int) -> None:
        st = stages[pos]
        rows = st.block_rows(st.block)
        st.busy_until = None
        st.rows_produced += rows
        if pos + 1 < n:
            nxt = stages[pos + 1]
            nxt.inflight -= rows
            nxt.written += rows
        base = st.frame * st.in_rows
        if st.block + 1 < st.blocks_per_frame:
            st.block += 1
            st.freed = base + st.span(st.block)[0]
        else:
            st.block = 0
            st.frame += 1
            st.freed = base + st.in_rows
            if pos == n - 1:
                done_at.append(now)
        if log is not None:
            log.append((now, st.index, "finish", st.occupancy))

    def settle(candidates: set[int]) -> None:
        work = sorted(candidates)
        pending = set(work)
        while work:
            pos = work.pop(0)
            pending.discard(pos)
            changed = feed_source() if pos == 0 else False
            changed = try_start(pos) or changed
            if changed:
                for other in (pos - 1, pos, pos + 1):
                    if 0 <= other < n and other not in pending:
                        pending.add(other)
                        work.append(other)
                work.sort()

    feed_source()
    settle(set(range(n)))
    while events:
        now = events[0][0]
        touched = set()
        while events and events[0][0] == now:
            _, _, pos = heapq.heappop(events)
            finish(pos)
            touched.update(p for p in (pos - 1, pos, pos + 1) if 0 <= p < n)
        settle(touched)

    if stages[-1].frame < frames:
        raise SimDeadlockError(now, _wait_for(pipe, frames))

    total = now
    if frames >= 2:
        per_pass = (done_at[-1] - done_at[0]) / (frames - 1)
    else:
        per_pass = float(done_at[0])
    in_rows = [st.in_rows * frames for st in stages]
    return SimReport(
        frames_completed=frames * pipe.lanes,
        passes=frames,
        lanes=pipe.lanes,
        total_cycles=total,
        steady_state_cycles_per_frame=per_pass / pipe.lanes,
        steady_state_cycles_per_pass=per_pass,
        idle_fraction=[1 - st.busy_cycles / total for st in stages],
        busy_cycles=[st.busy_cycles for st in stages],
        max_buffer_occupancy=[st.max_occupancy for st in stages],
        buffer_capacity=[st.capacity for st in stages],
        weight_traffic_per_frame=(sum(st.weight_words_loaded for st in stages)
                                  / (frames * pipe.lanes)),
        rows_produced=[st.rows_produced for st in stages],
        rows_consumed=[min(st.freed, rows) for st, rows in zip(stages, in_rows)],
        frame_done_cycles=done_at,
        trace=log,
    )


def _wait_for(pipe: Pipeline, frames: int) -> list[str]:
    waits = []
    stages = pipe.stages
    for pos, st in enumerate(stages):
        if st.frame >= frames or st.busy_until is not None:
            continue
        lo, hi = st.span(st.block)
        need = st.frame * st.in_rows + hi + 1
        if st.written < need:
            src = f"stage {stages[pos - 1].index}" if pos else "source"
            waits.append(f"stage {st.index} waits on {src}: needs row {need - 1}, "
                         f"{st.written} written, buffer {st.occupancy}/{st.capacity}")
        elif pos + 1 < len(stages):
            nxt = stages[pos + 1]
            waits.append(f"stage {st.index} waits on stage {nxt.index}: output buffer "
                         f"{nxt.occupancy}/{nxt.capacity} cannot take "
                         f"{st.block_rows(st.block)} rows")
    return waits


@dataclass(frozen=True)
class Divergence:
    simulated_cycles_per_pass: float
    analytical_cycles_per_pass: int
    cycles_rel_error: float
    simulated_weight_words: float
    analytical_weight_words: float
    traffic_rel_error: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_with_analytical(sim: SimReport, report: perf.PerfReport,
                            model: NetworkModel, alloc: Allocation) -> Divergence:
    analytical = report.pass_cycles
    # one weight load per K-row block, shared by every frame of the pass
    traffic = Fraction(sum(-(-layer.height // la.k_par) * layer.weight_count
                           for layer, la in zip(model.layers, alloc.layers)), alloc.lanes)
    return Divergence(
        simulated_cycles_per_pass=sim.steady_state_cycles_per_pass,
        analytical_cycles_per_pass=analytical,
        cycles_rel_error=abs(sim.steady_state_cycles_per_pass - analytical) / analytical,
        simulated_weight_words=sim.weight_traffic_per_frame,
        analytical_weight_words=float(traffic),
        traffic_rel_error=(float(abs(sim.weight_traffic_per_frame - traffic) / traffic)
                           if traffic else 0.0),
    )
