"""Staged producer/consumer pipeline harness with a throughput model.

Stages run as one worker thread each, connected by bounded FIFO queues of
capacity ``prefetch_depth``; batch ownership moves through the queues, so
no state is shared. ``prefetch_depth = 0`` degenerates to a fully
synchronous loop (no overlap between stages). Shutdown is an end-of-stream
sentinel; the stage graph is a line, so deadlock is impossible.

Stage latency is either simulated (sleep for the modeled cost) or real
(run a bound callable and measure it). The analytic model predicts
batches/sec as 1000 over the bottleneck stage cost when prefetched, or
over the summed cost when synchronous. A stage placed differently from its
predecessor is charged its transfer cost, which is how a layout that
bounces between host and accelerator loses throughput against a co-located
one.
"""

from __future__ import annotations

import itertools
import json
import queue
import threading
import time
from dataclasses import dataclass

_PLACEMENTS = ("host", "accelerator")
# the first stage is charged transfer if it is not host-placed, since
# input records originate on the host
_SOURCE_PLACEMENT = "host"


class DataUnderrunError(RuntimeError):
    """The record stream ended before n_batches * batch_size records."""


@dataclass
class StageSpec:
    """One pipeline stage: a cost model plus an optional real workload.

    ``fixed_ms`` is charged per batch, ``per_box_ms`` per ground-truth box
    in the batch. When ``fn`` is set the stage runs it instead of sleeping
    (fn receives and returns the batch payload dict).
    """

    name: str
    fixed_ms: float = 0.0
    per_box_ms: float = 0.0
    placement: str = "host"
    transfer_cost_ms: float = 0.0
    fn: object = None

    def __post_init__(self):
        if self.fixed_ms < 0 or self.per_box_ms < 0 or self.transfer_cost_ms < 0:
            raise ValueError(f"stage {self.name!r}: latencies must be >= 0")
        if self.placement not in _PLACEMENTS:
            raise ValueError(
                f"stage {self.name!r}: placement must be one of {_PLACEMENTS}, "
                f"got {self.placement!r}")


@dataclass
class PipelineConfig:
    stages: list[StageSpec]
    batch_size: int = 1
    prefetch_depth: int = 0
    n_batches: int = 1
    # resolves per-box costs in predictions, where actual counts are unknown
    mean_boxes_per_image: float = 0.0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("pipeline needs at least one stage")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.prefetch_depth < 0:
            raise ValueError(f"prefetch_depth must be >= 0, got {self.prefetch_depth}")
        if self.n_batches < 1:
            raise ValueError(f"n_batches must be >= 1, got {self.n_batches}")
        if self.mean_boxes_per_image < 0:
            raise ValueError("mean_boxes_per_image must be >= 0")


@dataclass
class ThroughputReport:
    batches_per_sec: float
    images_per_sec: float
    wall_ms: float
    per_stage_busy_ms: list[float]
    predicted_batches_per_sec: float
    n_batches_processed: int = 0


def _stage_cost_ms(stage: StageSpec, prev_placement: str, boxes_in_batch: float) -> float:
    cost = stage.fixed_ms + stage.per_box_ms * boxes_in_batch
    if stage.placement != prev_placement:
        cost += stage.transfer_cost_ms
    return cost


def _modeled_costs(cfg: PipelineConfig) -> list[float]:
    boxes = cfg.batch_size * cfg.mean_boxes_per_image
    costs, prev = [], _SOURCE_PLACEMENT
    for st in cfg.stages:
        costs.append(_stage_cost_ms(st, prev, boxes))
        prev = st.placement
    return costs


def model_throughput(cfg: PipelineConfig) -> float:
    """Predicted batches/sec: bottleneck rule when prefetched, sum rule
    when synchronous."""
    costs = _modeled_costs(cfg)
    total = max(costs) if cfg.prefetch_depth >= 1 else sum(costs)
    if total <= 0:
        return float("inf")
    return 1000.0 / total


def _collect_batches(cfg: PipelineConfig, data) -> list[dict]:
    it = iter(data)
    batches = []
    for i in range(cfg.n_batches):
        records = list(itertools.islice(it, cfg.batch_size))
        if len(records) < cfg.batch_size:
            raise DataUnderrunError(
                f"needed {cfg.n_batches * cfg.batch_size} records, stream ended "
                f"after {i * cfg.batch_size + len(records)}")
        n_boxes = sum(len(getattr(r, "boxes", ())) for r in records)
        batches.append({"index": i, "records": records, "n_boxes": n_boxes,
                        "results": {}})
    return batches


def _run_stage(stage: StageSpec, prev_placement: str, payload: dict,
               busy_ms: list[float], pos: int) -> dict:
    t0 = time.perf_counter()
    if stage.fn is not None:
        payload = stage.fn(payload)
    else:
        time.sleep(_stage_cost_ms(stage, prev_placement, payload["n_boxes"]) / 1000.0)
    busy_ms[pos] += (time.perf_counter() - t0) * 1000.0
    return payload


def run_pipeline(cfg: PipelineConfig, data, matcher=None, workers=None,
                 on_batch=None) -> ThroughputReport:
    """Push ``n_batches`` batches from ``data`` through the stages.

    ``matcher`` (a callable on a list of records) binds to the stage named
    ``match``; ``workers`` maps further stage names to callables on the
    batch payload. ``on_batch(payload)`` fires at the sink in exit order.
    Stages without a bound callable sleep their modeled cost.
    """
    stage_fns = dict(workers or {})
    if matcher is not None:
        def _match_stage(payload):
            payload["results"]["match"] = matcher(payload["records"])
            return payload
        stage_fns.setdefault("match", _match_stage)

    stages = []
    for st in cfg.stages:
        fn = st.fn if st.fn is not None else stage_fns.get(st.name)
        stages.append(StageSpec(st.name, st.fixed_ms, st.per_box_ms, st.placement,
                                st.transfer_cost_ms, fn))

    batches = _collect_batches(cfg, data)
    busy_ms = [0.0] * len(stages)
    prev_placements = [_SOURCE_PLACEMENT] + [st.placement for st in stages[:-1]]
    done = 0

    t_start = time.perf_counter()
    if cfg.prefetch_depth == 0:
        # layout-A analogue: one batch traverses all stages before the next
        for payload in batches:
            for pos, st in enumerate(stages):
                payload = _run_stage(st, prev_placements[pos], payload, busy_ms, pos)
            done += 1
            if on_batch is not None:
                on_batch(payload)
    else:
        qs = [queue.Queue(maxsize=cfg.prefetch_depth) for _ in range(len(stages) + 1)]

        def feed():
            for payload in batches:
                qs[0].put(payload)
            qs[0].put(None)

        def work(pos: int):
            st = stages[pos]
            while True:
                payload = qs[pos].get()
                if payload is None:
                    qs[pos + 1].put(None)  # pass the sentinel downstream
                    return
                payload = _run_stage(st, prev_placements[pos], payload, busy_ms, pos)
                qs[pos + 1].put(payload)

        threads = [threading.Thread(target=feed)]
        threads += [threading.Thread(target=work, args=(pos,)) for pos in range(len(stages))]
        for th in threads:
            th.start()
        while True:
            payload = qs[-1].get()
            if payload is None:
                break
            done += 1
            if on_batch is not None:
                on_batch(payload)
        for th in threads:
            th.join()
    wall_ms = (time.perf_counter() - t_start) * 1000.0

    bps = done / (wall_ms / 1000.0) if wall_ms > 0 else float("inf")
    return ThroughputReport(
        batches_per_sec=bps,
        images_per_sec=bps * cfg.batch_size,
        wall_ms=wall_ms,
        per_stage_busy_ms=busy_ms,
        predicted_batches_per_sec=model_throughput(cfg),
        n_batches_processed=done,
    )


@dataclass
class SpeedupReport:
    report_a: ThroughputReport
    report_b: ThroughputReport
    speedup: float            # measured throughput(b) / throughput(a)
    predicted_speedup: float


def compare_pipelines(cfg_a: PipelineConfig, cfg_b: PipelineConfig, data) -> SpeedupReport:
    """Run both layouts over the same records and report b-over-a speedup."""
    records = list(data)
    ra = run_pipeline(cfg_a, records)
    rb = run_pipeline(cfg_b, records)
    return SpeedupReport(
        report_a=ra, report_b=rb,
        speedup=rb.batches_per_sec / ra.batches_per_sec,
        predicted_speedup=rb.predicted_batches_per_sec / ra.predicted_batches_per_sec,
    )


# ---------------------------------------------------------------- JSON I/O

def config_from_obj(obj: dict) -> PipelineConfig:
    try:
        stages = [StageSpec(name=str(s["name"]),
                            fixed_ms=float(s.get("fixed_ms", 0.0)),
                            per_box_ms=float(s.get("per_box_ms", 0.0)),
                            placement=str(s.get("placement", "host")),
                            transfer_cost_ms=float(s.get("transfer_cost_ms", 0.0)))
                  for s in obj["stages"]]
        return PipelineConfig(stages=stages,
                              batch_size=int(obj.get("batch_size", 1)),
                              prefetch_depth=int(obj.get("prefetch_depth", 0)),
                              n_batches=int(obj.get("n_batches", 1)),
                              mean_boxes_per_image=float(obj.get("mean_boxes_per_image", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"bad pipeline config: {e}") from None


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_obj(json.load(f))


def report_to_obj(r: ThroughputReport) -> dict:
    return {
        "batches_per_sec": r.batches_per_sec,
        "images_per_sec": r.images_per_sec,
        "wall_ms": r.wall_ms,
        "per_stage_busy_ms": list(r.per_stage_busy_ms),
        "predicted_batches_per_sec": r.predicted_batches_per_sec,
        "n_batches_processed": r.n_batches_processed,
    }


def format_report(r: ThroughputReport, stage_names=None) -> str:
    lines = [
        f"{'batches/sec':>22}  {r.batches_per_sec:10.2f}",
        f"{'images/sec':>22}  {r.images_per_sec:10.2f}",
        f"{'wall ms':>22}  {r.wall_ms:10.2f}",
        f"{'predicted batches/sec':>22}  {r.predicted_batches_per_sec:10.2f}",
    ]
    names = stage_names or [f"stage {i}" for i in range(len(r.per_stage_busy_ms))]
    for name, ms in zip(names, r.per_stage_busy_ms):
        lines.append(f"{'busy ms [' + name + ']':>22}  {ms:10.2f}")
    return "\n".join(lines)
