import numpy as np
import pytest

from odkit import (
    DataUnderrunError,
    PipelineConfig,
    StageSpec,
    compare_pipelines,
    gen_synthetic,
    match_serial,
    model_throughput,
    run_pipeline,
)
from odkit.pipeline import config_from_obj, format_report, report_to_obj

RECORDS = gen_synthetic(seed=2, n_images=80, max_boxes=4, image_w=96, image_h=96)


def two_stage(prefetch):
    return PipelineConfig(stages=[StageSpec("load", fixed_ms=10),
                                  StageSpec("update", fixed_ms=5)],
                          batch_size=2, prefetch_depth=prefetch, n_batches=15)


class TestValidation:
    def test_stage_rejects_negative_latency(self):
        with pytest.raises(ValueError):
            StageSpec("s", fixed_ms=-1)

    def test_stage_rejects_bad_placement(self):
        with pytest.raises(ValueError):
            StageSpec("s", placement="tpu")

    def test_config_rejects_empty_stages(self):
        with pytest.raises(ValueError):
            PipelineConfig(stages=[])

    def test_config_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            PipelineConfig(stages=[StageSpec("s")], batch_size=0)
        with pytest.raises(ValueError):
            PipelineConfig(stages=[StageSpec("s")], prefetch_depth=-1)


class TestModel:
    def test_bottleneck_rule(self):
        assert model_throughput(two_stage(prefetch=2)) == pytest.approx(100.0)

    def test_sum_rule(self):
        assert model_throughput(two_stage(prefetch=0)) == pytest.approx(1000 / 15)

    def test_transfer_cost_raises_bottleneck(self):
        cfg = PipelineConfig(
            stages=[StageSpec("load", fixed_ms=10),
                    StageSpec("net", fixed_ms=8, placement="accelerator",
                              transfer_cost_ms=4)],
            prefetch_depth=2, n_batches=5)
        # accelerator stage costs 8 + 4 transfer = 12 > 10
        assert model_throughput(cfg) == pytest.approx(1000 / 12)

    def test_first_stage_charged_against_host_source(self):
        cfg = PipelineConfig(
            stages=[StageSpec("net", fixed_ms=8, placement="accelerator",
                              transfer_cost_ms=4)],
            prefetch_depth=1, n_batches=5)
        assert model_throughput(cfg) == pytest.approx(1000 / 12)

    def test_per_box_cost_resolved_by_mean(self):
        cfg = PipelineConfig(stages=[StageSpec("match", per_box_ms=0.5)],
                             batch_size=4, prefetch_depth=0, n_batches=5,
                             mean_boxes_per_image=3.0)
        # 4 images/batch * 3 boxes * 0.5 ms
        assert model_throughput(cfg) == pytest.approx(1000 / 6)


class TestRun:
    def test_single_stage_wall_clock(self):
        cfg = PipelineConfig(stages=[StageSpec("only", fixed_ms=10)],
                             prefetch_depth=0, n_batches=10)
        r = run_pipeline(cfg, RECORDS)
        assert r.wall_ms == pytest.approx(100, rel=0.25)
        assert r.batches_per_sec == pytest.approx(100, rel=0.25)

    def test_prefetched_overlaps_stages(self):
        r = run_pipeline(two_stage(prefetch=2), RECORDS)
        assert r.batches_per_sec == pytest.approx(100, rel=0.2)
        assert r.predicted_batches_per_sec == pytest.approx(100.0)

    def test_synchronous_pays_the_sum(self):
        r = run_pipeline(two_stage(prefetch=0), RECORDS)
        assert r.batches_per_sec == pytest.approx(1000 / 15, rel=0.2)

    def test_images_per_sec_scales_with_batch(self):
        r = run_pipeline(two_stage(prefetch=1), RECORDS)
        assert r.images_per_sec == pytest.approx(r.batches_per_sec * 2)

    def test_underrun(self):
        cfg = PipelineConfig(stages=[StageSpec("s", fixed_ms=1)],
                             batch_size=32, prefetch_depth=1, n_batches=10)
        with pytest.raises(DataUnderrunError):
            run_pipeline(cfg, RECORDS)

    def test_work_conservation_and_order(self):
        for prefetch in (0, 3):
            cfg = PipelineConfig(stages=[StageSpec("a", fixed_ms=2),
                                         StageSpec("b", fixed_ms=1),
                                         StageSpec("c", fixed_ms=2)],
                                 batch_size=2, prefetch_depth=prefetch, n_batches=12)
            seen = []
            r = run_pipeline(cfg, RECORDS, on_batch=lambda p: seen.append(p["index"]))
            assert seen == list(range(12))
            assert r.n_batches_processed == 12

    def test_busy_times_accumulate(self):
        cfg = PipelineConfig(stages=[StageSpec("a", fixed_ms=5),
                                     StageSpec("b", fixed_ms=2)],
                             prefetch_depth=2, n_batches=10)
        r = run_pipeline(cfg, RECORDS)
        assert len(r.per_stage_busy_ms) == 2
        assert r.per_stage_busy_ms[0] == pytest.approx(50, rel=0.3)
        assert r.per_stage_busy_ms[1] == pytest.approx(20, rel=0.4)

    def test_prediction_sanity_band(self):
        for cfg in (two_stage(0), two_stage(2)):
            r = run_pipeline(cfg, RECORDS)
            assert r.batches_per_sec <= r.predicted_batches_per_sec * 1.25
            assert r.batches_per_sec >= r.predicted_batches_per_sec * 0.5

    def test_matcher_results_not_perturbed(self):
        anchors = np.array([[24.0, 24, 24, 24], [72.0, 24, 24, 24],
                            [24.0, 72, 24, 24], [72.0, 72, 24, 24],
                            [48.0, 48, 64, 40], [20.0, 70, 16, 16]])
        standalone = match_serial(anchors, [r.boxes for r in RECORDS[:24]])
        cfg = PipelineConfig(stages=[StageSpec("parse", fixed_ms=1),
                                     StageSpec("match"),
                                     StageSpec("update", fixed_ms=1)],
                             batch_size=4, prefetch_depth=2, n_batches=6)
        got = []
        run_pipeline(cfg, RECORDS[:24],
                     matcher=lambda recs: match_serial(anchors, [r.boxes for r in recs]),
                     on_batch=lambda p: got.append(p["results"]["match"]))
        merged = [ids for a in got for ids in a.anchor_ids]
        assert len(merged) == len(standalone.anchor_ids)
        assert all(np.array_equal(x, y) for x, y in zip(merged, standalone.anchor_ids))


class TestCompare:
    def test_self_comparison_is_flat(self):
        # longer runs keep scheduler jitter inside the 10% tolerance
        cfg = PipelineConfig(stages=[StageSpec("load", fixed_ms=10),
                                     StageSpec("update", fixed_ms=5)],
                             batch_size=2, prefetch_depth=2, n_batches=30)
        cmp = compare_pipelines(cfg, cfg, RECORDS)
        assert cmp.speedup == pytest.approx(1.0, rel=0.1)
        assert cmp.predicted_speedup == pytest.approx(1.0)

    def test_headline_ratio_case(self):
        slow = PipelineConfig(stages=[StageSpec("s", fixed_ms=18)],
                              prefetch_depth=0, n_batches=12)
        fast = PipelineConfig(stages=[StageSpec("s", fixed_ms=10)],
                              prefetch_depth=0, n_batches=12)
        cmp = compare_pipelines(slow, fast, RECORDS)
        assert cmp.predicted_speedup == pytest.approx(1.8)
        assert cmp.speedup == pytest.approx(1.8, rel=0.2)

    def test_colocation_beats_transfer_heavy_layout(self):
        layout_a = PipelineConfig(
            stages=[StageSpec("load", fixed_ms=6),
                    StageSpec("net", fixed_ms=4, placement="accelerator",
                              transfer_cost_ms=3),
                    StageSpec("update", fixed_ms=5, transfer_cost_ms=3)],
            prefetch_depth=0, n_batches=15)
        layout_b = PipelineConfig(
            stages=[StageSpec("load", fixed_ms=6),
                    StageSpec("net", fixed_ms=4),
                    StageSpec("update", fixed_ms=5)],
            prefetch_depth=2, n_batches=15)
        cmp = compare_pipelines(layout_a, layout_b, RECORDS)
        # A pays 6 + (4+3) + (5+3) = 21 serially; B pays its 6 ms bottleneck
        assert cmp.predicted_speedup == pytest.approx(21 / 6)
        assert cmp.speedup == pytest.approx(cmp.predicted_speedup, rel=0.2)


class TestJsonInterface:
    def test_config_parsing(self):
        cfg = config_from_obj({
            "stages": [{"name": "load", "fixed_ms": 10},
                       {"name": "net", "fixed_ms": 5, "placement": "accelerator",
                        "transfer_cost_ms": 2}],
            "batch_size": 4, "prefetch_depth": 2, "n_batches": 7})
        assert len(cfg.stages) == 2
        assert cfg.stages[1].placement == "accelerator"
        assert cfg.n_batches == 7

    def test_malformed_config_rejected(self):
        with pytest.raises(ValueError):
            config_from_obj({"stages": "nope"})
        with pytest.raises(ValueError):
            config_from_obj({})

    def test_report_serialization(self):
        r = run_pipeline(PipelineConfig(stages=[StageSpec("s", fixed_ms=2)],
                                        prefetch_depth=1, n_batches=5), RECORDS)
        obj = report_to_obj(r)
        assert set(obj) >= {"batches_per_sec", "images_per_sec", "wall_ms",
                            "per_stage_busy_ms", "predicted_batches_per_sec"}
        text = format_report(r, ["s"])
        assert "batches/sec" in text and "busy ms [s]" in text
