"""Object-detection data tooling: box geometry and anchor grids, four
anchor matchers, sparse label batches with a binary record format, a
staged pipeline harness, and an ask/tell hyperparameter optimizer."""

from .geometry import (
    Box,
    GridSpec,
    InvalidBoxError,
    InvalidSpecError,
    ScoredBox,
    build_anchor_grid,
    euclidean_distance,
    euclidean_distance_matrix,
    iou,
    iou_matrix,
    matching_distance,
    matching_distance_matrix,
    nms,
)
from .hyperopt import (
    Dim,
    OptimizerState,
    ProtocolError,
    RankDeficiencyError,
    SearchSpace,
    Trial,
    TrustRegionModel,
    ask,
    best,
    fit_quadratic_tr,
    get_objective,
    lipschitz_estimate,
    load_bundled_space,
    load_space,
    load_state,
    new_optimizer,
    round_integers,
    run_optimization,
    save_space,
    save_state,
    tell,
)
from .matching import (
    CapacityError,
    DistanceRanking,
    MatchAssignment,
    MatchConfig,
    MatchInconsistencyError,
    build_rankings,
    compute_deltas,
    cost_matrices,
    decode_deltas,
    match_exact,
    match_greedy_bipartite,
    match_parallel,
    match_serial,
    match_serial_cost,
    thread_cap,
    total_weight,
)
from .pipeline import (
    DataUnderrunError,
    PipelineConfig,
    SpeedupReport,
    StageSpec,
    ThroughputReport,
    compare_pipelines,
    model_throughput,
    run_pipeline,
)
from .sparse_labels import (
    CorruptBatchError,
    LabelRecord,
    RecordCorruptionError,
    RecordFormatError,
    SparseLabelBatch,
    augment_jitter,
    decode_batch,
    encode_batch,
    gen_synthetic,
    read_records,
    write_records,
)

__version__ = "0.1.0"
