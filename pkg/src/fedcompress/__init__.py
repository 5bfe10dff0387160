"""Federated learning simulator with dynamic weight clustering, server-side
self-distillation on out-of-distribution data, and byte-exact communication
accounting against uncompressed baselines."""

from .clustering import (
    Codebook,
    assign,
    codebook_for_model,
    grow_centroids,
    init_centroids,
    snap,
    wc_loss,
    wc_loss_and_grads,
)
from .codec import (
    ClusteredModel,
    compression_ratio_from_counts,
    decode,
    decode_raw,
    encode,
    encode_raw,
    encoded_nbytes,
    model_compression_ratio,
    raw_nbytes,
)
from .config import ExperimentConfig, parse_config
from .data import (
    ClientState,
    Dataset,
    PartitionSpec,
    load_dataset_csv,
    make_blobs,
    make_ood,
    partition,
    save_dataset_csv,
)
from .distill import kld_grad_student, kld_loss, temp_softmax
from .errors import (
    ConfigError,
    DecodeError,
    DegenerateEmbeddingError,
    FedCompressError,
    PartitionError,
    ShapeError,
    UnsupportedArchitectureError,
)
from .experiment import ExperimentResult, run_experiment
from .federation import (
    ControllerState,
    FedConfig,
    RoundMetrics,
    ServerState,
    TrainConfig,
    client_update,
    fedavg_aggregate,
    run_round,
    score_aggregate,
    self_compress,
    update_cluster_count,
)
from .nn import (
    Batch,
    ModelGrads,
    ModelWeights,
    backward_ce,
    evaluate_accuracy,
    finite_diff_check,
    forward,
    init_model,
    penultimate_embeddings,
    sgd_step,
)
from .rank_score import ScoreReport, client_score, effective_rank_score, singular_values

__version__ = "0.1.0"
