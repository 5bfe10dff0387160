"""Federated orchestration: local updates, aggregation, server-side
self-compression, the cluster-count controller, and byte accounting.

Every round is a pure function of (state, seeds): client randomness derives
from (experiment seed, round, client id), so execution order and thread
count never affect results. Byte counts come from the actual encoded
containers — what is counted is exactly what would travel.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import codec
from .clustering import (
    Codebook,
    _wc_terms,
    centroid_step,
    codebook_for_model,
    snap,
    wc_loss,
)
from .data import ClientState
from .distill import kld_grad_student, kld_loss
from .errors import DegenerateEmbeddingError, ShapeError
from .nn import (
    Batch,
    ModelWeights,
    backward_ce,
    backward_from_output_grad,
    evaluate_accuracy,
    forward,
    grads_add,
    sgd_step,
)
from .rank_score import client_score

MODES = ("fedavg", "fixed-cluster", "fedcompress-no-scs", "fedcompress")

# stream tags keep every consumer of randomness on its own subsequence
_STREAM_PARTICIPATION = 1
_STREAM_CLIENT = 2
_STREAM_SERVER = 3
_SUB_BATCHES = 0
_SUB_KMEANS = 1


@dataclass
class TrainConfig:
    """Local and server-side optimization settings."""

    lr_client: float = 0.05
    lr_server: float = 0.05
    epochs_client: int = 10
    epochs_server: int = 10
    batch_size: int = 32
    beta_client: float = 1.0
    beta_server: float = 1.0
    beta_warmup_epochs: int = 2
    temperature: float = 3.0

    def __post_init__(self):
        if self.lr_client <= 0 or self.lr_server <= 0:
            raise ShapeError("learning rates must be positive")
        if self.epochs_client < 1 or self.epochs_server < 0 or self.batch_size < 1:
            raise ShapeError("epoch and batch counts out of range")
        if self.beta_client < 0 or self.beta_server < 0:
            raise ShapeError("clustering weights must be non-negative")
        if not 0 <= self.beta_warmup_epochs < self.epochs_client:
            raise ShapeError(
                f"beta_warmup_epochs {self.beta_warmup_epochs} must be < epochs_client {self.epochs_client}"
            )
        if self.temperature <= 0:
            raise ShapeError("temperature must be positive")


@dataclass
class FedConfig:
    """Federation shape: who participates, how often, in which mode."""

    total_clients: int = 10
    participants: int = 10
    rounds: int = 15
    seed: int = 0
    mode: str = "fedcompress"
    fixed_cluster_count: int = 15
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ShapeError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.participants <= self.total_clients:
            raise ShapeError(
                f"participants {self.participants} must lie in [1, {self.total_clients}]"
            )
        if self.rounds < 1 or self.workers < 1 or self.fixed_cluster_count < 1:
            raise ShapeError("rounds, workers and fixed cluster count must be >= 1")


@dataclass(frozen=True)
class ControllerState:
    """Cluster-count controller driven by the aggregated score history."""

    cluster_count: int
    minimum: int
    maximum: int
    window: int = 3
    patience: int = 3
    tolerance: float = 1e-3
    history: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.minimum <= self.cluster_count <= self.maximum:
            raise ShapeError(
                f"cluster count {self.cluster_count} outside [{self.minimum}, {self.maximum}]"
            )
        if self.window < 1 or self.patience < 1:
            raise ShapeError("window and patience must be >= 1")


def update_cluster_count(ctrl: ControllerState, score: float) -> ControllerState:
    """Append a score; raise the cluster count when the moving average stalls.

    With fewer than window + patience scores nothing changes. Otherwise the
    current window mean is compared against the best of the previous
    ``patience`` window means: no improvement beyond the tolerance bumps the
    count by one, clamped at the maximum. The count never decreases.
    """
    history = ctrl.history + (float(score),)
    count = ctrl.cluster_count
    if len(history) >= ctrl.window + ctrl.patience:
        def window_mean(end: int) -> float:
            return float(np.mean(history[end - ctrl.window:end]))

        current = window_mean(len(history))
        best_previous = max(window_mean(len(history) - j) for j in range(1, ctrl.patience + 1))
        if current <= best_previous + ctrl.tolerance:
            count = min(count + 1, ctrl.maximum)
    return replace(ctrl, cluster_count=count, history=history)


@dataclass
class ServerState:
    """Everything the server carries between rounds."""

    model: ModelWeights
    ood: Batch
    controller: ControllerState
    train_cfg: TrainConfig
    fed_cfg: FedConfig
    eval_inputs: np.ndarray
    eval_labels: np.ndarray
    clustered: Optional[codec.ClusteredModel] = None  # dispatch form when compressed
    round_index: int = 0
    total_upstream: int = 0
    total_downstream: int = 0


@dataclass
class RoundMetrics:
    """Per-round record; everything except wall_clock lands in the CSV."""

    round: int
    cluster_count: int
    accuracy: float
    val_accuracy: float
    score: float
    upstream_bytes: int
    downstream_bytes: int
    cumulative_bytes: int
    mcr: float
    scs_wc_before: Optional[float] = None
    scs_wc_after: Optional[float] = None
    accuracy_presnap: Optional[float] = None
    accuracy_postsnap: Optional[float] = None
    wall_clock: float = 0.0


@dataclass
class ClientUpdateResult:
    weights: ModelWeights
    codebook: Optional[Codebook]
    score: float
    val_accuracy: float
    n_samples: int


@dataclass
class SelfCompressResult:
    weights: ModelWeights
    codebook: Codebook
    wc_before: float
    wc_after: float
    kld_to_entry_teacher: float


def _rng(*entropy: int):
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _minibatch_slices(n: int, batch_size: int, rng) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def client_update(
    weights: ModelWeights,
    cluster_count: int,
    client: ClientState,
    cfg: TrainConfig,
    seed: int,
    clustering: bool = True,
) -> ClientUpdateResult:
    """Local training: cross-entropy with the clustering penalty phased in.

    The first ``beta_warmup_epochs`` epochs run plain SGD; at the switch a
    k-means codebook is fitted to the current weights and the remaining
    epochs jointly descend weights and centroids. Returns the final raw
    weights (snapping happens at transmission), the trained codebook, the
    representation score on the client's unlabeled set, and the local
    validation accuracy kept for reporting.
    """
    rng_batches = _rng(seed, client.seed, _SUB_BATCHES)
    rng_kmeans = _rng(seed, client.seed, _SUB_KMEANS)
    active = clustering and cfg.beta_client > 0.0
    model = weights
    codebook: Optional[Codebook] = None
    n = len(client.labels)
    for epoch in range(cfg.epochs_client):
        use_penalty = active and epoch >= cfg.beta_warmup_epochs
        if use_penalty and codebook is None:
            codebook = codebook_for_model(model, cluster_count, rng_kmeans)
        for idx in _minibatch_slices(n, cfg.batch_size, rng_batches):
            _, cache = forward(model, client.inputs_labeled[idx])
            _, grads = backward_ce(model, cache, client.labels[idx])
            if use_penalty:
                _, wc_grads, mu_grads, counts = _wc_terms(model, codebook)
                grads = grads_add(grads, wc_grads, cfg.beta_client)
                codebook = centroid_step(codebook, mu_grads, counts, cfg.lr_client * cfg.beta_client)
            model = sgd_step(model, grads, cfg.lr_client)
    if clustering and codebook is None:
        codebook = codebook_for_model(model, cluster_count, rng_kmeans)
    try:
        score = client_score(model, client.inputs_unlabeled)
    except DegenerateEmbeddingError as err:
        raise DegenerateEmbeddingError(f"client {client.client_id}: {err}") from err
    val_accuracy = evaluate_accuracy(model, client.inputs_unlabeled, client.eval_labels)
    return ClientUpdateResult(model, codebook, score, val_accuracy, n_samples=n)


def fedavg_aggregate(updates: Sequence[Tuple[ModelWeights, int]]) -> ModelWeights:
    """Sample-count-weighted average of model parameters."""
    if not updates:
        raise ShapeError("cannot aggregate an empty update list")
    total = sum(n for _, n in updates)
    first = updates[0][0]
    weights = [np.zeros_like(w) for w in first.weights]
    biases = [np.zeros_like(b) for b in first.biases]
    for model, n in updates:
        factor = n / total
        for acc, w in zip(weights, model.weights):
            acc += factor * w
        for acc, b in zip(biases, model.biases):
            acc += factor * b
    return ModelWeights(weights, biases, first.activation)


def score_aggregate(scores: Sequence[Tuple[float, int]]) -> float:
    """Sample-count-weighted average of client scores."""
    if not scores:
        raise ShapeError("cannot aggregate an empty score list")
    total = sum(n for _, n in scores)
    return float(sum(s * n for s, n in scores) / total)


def self_compress(
    weights: ModelWeights,
    cluster_count: int,
    ood: Batch,
    cfg: TrainConfig,
    seed: int,
) -> SelfCompressResult:
    """Server-side self-distillation with the clustering penalty.

    A k-means codebook is fitted to the incoming weights; each epoch then
    freezes a teacher snapshot of the current weights and descends the
    temperature-scaled KL divergence to it plus the clustering penalty over
    the OOD batches. Returns the trained (not yet snapped) weights.
    """
    rng_batches = _rng(seed, _SUB_BATCHES)
    rng_kmeans = _rng(seed, _SUB_KMEANS)
    codebook = codebook_for_model(weights, cluster_count, rng_kmeans)
    wc_before = wc_loss(weights, codebook)
    entry_teacher = weights
    model = weights
    n = len(ood)
    for _ in range(cfg.epochs_server):
        teacher = model
        for idx in _minibatch_slices(n, cfg.batch_size, rng_batches):
            xb = ood.inputs[idx]
            teacher_logits, _ = forward(teacher, xb)
            student_logits, cache = forward(model, xb)
            dlogits = kld_grad_student(teacher_logits, student_logits, cfg.temperature)
            grads = backward_from_output_grad(model, cache, dlogits)
            if cfg.beta_server > 0.0:
                _, wc_grads, mu_grads, counts = _wc_terms(model, codebook)
                grads = grads_add(grads, wc_grads, cfg.beta_server)
                codebook = centroid_step(codebook, mu_grads, counts, cfg.lr_server * cfg.beta_server)
            model = sgd_step(model, grads, cfg.lr_server)
    wc_after = wc_loss(model, codebook)
    entry_logits, _ = forward(entry_teacher, ood.inputs)
    final_logits, _ = forward(model, ood.inputs)
    kld_entry = kld_loss(entry_logits, final_logits, cfg.temperature)
    return SelfCompressResult(model, codebook, wc_before, wc_after, kld_entry)


def _effective_cluster_count(server: ServerState) -> int:
    mode = server.fed_cfg.mode
    if mode == "fixed-cluster":
        return server.fed_cfg.fixed_cluster_count
    return server.controller.cluster_count


def run_round(server: ServerState, clients: Sequence[ClientState]) -> Tuple[ServerState, RoundMetrics]:
    """One federated round: dispatch, local updates, aggregation, and (in
    fedcompress mode) self-compression, plus byte accounting for both
    directions."""
    start = time.perf_counter()
    cfg = server.fed_cfg
    round_index = server.round_index + 1
    cluster_count = _effective_cluster_count(server)
    clustering = cfg.mode != "fedavg"

    participants = _rng(cfg.seed, _STREAM_PARTICIPATION, round_index).choice(
        cfg.total_clients, size=cfg.participants, replace=False
    )
    participants = sorted(int(c) for c in participants)

    if server.clustered is not None:
        dispatch_bytes = len(codec.encode(server.clustered))
    else:
        dispatch_bytes = len(codec.encode_raw(server.model))
    downstream = cfg.participants * dispatch_bytes

    def run_client(cid: int) -> ClientUpdateResult:
        return client_update(
            server.model, cluster_count, clients[cid], server.train_cfg,
            seed=_round_client_seed(cfg.seed, round_index), clustering=clustering,
        )

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_client, participants))
    else:
        results = [run_client(cid) for cid in participants]

    upstream = 0
    updates: List[Tuple[ModelWeights, int]] = []
    for res in results:
        if clustering:
            clustered = snap(res.weights, res.codebook)
            upstream += len(codec.encode(clustered))
            updates.append((clustered.to_model(), res.n_samples))
        else:
            upstream += len(codec.encode_raw(res.weights))
            updates.append((res.weights, res.n_samples))

    model = fedavg_aggregate(updates)
    score = score_aggregate([(r.score, r.n_samples) for r in results])
    val_accuracy = float(np.mean([r.val_accuracy for r in results]))

    scs: Optional[SelfCompressResult] = None
    accuracy_presnap = accuracy_postsnap = None
    clustered_dispatch: Optional[codec.ClusteredModel] = None
    if cfg.mode == "fedcompress":
        scs = self_compress(
            model, cluster_count, server.ood, server.train_cfg,
            seed=_round_server_seed(cfg.seed, round_index),
        )
        accuracy_presnap = evaluate_accuracy(scs.weights, server.eval_inputs, server.eval_labels)
        clustered_dispatch = snap(scs.weights, scs.codebook)
        model = clustered_dispatch.to_model()
        accuracy_postsnap = evaluate_accuracy(model, server.eval_inputs, server.eval_labels)

    controller = server.controller
    if cfg.mode in ("fedcompress-no-scs", "fedcompress"):
        controller = update_cluster_count(controller, score)

    accuracy = evaluate_accuracy(model, server.eval_inputs, server.eval_labels)
    mcr = codec.model_compression_ratio(model, cluster_count) if clustering else 1.0

    new_server = replace(
        server,
        model=model,
        clustered=clustered_dispatch,
        controller=controller,
        round_index=round_index,
        total_upstream=server.total_upstream + upstream,
        total_downstream=server.total_downstream + downstream,
    )
    metrics = RoundMetrics(
        round=round_index,
        cluster_count=cluster_count if clustering else 0,
        accuracy=accuracy,
        val_accuracy=val_accuracy,
        score=score,
        upstream_bytes=upstream,
        downstream_bytes=downstream,
        cumulative_bytes=new_server.total_upstream + new_server.total_downstream,
        mcr=mcr,
        scs_wc_before=scs.wc_before if scs else None,
        scs_wc_after=scs.wc_after if scs else None,
        accuracy_presnap=accuracy_presnap,
        accuracy_postsnap=accuracy_postsnap,
        wall_clock=time.perf_counter() - start,
    )
    return new_server, metrics


def _round_client_seed(seed: int, round_index: int) -> int:
    # one integer per (experiment, round); client id mixes in downstream
    return int(np.random.SeedSequence([seed, _STREAM_CLIENT, round_index]).generate_state(1)[0])


def _round_server_seed(seed: int, round_index: int) -> int:
    return int(np.random.SeedSequence([seed, _STREAM_SERVER, round_index]).generate_state(1)[0])


def fedavg_reference_bytes(dims: Sequence[int], fed_cfg: FedConfig) -> int:
    """Bidirectional traffic of plain uncompressed federation, closed form."""
    per_round = 2 * fed_cfg.participants * codec.raw_nbytes(dims)
    return fed_cfg.rounds * per_round


def run_rounds(
    server: ServerState,
    clients: Sequence[ClientState],
    on_round: Optional[Callable[[RoundMetrics], None]] = None,
) -> Tuple[ServerState, List[RoundMetrics]]:
    """Drive all configured rounds, invoking ``on_round`` after each."""
    metrics: List[RoundMetrics] = []
    for _ in range(server.fed_cfg.rounds):
        server, round_metrics = run_round(server, clients)
        metrics.append(round_metrics)
        if on_round is not None:
            on_round(round_metrics)
    return server, metrics
