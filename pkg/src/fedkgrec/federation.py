"""Client simulation, user assignment, round orchestration and communication
cost accounting.

Twenty simulated institutions draw their customer mix from Dirichlet
distributions over (customer type × risk level × capacity quartile) strata;
each round samples 3 of them, trains locally for a fraction of an epoch, and
averages the returned adapters into the new global adapter.
"""

from __future__ import annotations

import enum
import hashlib
import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .adapters import AdapterTensors, DTYPE_F32, TensorEntry, load_adapter, pack4, save_adapter, serialize, unpack4
from .dataset import CustomerProfile, CustomerType, RiskLevel
from .errors import CorpusEmpty, EmptyStratumSupport, HarnessError, ShapeMismatch, TrainerFailure
from .seeding import JSON_SAFE_MASK, derive_seed
from .trainer import Trainer, TrainRequest


N_CLIENTS = 20
CLIENTS_PER_ROUND = 3
ROUNDS = 200
LOCAL_EPOCH_FRACTION = 0.1
DEFAULT_CONCENTRATION = 0.3
CAPACITY_BUCKETS = 4

# strata order: customer type (4) × risk level (3) × capacity quartile (4)
STRATA: tuple[tuple[CustomerType, RiskLevel, int], ...] = tuple(
    (ct, rl, b) for ct in CustomerType for rl in RiskLevel for b in range(CAPACITY_BUCKETS)
)
N_STRATA = len(STRATA)

# Table-1 style defaults: published trainable-parameter counts for the
# Qwen3 model family, used by the size table and the CLI comm report.
MODEL_PARAM_TABLE: tuple[tuple[str, int], ...] = (
    ("Qwen3-0.6B", 10_092_544),
    ("Qwen3-1.7B", 17_432_576),
    ("Qwen3-4B", 33_030_144),
    ("Qwen3-8B", 43_646_976),
)


class ClientMode(enum.Enum):
    NON_IID = "non-iid"
    IID = "iid"


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    stratum_weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.stratum_weights) != N_STRATA:
            raise ValueError(f"expected {N_STRATA} stratum weights")
        if any(w < 0 for w in self.stratum_weights):
            raise ValueError("stratum weights must be non-negative")
        if abs(sum(self.stratum_weights) - 1.0) > 1e-9:
            raise ValueError("stratum weights must sum to 1")


Assignment = dict[str, int]  # customer_id -> client_id


@dataclass(frozen=True)
class RoundConfig:
    seed: int
    rounds: int = ROUNDS
    clients_per_round: int = CLIENTS_PER_ROUND
    n_clients: int = N_CLIENTS
    local_epoch_fraction: float = LOCAL_EPOCH_FRACTION
    weighted_aggregation: bool = False

    def __post_init__(self):
        if self.clients_per_round > self.n_clients:
            raise ValueError("clients_per_round must not exceed n_clients")


@dataclass(frozen=True)
class RoundLog:
    round_index: int
    selected_clients: tuple[int, ...]
    examples_seen: dict[int, int]
    adapter_digest: str
    bytes_uploaded: int
    bytes_downloaded: int

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "selected_clients": list(self.selected_clients),
            "examples_seen": {str(c): n for c, n in self.examples_seen.items()},
            "adapter_digest": self.adapter_digest,
            "bytes_uploaded": self.bytes_uploaded,
            "bytes_downloaded": self.bytes_downloaded,
        }


# -- client modeling -----------------------------------------------------------


def capacity_quartiles(profiles: Sequence[CustomerProfile]) -> tuple[float, ...]:
    """Quartile edges of observed investment capacity (3 cut points)."""
    if not profiles:
        raise ValueError("no profiles to bucket")
    caps = np.array(sorted(float(p.investment_capacity) for p in profiles))
    return tuple(float(np.quantile(caps, q)) for q in (0.25, 0.5, 0.75))


def stratum_index(profile: CustomerProfile, quartile_edges: tuple[float, ...]) -> int:
    bucket = bisect_right(quartile_edges, float(profile.investment_capacity))
    type_idx = list(CustomerType).index(profile.customer_type)
    risk_idx = list(RiskLevel).index(profile.risk_level)
    return (type_idx * len(RiskLevel) + risk_idx) * CAPACITY_BUCKETS + bucket


def make_clients(
    n: int = N_CLIENTS,
    mode: ClientMode = ClientMode.NON_IID,
    concentration: float = DEFAULT_CONCENTRATION,
    seed: int = 0,
) -> list[ClientProfile]:
    """Client stratum distributions: symmetric Dirichlet draws (non-IID) or
    a shared uniform vector (IID)."""
    if n < 1:
        raise ValueError("need at least one client")
    if mode is ClientMode.IID:
        uniform = tuple([1.0 / N_STRATA] * N_STRATA)
        return [ClientProfile(i, uniform) for i in range(n)]
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    alpha = np.full(N_STRATA, concentration)
    return [ClientProfile(i, tuple(float(w) for w in rng.dirichlet(alpha))) for i in range(n)]


def assign_users(
    profiles: Sequence[CustomerProfile],
    clients: Sequence[ClientProfile],
    seed: int = 0,
) -> Assignment:
    """Sample a client for every customer, proportional to the clients'
    weights on the customer's stratum."""
    edges = capacity_quartiles(profiles)
    weight_by_stratum = {
        s: np.array([c.stratum_weights[s] for c in clients]) for s in range(N_STRATA)
    }
    rng = np.random.default_rng(seed)
    assignment: Assignment = {}
    for profile in profiles:
        s = stratum_index(profile, edges)
        weights = weight_by_stratum[s]
        total = weights.sum()
        if total <= 0:
            raise EmptyStratumSupport(STRATA[s])
        assignment[profile.customer_id] = int(rng.choice(len(clients), p=weights / total))
    return assignment


# -- adapter aggregation ----------------------------------------------------------


def aggregate(adapters: Sequence[AdapterTensors], weights: Sequence[float] | None = None) -> AdapterTensors:
    """Element-wise mean of same-shaped adapters.

    The uniform path sums each element's contributions in sorted order, so
    the result is exactly permutation-invariant; weighted means keep the
    given order (weights are tied to positions anyway).
    """
    if not adapters:
        raise ValueError("nothing to aggregate")
    first = adapters[0]
    names = list(first.entries)
    for other in adapters[1:]:
        if list(other.entries) != names:
            raise ShapeMismatch("adapters disagree on tensor names")
        for name in names:
            a, b = first.entries[name], other.entries[name]
            if a.shape != b.shape or a.dtype != b.dtype:
                raise ShapeMismatch(f"{name}: {b.shape}/{b.dtype} != {a.shape}/{a.dtype}")
    if weights is not None:
        if len(weights) != len(adapters):
            raise ValueError("one weight per adapter required")
        w = np.asarray(weights, dtype=np.float64)
        if w.sum() <= 0:
            w = np.ones(len(adapters))
        w = w / w.sum()

    entries: dict[str, TensorEntry] = {}
    for name in names:
        proto = first.entries[name]
        if proto.dtype == DTYPE_F32:
            stack = np.stack(
                [np.frombuffer(a.entries[name].data, dtype="<f4").astype(np.float64) for a in adapters]
            )
            if weights is None:
                mean = np.sort(stack, axis=0).sum(axis=0) / len(adapters)
            else:
                mean = w @ stack
            entries[name] = TensorEntry(proto.shape, proto.dtype, mean.astype("<f4").tobytes())
        else:
            stack = np.stack(
                [unpack4(a.entries[name].data, proto.n_elements).astype(np.float64) for a in adapters]
            )
            if weights is None:
                mean = np.sort(stack, axis=0).sum(axis=0) / len(adapters)
            else:
                mean = w @ stack
            quantized = np.clip(np.floor(mean + 0.5), 0, 15).astype(np.uint8)
            entries[name] = TensorEntry(proto.shape, proto.dtype, pack4(quantized))
    return AdapterTensors(entries, dict(first.meta))


# -- communication accounting ------------------------------------------------------

MIB = float(1 << 20)


@dataclass(frozen=True)
class AdapterSize:
    trainable_params: int
    bits_per_param: int
    size_bytes: float
    size_mb: float  # binary MB (2^20 bytes), the reading that matches the published table


def adapter_size(trainable_params: int, bits_per_param: int = 4) -> AdapterSize:
    if trainable_params < 0:
        raise ValueError("trainable_params must be >= 0")
    size_bytes = trainable_params * bits_per_param / 8
    return AdapterSize(trainable_params, bits_per_param, size_bytes, size_bytes / MIB)


@dataclass(frozen=True)
class CommReport:
    adapter_bytes: float
    per_round_bytes: float
    total_bytes: float
    rounds: int
    uploads_per_round: int
    broadcast_targets: int
    model_rows: tuple[dict, ...] = ()

    @property
    def per_round_mb(self) -> float:
        return self.per_round_bytes / MIB

    @property
    def total_mb(self) -> float:
        return self.total_bytes / MIB

    def to_dict(self) -> dict:
        return {
            "adapter_bytes": self.adapter_bytes,
            "adapter_mb": self.adapter_bytes / MIB,
            "per_round_bytes": self.per_round_bytes,
            "per_round_mb": self.per_round_mb,
            "total_bytes": self.total_bytes,
            "total_mb": self.total_mb,
            "rounds": self.rounds,
            "uploads_per_round": self.uploads_per_round,
            "broadcast_targets": self.broadcast_targets,
            "model_rows": list(self.model_rows),
        }


def comm_cost(
    adapter_bytes: float,
    rounds: int = ROUNDS,
    uploads_per_round: int = CLIENTS_PER_ROUND,
    broadcast_targets: int = N_CLIENTS,
) -> CommReport:
    """Server traffic per round: selected clients upload, everyone receives
    the new global adapter (uploads + broadcast = 23× under the defaults)."""
    per_round = (uploads_per_round + broadcast_targets) * adapter_bytes
    return CommReport(
        adapter_bytes=adapter_bytes,
        per_round_bytes=per_round,
        total_bytes=per_round * rounds,
        rounds=rounds,
        uploads_per_round=uploads_per_round,
        broadcast_targets=broadcast_targets,
    )


def model_size_table(
    bits_per_param: int = 4,
    rounds: int = ROUNDS,
    uploads_per_round: int = CLIENTS_PER_ROUND,
    broadcast_targets: int = N_CLIENTS,
) -> list[dict]:
    rows = []
    for model, params in MODEL_PARAM_TABLE:
        size = adapter_size(params, bits_per_param)
        report = comm_cost(size.size_bytes, rounds, uploads_per_round, broadcast_targets)
        rows.append(
            {
                "model": model,
                "trainable_params": params,
                "adapter_mb": size.size_mb,
                "per_round_mb": report.per_round_mb,
                "total_mb": report.total_mb,
            }
        )
    return rows


# -- round orchestration -------------------------------------------------------------


def _corpus_size(path: Path | None) -> int:
    if path is None or not Path(path).exists():
        return 0
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def run_rounds(
    config: RoundConfig,
    corpus_paths: Mapping[int, Path],
    trainer: Trainer,
    initial_adapter: AdapterTensors,
    workdir: str | Path,
    log_path: str | Path | None = None,
) -> tuple[list[RoundLog], AdapterTensors]:
    """Run the federated schedule and return (round logs, final adapter).

    Per round: sample clients without replacement, broadcast the global
    adapter by path, train each selected client, aggregate the returned
    adapters.  Clients whose corpus is empty contribute the unchanged global
    adapter (an identity update) rather than failing the round.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    sizes = {c: _corpus_size(corpus_paths.get(c)) for c in range(config.n_clients)}
    if all(n == 0 for n in sizes.values()):
        raise CorpusEmpty("no client has any training examples")

    rng = np.random.default_rng(config.seed)
    global_adapter = initial_adapter
    global_path = workdir / "global.flat"
    # the in-process mock can skip the (lossless) container round trip
    train_in_memory = getattr(trainer, "train_in_memory", None)
    logs: list[RoundLog] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for round_index in range(config.rounds):
            selected = sorted(
                int(c) for c in rng.choice(config.n_clients, size=config.clients_per_round, replace=False)
            )
            if train_in_memory is None:
                save_adapter(global_adapter, global_path)
            contributions: list[AdapterTensors] = []
            examples_seen: dict[int, int] = {}
            for client_id in selected:
                if sizes[client_id] == 0:
                    contributions.append(global_adapter)
                    examples_seen[client_id] = 0
                    continue
                request = TrainRequest(
                    round_index=round_index,
                    client_id=client_id,
                    epoch_fraction=config.local_epoch_fraction,
                    adapter_in=global_path,
                    corpus=Path(corpus_paths[client_id]),
                    seed=derive_seed(config.seed, round_index, client_id) & JSON_SAFE_MASK,
                )
                try:
                    if train_in_memory is not None:
                        contribution, seen = train_in_memory(request, global_adapter)
                    else:
                        response = trainer.train(request)
                        contribution = load_adapter(response.adapter_out)
                        seen = response.examples_seen
                        if Path(response.adapter_out) != global_path:
                            Path(response.adapter_out).unlink(missing_ok=True)
                except HarnessError as exc:
                    raise TrainerFailure(round_index, client_id, exc, logs)
                contributions.append(contribution)
                examples_seen[client_id] = seen

            weights = None
            if config.weighted_aggregation and any(examples_seen.get(c, 0) for c in selected):
                weights = [float(examples_seen.get(c, 0)) for c in selected]
            global_adapter = aggregate(contributions, weights)

            container = serialize(global_adapter)
            log = RoundLog(
                round_index=round_index,
                selected_clients=tuple(selected),
                examples_seen=examples_seen,
                adapter_digest=hashlib.sha256(container).hexdigest(),
                bytes_uploaded=config.clients_per_round * len(container),
                bytes_downloaded=config.n_clients * len(container),
            )
            logs.append(log)
            if log_fh:
                log_fh.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    save_adapter(global_adapter, global_path)
    return logs, global_adapter


def participation_counts(logs: Sequence[RoundLog], n_clients: int = N_CLIENTS) -> dict[int, int]:
    counts = {c: 0 for c in range(n_clients)}
    for log in logs:
        for c in log.selected_clients:
            counts[c] += 1
    return counts
