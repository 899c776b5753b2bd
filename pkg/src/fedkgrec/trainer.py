"""Local-training backends: deterministic in-process mock and the JSON-lines
wire protocol for external trainer processes.

Adapters travel by file path in the FLAT container format; requests and
responses are single JSON lines.  The mock rule nudges every f32 tensor once
per consumed example along a hash-seeded Rademacher direction, scaled by
epoch_fraction × eta and signed by the example label, so any conforming
reimplementation reproduces it bit-for-bit.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import kernels
from .adapters import DTYPE_F32, AdapterTensors, TensorEntry, load_adapter, save_adapter
from .errors import (
    CorpusEmpty,
    ProtocolError,
    TrainerReportedError,
    TrainerTimeout,
)
from .seeding import fnv1a64

DEFAULT_ETA = 1e-3
DEFAULT_TIMEOUT_S = 600.0


@dataclass(frozen=True)
class TrainRequest:
    round_index: int
    client_id: int
    epoch_fraction: float
    adapter_in: Path
    corpus: Path
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.epoch_fraction <= 1.0):
            raise ValueError(f"epoch_fraction {self.epoch_fraction} outside [0, 1]")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "round": self.round_index,
                "client_id": self.client_id,
                "epoch_fraction": self.epoch_fraction,
                "adapter_in": str(self.adapter_in),
                "corpus": str(self.corpus),
                "seed": self.seed,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class TrainResponse:
    adapter_out: Path
    examples_seen: int
    trainer_stats: dict = field(default_factory=dict)


class Trainer(Protocol):
    def train(self, request: TrainRequest) -> TrainResponse: ...


# -- deterministic mock ------------------------------------------------------------


def consumed_examples(epoch_fraction: float, corpus_size: int) -> int:
    """Half-up rounding, reproducible from any IEEE-double implementation."""
    return int(math.floor(epoch_fraction * corpus_size + 0.5))


def read_corpus_labels(path: str | Path) -> np.ndarray:
    """Labels of a JSON-lines corpus file as a uint8 vector, in file order."""
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                labels.append(1 if json.loads(line)["label"] else 0)
    return np.array(labels, dtype=np.uint8)


def apply_mock_rule(
    adapter: AdapterTensors,
    labels: np.ndarray,
    magnitude: float,
    seed: int,
) -> AdapterTensors:
    """One hash-directed ±magnitude delta per (example, f32 element).

    Quantized entries pass through untouched.  Tensor order is irrelevant:
    directions are keyed by tensor name, not position.
    """
    entries: dict[str, TensorEntry] = {}
    for name, entry in adapter.entries.items():
        if entry.dtype != DTYPE_F32 or entry.n_elements == 0 or len(labels) == 0:
            entries[name] = entry
            continue
        values = np.frombuffer(bytearray(entry.data), dtype="<f4")
        kernels.apply_feedback_deltas(values, fnv1a64(name.encode("utf-8")), seed, labels, magnitude)
        entries[name] = TensorEntry(entry.shape, entry.dtype, values.tobytes())
    return AdapterTensors(entries, dict(adapter.meta))


def mock_output_path(request: TrainRequest) -> Path:
    return request.adapter_in.with_name(
        f"local_r{request.round_index}_c{request.client_id}.flat"
    )


def _train_with_labels(request: TrainRequest, labels: np.ndarray, eta: float) -> TrainResponse:
    if len(labels) == 0:
        raise CorpusEmpty(str(request.corpus))
    adapter = load_adapter(request.adapter_in)
    n = consumed_examples(request.epoch_fraction, len(labels))
    magnitude = request.epoch_fraction * eta
    trained = apply_mock_rule(adapter, labels[:n], magnitude, request.seed)
    out_path = mock_output_path(request)
    save_adapter(trained, out_path)
    return TrainResponse(
        adapter_out=out_path,
        examples_seen=n,
        trainer_stats={"eta": eta, "magnitude": magnitude, "backend": kernels.BACKEND},
    )


def mock_train(request: TrainRequest, eta: float = DEFAULT_ETA) -> TrainResponse:
    """Deterministic stand-in for a real preference-optimization trainer."""
    return _train_with_labels(request, read_corpus_labels(request.corpus), eta)


class MockTrainer:
    """In-process trainer applying the deterministic mock rule.

    Corpus labels are cached per (path, size, mtime): round loops hit the
    same per-client files hundreds of times and the files are written once.
    """

    def __init__(self, eta: float = DEFAULT_ETA):
        self.eta = eta
        self._label_cache: dict[tuple, np.ndarray] = {}

    def _labels(self, corpus: Path) -> np.ndarray:
        stat = corpus.stat()
        key = (str(corpus.resolve()), stat.st_size, stat.st_mtime_ns)
        labels = self._label_cache.get(key)
        if labels is None:
            labels = read_corpus_labels(corpus)
            self._label_cache[key] = labels
        return labels

    def train(self, request: TrainRequest) -> TrainResponse:
        return _train_with_labels(request, self._labels(Path(request.corpus)), self.eta)

    def train_in_memory(self, request: TrainRequest, adapter: AdapterTensors) -> tuple[AdapterTensors, int]:
        """File-free variant for the in-process round loop.

        Bit-identical to train(): the container round-trip it skips is
        lossless, and the rule depends only on (adapter, labels, request).
        """
        labels = self._labels(Path(request.corpus))
        if len(labels) == 0:
            raise CorpusEmpty(str(request.corpus))
        n = consumed_examples(request.epoch_fraction, len(labels))
        trained = apply_mock_rule(adapter, labels[:n], request.epoch_fraction * self.eta, request.seed)
        return trained, n


class EchoTrainer:
    """Returns the incoming adapter unchanged (identity update)."""

    def train(self, request: TrainRequest) -> TrainResponse:
        return TrainResponse(adapter_out=request.adapter_in, examples_seen=0, trainer_stats={"mode": "echo"})


# -- wire protocol -----------------------------------------------------------------


def parse_response_line(line: str) -> TrainResponse:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError(line)
    if not isinstance(payload, dict):
        raise ProtocolError(line)
    if "error" in payload:
        raise TrainerReportedError(str(payload["error"]))
    try:
        return TrainResponse(
            adapter_out=Path(payload["adapter_out"]),
            examples_seen=int(payload["examples_seen"]),
            trainer_stats=dict(payload.get("trainer_stats", {})),
        )
    except (KeyError, TypeError, ValueError):
        raise ProtocolError(line)


class ExternalTrainer:
    """Talks the line protocol to a trainer subprocess over stdio.

    One process serves requests serially; adapter files are exchanged by
    path.  A reader thread enforces the response timeout without killing the
    subprocess (the caller decides what to do after a timeout).
    """

    def __init__(self, command: list[str], timeout_s: float = DEFAULT_TIMEOUT_S, cwd: str | None = None):
        self.command = list(command)
        self.timeout_s = timeout_s
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            cwd=cwd,
        )
        self._lines: queue.Queue[bytes] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(b"")  # EOF marker

    def train(self, request: TrainRequest) -> TrainResponse:
        if self._proc.poll() is not None:
            raise ProtocolError(f"trainer process exited with {self._proc.returncode}")
        assert self._proc.stdin is not None
        self._proc.stdin.write((request.to_json_line() + "\n").encode("utf-8"))
        self._proc.stdin.flush()
        try:
            raw = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise TrainerTimeout(f"no response within {self.timeout_s}s from {self.command}")
        if raw == b"":
            raise ProtocolError("trainer closed its output stream")
        return parse_response_line(raw.decode("utf-8", errors="replace").rstrip("\n"))

    def close(self):
        if self._proc.poll() is None:
            if self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SocketTrainer:
    """Same line protocol over a local TCP socket."""

    def __init__(self, host: str, port: int, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.timeout_s = timeout_s
        self._sock = socket.create_connection((host, port), timeout=timeout_s)
        self._file = self._sock.makefile("rwb")

    def train(self, request: TrainRequest) -> TrainResponse:
        self._file.write((request.to_json_line() + "\n").encode("utf-8"))
        self._file.flush()
        try:
            raw = self._file.readline()
        except socket.timeout:
            raise TrainerTimeout(f"no response within {self.timeout_s}s")
        if not raw:
            raise ProtocolError("trainer closed the connection")
        return parse_response_line(raw.decode("utf-8", errors="replace").rstrip("\n"))

    def close(self):
        self._file.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_train(request: TrainRequest, endpoint: Trainer) -> TrainResponse:
    """Run one local update through an already-connected endpoint."""
    return endpoint.train(request)
