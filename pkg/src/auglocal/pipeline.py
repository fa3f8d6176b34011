"""Layer-parallel execution: analytical training-time model, discrete-event
pipeline simulator, and a threaded pipelined local-training runner.

The analytical model assumes every layer has the same forward time t_f and
backward time t_b and every auxiliary head the same depth d. With one
worker per local layer, a layer hands its activation downstream after t_f
and overlaps the rest of its local work (aux forward + backward, d+1
trainable layers in total) with its successors, so N iterations cost
t_f * L + (d + 1) * (t_f + t_b) * N against (L + 1) * (t_f + t_b) * N for
end-to-end backprop.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

import numpy as np

from .auxbuild import AuxPlan
from .errors import DeadlockDetected, WorkerPanicPropagated
from .netspec import ValidatedNetwork
from .tensor import Tensor, backward, stop_gradient, tape
from .trainer import LocalLearner, TrainConfig, cosine_lr, cross_entropy, evaluate

_NANO = 10 ** 9


def predict_times(num_layers: int, d: int, t_f: float, t_b: float,
                  iterations: int) -> dict[str, float]:
    """Closed-form training times for BP and pipelined local training."""
    bp_time = (num_layers + 1) * (t_f + t_b) * iterations
    local_time = t_f * num_layers + (d + 1) * (t_f + t_b) * iterations
    return {"bp_time": bp_time, "auglocal_time": local_time,
            "ratio": local_time / bp_time}


@dataclass
class PipelineConfig:
    num_layers: int                  # L: hidden local layers, each with a worker
    d: int                           # max auxiliary depth
    t_f: float
    t_b: float
    iterations: int
    queue_capacity: int = 1
    time_jitter: float = 0.0         # multiplicative uniform jitter half-width
    seed: int = 0
    depths: list[int] | None = None  # per-hidden-layer aux depths (extension)

    def __post_init__(self):
        if self.t_f <= 0 or self.t_b <= 0:
            raise ValueError("per-layer times must be positive")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be at least 1")


@dataclass
class SimResult:
    makespan: float
    utilization: list[float]         # busy fraction per worker


def simulate_pipeline(cfg: PipelineConfig) -> SimResult:
    """Event-driven makespan of the layer-parallel schedule.

    Workers are the L hidden local layers plus the output stage (top unit
    + global classifier). A worker starts iteration n once its predecessor
    has emitted iteration n's activation and it is free; it emits after
    its forward (t_f) and stays busy for the full local cost
    (depth + 1) * (t_f + t_b). Timestamps are integer nanoseconds so event
    ordering never depends on float ties.
    """
    L, N = cfg.num_layers, cfg.iterations
    num_workers = L + 1
    if cfg.depths is None:
        depths = [cfg.d] * num_workers
    else:
        if len(cfg.depths) != L:
            raise ValueError(f"need {L} per-layer depths, got {len(cfg.depths)}")
        depths = list(cfg.depths) + [1]   # output stage: top unit + classifier

    rng = np.random.default_rng(cfg.seed)
    jitter = cfg.time_jitter

    def nanos(base: float) -> int:
        if jitter:
            base = base * rng.uniform(1.0 - jitter, 1.0 + jitter)
        return int(round(base * _NANO))

    cap = cfg.queue_capacity
    free = [0] * num_workers
    busy = [0] * num_workers
    emit = [[0] * (N + 1) for _ in range(num_workers + 1)]   # emit[w][n], 1-based
    start = [[0] * (N + 1) for _ in range(num_workers + 1)]
    for n in range(1, N + 1):
        for w in range(1, num_workers + 1):
            tf = nanos(cfg.t_f)
            tb_total = nanos((depths[w - 1] + 1) * (cfg.t_f + cfg.t_b)) - tf
            avail = emit[w - 1][n] if w > 1 else 0
            # bounded queue: the upstream slot for item n frees when this
            # worker pulled item n - capacity
            if w > 1 and n - cap >= 1:
                avail = max(avail, start[w][n - cap])
            s = max(avail, free[w - 1])
            start[w][n] = s
            emit[w][n] = s + tf
            free[w - 1] = s + tf + tb_total
            busy[w - 1] += tf + tb_total
    makespan = max(free)
    util = [b / makespan if makespan else 0.0 for b in busy]
    return SimResult(makespan=makespan / _NANO, utilization=util)


# ---------------------------------------------------------------------------
# threaded pipelined training
# ---------------------------------------------------------------------------

_STOP = object()


class _Stage:
    """A contiguous run of local layers owned by one worker thread."""

    def __init__(self, learner: LocalLearner, first: int, last: int):
        self.learner = learner
        self.first = first
        self.last = last

    def process(self, x: np.ndarray, y: np.ndarray, lr: float) -> np.ndarray:
        model = self.learner.model
        num_units = model.num_units
        h = x
        for layer in range(self.first, self.last + 1):
            opt = self.learner.layer_optimizers[layer - 1 if layer < num_units
                                                else len(self.learner.layer_optimizers) - 1]
            opt.zero_grad()
            inp = stop_gradient(Tensor(h))
            with tape() as tp:
                out = model.forward_unit(layer, inp, training=True)
                if layer < num_units:
                    logits = self.learner.aux[layer - 1].forward(out, training=True)
                else:
                    logits = model.classifier.forward(out)
                loss = cross_entropy(logits, y)
            backward(tp, loss)
            opt.step(lr)
            h = out.data    # detached by construction: plain array crosses stages
        return h


def run_pipelined_training(network: ValidatedNetwork, config: TrainConfig,
                           train_data: tuple[np.ndarray, np.ndarray],
                           test_data: tuple[np.ndarray, np.ndarray] | None = None,
                           plan: AuxPlan | None = None,
                           threads: int | None = None,
                           queue_capacity: int = 1,
                           barrier: bool = True,
                           timeout: float = 120.0):
    """Local training with layer-parallel workers.

    Each worker owns a contiguous range of local layers (their units, aux
    heads, and optimizer state) and consumes detached activations from a
    bounded queue. In barrier mode the queues have capacity 1, which
    serializes iterations; results are bit-identical to the sequential
    trainer either way, because every layer sees the same inputs in the
    same order and owns its parameters exclusively.
    """
    learner = LocalLearner(network, config, plan=plan)
    num_units = network.num_units
    n_threads = threads or num_units
    n_threads = max(1, min(n_threads, num_units))
    cap = 1 if barrier else queue_capacity

    # contiguous, near-equal partition of layers over threads
    bounds = np.linspace(1, num_units + 1, n_threads + 1).astype(int)
    stages = [_Stage(learner, int(bounds[i]), int(bounds[i + 1]) - 1)
              for i in range(n_threads)]

    queues = [queue.Queue(maxsize=cap) for _ in range(n_threads + 1)]
    panics: list[BaseException] = []

    def worker(idx: int):
        stage = stages[idx]
        q_in, q_out = queues[idx], queues[idx + 1]
        try:
            while True:
                try:
                    item = q_in.get(timeout=timeout)
                except queue.Empty:
                    raise DeadlockDetected(
                        f"worker {idx} starved for {timeout}s") from None
                if item is _STOP:
                    q_out.put(_STOP)
                    return
                n, h, y, lr = item
                h = stage.process(h, y, lr)
                q_out.put((n, h, y, lr))
        except BaseException as exc:   # propagate panics to the orchestrator
            panics.append(exc)
            q_out.put(_STOP)

    xs, ys = train_data
    rng = np.random.default_rng(config.seed + 7)
    history: list[dict] = []
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        ths = [threading.Thread(target=worker, args=(i,), daemon=True)
               for i in range(n_threads)]
        for t in ths:
            t.start()
        order = rng.permutation(len(xs))
        batches = [order[s:s + config.batch_size]
                   for s in range(0, len(xs), config.batch_size)]

        def drain():
            while True:
                try:
                    item = queues[-1].get(timeout=timeout)
                except queue.Empty:
                    raise DeadlockDetected("sink starved") from None
                if item is _STOP:
                    return
                yield item

        # feed from a separate thread: the bounded queues hold only a few
        # items, so feeding everything before draining would deadlock once
        # the batch count exceeds the pipeline's absorption capacity
        def feed():
            for n, idx in enumerate(batches):
                queues[0].put((n, xs[idx], ys[idx], lr))
            queues[0].put(_STOP)

        feeder = threading.Thread(target=feed, daemon=True)
        feeder.start()
        for item in drain():
            pass
        feeder.join()
        for t in ths:
            t.join()
        if panics:
            raise WorkerPanicPropagated(f"worker failed: {panics[0]!r}") from panics[0]
        history.append({"epoch": epoch, "split": "train", "loss": float("nan"),
                        "top1": float("nan"), "lr": lr, "wall_ms": 0.0})
        if test_data is not None:
            acc = evaluate(learner.model, test_data[0], test_data[1])
            history.append({"epoch": epoch, "split": "test", "loss": float("nan"),
                            "top1": acc, "lr": lr, "wall_ms": 0.0})
    return learner, history
