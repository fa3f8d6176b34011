"""Training loops: gradient-isolated local training, an end-to-end
backprop baseline, the SGD optimizer, and evaluation.

The local scheme follows the simultaneous triggering convention: for each
mini-batch, every hidden layer in turn consumes the detached activation of
its predecessor, computes a cross-entropy loss through its own auxiliary
head, and updates only its own unit and head. The top unit trains jointly
with the global classifier. Auxiliary heads are discarded at inference.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .auxbuild import AuxPlan, plan_all
from .errors import CheckpointError, PlanMismatch
from .netspec import ValidatedNetwork, emit_network_text
from .nn import AuxModel, PrimaryModel
from .tensor import Tensor, backward, softmax_cross_entropy, stop_gradient, tape

cross_entropy = softmax_cross_entropy


@dataclass
class TrainConfig:
    mode: str = "local"                 # "bp" | "local"
    strategy: str = "uniform"
    d: int = 2
    d_min: int = 2
    tau: float = 0.5
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    update_after_forward: bool = False  # strict "update after full forward" variant

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("initial learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


def cosine_lr(lr0: float, epoch: float, total_epochs: int) -> float:
    """Cosine annealing from lr0 down to 0 over the training run."""
    return lr0 * (1.0 + np.cos(np.pi * epoch / total_epochs)) / 2.0


class SGD:
    """SGD with Nesterov momentum and decoupled-by-name weight decay.

    Decay applies only to conv/dense weights (parameter names ending in
    ".w"), never to norm parameters or biases. Update per parameter:

        v <- mu * v + (g + wd * w)
        w <- w - lr * (g + wd * w + mu * v)
    """

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self, lr: float) -> None:
        mu, wd = self.momentum, self.weight_decay
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            if wd and name.endswith(".w"):
                g = g + wd * t.data
            v = self.velocity[name]
            v *= mu
            v += g
            t.data -= lr * (g + mu * v)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


class LocalLearner:
    """A primary model plus (in local mode) one auxiliary head and one
    optimizer per local layer. Holds everything a training run mutates."""

    def __init__(self, network: ValidatedNetwork, config: TrainConfig,
                 plan: AuxPlan | None = None):
        self.network = network
        self.config = config
        self.model = PrimaryModel(network, seed=config.seed)
        num_units = network.num_units
        if config.mode == "local":
            if plan is None:
                plan = plan_all(network, d=config.d, d_min=config.d_min,
                                tau=config.tau, strategy=config.strategy)
            if plan.network.spec != network.spec:
                raise PlanMismatch("auxiliary plan was built for a different network")
            self.plan = plan
            self.aux = [AuxModel(spec, seed=config.seed + 1000 + spec.layer)
                        for spec in plan.aux]
            self.layer_optimizers = []
            for layer in range(1, num_units):
                group = {n: self.model.params[n]
                         for n in self.model.unit_param_names(layer)}
                group.update(dict(self.aux[layer - 1].params.items()))
                self.layer_optimizers.append(
                    SGD(group, config.momentum, config.weight_decay))
            top = {n: self.model.params[n]
                   for n in self.model.unit_param_names(num_units)
                   + self.model.classifier_param_names()}
            self.layer_optimizers.append(SGD(top, config.momentum, config.weight_decay))
            self.optimizer = None
        else:
            self.plan = None
            self.aux = []
            self.layer_optimizers = []
            self.optimizer = SGD(dict(self.model.params.items()),
                                 config.momentum, config.weight_decay)


def bp_train_step(learner: LocalLearner, x: np.ndarray, y: np.ndarray,
                  lr: float) -> float:
    """One end-to-end update of every parameter from the global loss."""
    opt = learner.optimizer
    opt.zero_grad()
    with tape() as tp:
        logits = learner.model.forward_logits(Tensor(x), training=True)
        loss = cross_entropy(logits, y)
    backward(tp, loss)
    opt.step(lr)
    return loss.item()


def local_train_step(learner: LocalLearner, x: np.ndarray, y: np.ndarray,
                     lr: float) -> dict:
    """One pass of gradient-isolated local training over a mini-batch.

    Returns the per-layer local losses and the global loss of the top
    unit + classifier.
    """
    model = learner.model
    num_units = model.num_units
    deferred = learner.config.update_after_forward
    pending = []
    local_losses = []

    h_prev: Tensor = Tensor(x)
    for layer in range(1, num_units):
        opt = learner.layer_optimizers[layer - 1]
        opt.zero_grad()
        inp = stop_gradient(h_prev)
        with tape() as tp:
            h = model.forward_unit(layer, inp, training=True)
            logits = learner.aux[layer - 1].forward(h, training=True)
            loss = cross_entropy(logits, y)
        backward(tp, loss)
        if deferred:
            pending.append(opt)
        else:
            opt.step(lr)
        local_losses.append(loss.item())
        h_prev = h.detach()

    opt = learner.layer_optimizers[-1]
    opt.zero_grad()
    with tape() as tp:
        h = model.forward_unit(num_units, stop_gradient(h_prev), training=True)
        logits = model.classifier.forward(h)
        global_loss = cross_entropy(logits, y)
    backward(tp, global_loss)
    if deferred:
        pending.append(opt)
        for p in pending:
            p.step(lr)
    else:
        opt.step(lr)
    return {"local_losses": local_losses, "global_loss": global_loss.item()}


def evaluate(model: PrimaryModel, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> float:
    """Top-1 accuracy, eval mode (running norm statistics, no tape)."""
    correct = 0
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        logits = model.forward_logits(Tensor(xb), training=False)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / len(x)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(network: ValidatedNetwork, config: TrainConfig,
          train_data: tuple[np.ndarray, np.ndarray],
          test_data: tuple[np.ndarray, np.ndarray] | None = None,
          plan: AuxPlan | None = None,
          epoch_callback=None) -> tuple[LocalLearner, list[dict]]:
    """Full training run; returns the learner and per-epoch metric rows."""
    learner = LocalLearner(network, config, plan=plan)
    xs, ys = train_data
    rng = np.random.default_rng(config.seed + 7)
    history: list[dict] = []
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        t0 = time.perf_counter()
        losses = []
        for idx in _epoch_batches(len(xs), config.batch_size, rng):
            xb, yb = xs[idx], ys[idx]
            if config.mode == "bp":
                losses.append(bp_train_step(learner, xb, yb, lr))
            else:
                losses.append(local_train_step(learner, xb, yb, lr)["global_loss"])
        wall_ms = (time.perf_counter() - t0) * 1000.0
        row = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses)),
               "top1": float("nan"), "lr": lr, "wall_ms": wall_ms}
        history.append(row)
        if test_data is not None:
            acc = evaluate(learner.model, test_data[0], test_data[1])
            history.append({"epoch": epoch, "split": "test", "loss": float("nan"),
                            "top1": acc, "lr": lr, "wall_ms": 0.0})
        if epoch_callback is not None:
            epoch_callback(epoch, learner, history)
    return learner, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"AGLCKPT1"


def network_hash(network: ValidatedNetwork) -> bytes:
    return hashlib.sha256(emit_network_text(network.spec).encode()).digest()


def _gather_arrays(learner: LocalLearner) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, t in learner.model.params.items():
        arrays[f"primary/{name}"] = t.data
    for i, st in enumerate(learner.model.bn_states()):
        arrays[f"primary-bn/{i}/mean"] = st.running_mean
        arrays[f"primary-bn/{i}/var"] = st.running_var
    for aux in learner.aux:
        for name, t in aux.params.items():
            arrays[f"aux/{name}"] = t.data
        for i, st in enumerate(aux.bn_states()):
            arrays[f"aux-bn/{aux.spec.layer}/{i}/mean"] = st.running_mean
            arrays[f"aux-bn/{aux.spec.layer}/{i}/var"] = st.running_var
    opts = learner.layer_optimizers if learner.layer_optimizers else [learner.optimizer]
    for j, opt in enumerate(opts):
        for name, v in opt.velocity.items():
            arrays[f"opt/{j}/{name}"] = v
    return arrays


def save_checkpoint(path, learner: LocalLearner) -> None:
    """Versioned binary container: magic, network hash, named float64 blobs."""
    arrays = _gather_arrays(learner)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(network_hash(learner.network))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            blob = np.ascontiguousarray(arr, dtype=np.float64)
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", blob.ndim))
            for dim in blob.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(blob.tobytes())


def load_checkpoint(path, learner: LocalLearner) -> None:
    """Restore a checkpoint into a learner built for the same network spec."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if fh.read(32) != network_hash(learner.network):
            raise CheckpointError(f"{path}: checkpoint was written for a different network")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"{path}: truncated blob for {name}")
            arrays[name] = np.frombuffer(buf, dtype=np.float64).reshape(shape)

    expected = _gather_arrays(learner)
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing entries {sorted(missing)[:3]}...")
    for name, target in expected.items():
        src = arrays[name]
        if src.shape != target.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        target[...] = src
