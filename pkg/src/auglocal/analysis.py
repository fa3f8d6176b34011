"""Representation analysis and memory accounting.

Linear centered kernel alignment (CKA) compares two models' hidden
activations; linear probing measures a frozen layer's linear separability;
the memory model counts activation, parameter, gradient, and momentum
bytes analytically for end-to-end versus local training.
"""

from __future__ import annotations

import numpy as np

from .auxbuild import AuxPlan
from .errors import RowCountMismatch, SpecMismatch
from .netspec import (
    ValidatedNetwork,
    classifier_params,
    unit_params,
)
from .nn import PrimaryModel
from .tensor import ParamSet, Tensor, backward, dense, global_avg_pool, tape
from .trainer import SGD, cosine_lr, cross_entropy

MAX_FEATURE_COLUMNS = 4096


def center_columns(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0, keepdims=True)


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA between two (n, p) feature matrices.

    Invariant to orthogonal right-multiplication and nonzero isotropic
    scaling of either argument; returns 0 for a degenerate (all-zero)
    argument.
    """
    if x.shape[0] != y.shape[0]:
        raise RowCountMismatch(f"{x.shape[0]} rows vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise RowCountMismatch("need at least 2 examples")
    xc = center_columns(np.asarray(x, dtype=np.float64))
    yc = center_columns(np.asarray(y, dtype=np.float64))
    cross = np.linalg.norm(yc.T @ xc, "fro") ** 2
    nx = np.linalg.norm(xc.T @ xc, "fro")
    ny = np.linalg.norm(yc.T @ yc, "fro")
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(cross / (nx * ny))


def _flatten_features(h: np.ndarray, projection_seed: int = 0) -> np.ndarray:
    """Activations flattened to (n, p); wide layers are sketched down to
    MAX_FEATURE_COLUMNS with a seeded Gaussian projection (the same seed
    must be used for both sides of a comparison)."""
    flat = h.reshape(h.shape[0], -1)
    p = flat.shape[1]
    if p > MAX_FEATURE_COLUMNS:
        rng = np.random.default_rng(projection_seed)
        proj = rng.standard_normal((p, MAX_FEATURE_COLUMNS)) / np.sqrt(MAX_FEATURE_COLUMNS)
        flat = flat @ proj
    return flat


def layerwise_cka(model_a: PrimaryModel, model_b: PrimaryModel,
                  probe_x: np.ndarray, projection_seed: int = 0) -> dict:
    """Per-layer linear CKA between two models of identical architecture,
    plus the average over layers."""
    if model_a.network.spec != model_b.network.spec:
        raise SpecMismatch("models have different architectures")
    feats_a = model_a.forward_features(Tensor(probe_x), training=False)
    feats_b = model_b.forward_features(Tensor(probe_x), training=False)
    scores = []
    for ha, hb in zip(feats_a, feats_b):
        xa = _flatten_features(ha.data, projection_seed)
        xb = _flatten_features(hb.data, projection_seed)
        scores.append(linear_cka(xa, xb))
    return {"per_layer": scores, "average": float(np.mean(scores))}


def linear_probe(model: PrimaryModel, layer: int,
                 train_data: tuple[np.ndarray, np.ndarray],
                 test_data: tuple[np.ndarray, np.ndarray],
                 epochs: int = 30, lr: float = 0.1, batch_size: int = 256,
                 seed: int = 0) -> float:
    """Freeze the model, train a fresh GAP+FC classifier on layer
    ``layer``'s activations, and report test accuracy."""
    def features(x):
        h = Tensor(x)
        for unit in model.units[:layer]:
            h = unit.forward(h, training=False)
        return h.data

    xs, ys = train_data
    feats = features(xs)
    test_feats = features(test_data[0])
    channels = feats.shape[1]
    num_classes = int(max(ys.max(), test_data[1].max())) + 1

    rng = np.random.default_rng(seed)
    params = ParamSet()
    limit = np.sqrt(6.0 / channels)
    w = params.add("probe.w", rng.uniform(-limit, limit, (channels, num_classes)))
    b = params.add("probe.b", np.zeros(num_classes))
    opt = SGD(dict(params.items()), momentum=0.9, weight_decay=0.0)

    def logits_of(f):
        h = Tensor(f)
        if h.data.ndim == 4:
            h = global_avg_pool(h)
        return dense(h, w, b)

    n = len(xs)
    for epoch in range(epochs):
        cur_lr = cosine_lr(lr, epoch, epochs)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            with tape() as tp:
                loss = cross_entropy(logits_of(feats[idx]), ys[idx])
            backward(tp, loss)
            opt.step(cur_lr)

    pred = logits_of(test_feats).data.argmax(axis=1)
    return float((pred == test_data[1]).mean())


# ---------------------------------------------------------------------------
# memory model
# ---------------------------------------------------------------------------

def _unit_activation_elems(unit, out_shape: tuple[int, int, int]) -> int:
    """Per-example activation elements a unit keeps alive for its backward
    pass (conv outputs, norm outputs, relu outputs, residual sum)."""
    c, h, w = out_shape
    spatial = c * h * w
    if unit.kind == "dense":
        return 2 * unit.out_channels            # affine out + relu out
    per_conv = 2 if unit.has_norm else 1        # conv out + norm out
    if unit.kind in ("conv3x3", "conv1x1"):
        return (per_conv + 1) * spatial         # ... + relu out
    # residual block: two conv paths, optional projection, sum, final relu
    convs = 2 * per_conv * spatial + spatial    # conv stacks + first relu
    if unit.needs_projection:
        convs += per_conv * spatial
    return convs + 2 * spatial                  # residual add + final relu


def peak_memory(network: ValidatedNetwork, mode: str, batch_size: int,
                element_bytes: int = 4, plan: AuxPlan | None = None) -> int:
    """Analytical peak training memory in bytes.

    bp mode retains every layer's activations for the single global
    backward pass; local mode holds only one local layer's activations
    (its unit plus its auxiliary head) at a time, freeing them after each
    local update. Parameters, gradients, and momentum buffers are counted
    in both; allocator overhead and workspaces are not.
    """
    spec = network.spec
    param_count = sum(unit_params(u) for u in spec.units) + classifier_params(spec.classifier)
    aux_param_count = 0
    if plan is not None:
        for a in plan.aux:
            aux_param_count += sum(unit_params(u) for u in a.units)
            aux_param_count += classifier_params(a.classifier)
    # parameters + gradients + momentum
    static = 3 * (param_count + (aux_param_count if mode == "local" else 0)) * element_bytes

    input_elems = int(np.prod(spec.input_shape))
    if mode == "bp":
        act = input_elems
        for unit, shape in zip(spec.units, network.unit_shapes):
            act += _unit_activation_elems(unit, shape)
        act += spec.classifier.in_channels + spec.classifier.num_classes
        return static + act * batch_size * element_bytes

    if mode != "local":
        raise ValueError(f"unknown mode: {mode!r}")
    if plan is None:
        raise ValueError("local mode needs an auxiliary plan")
    peak = 0
    for layer in range(1, network.num_units + 1):
        in_elems = input_elems if layer == 1 else int(np.prod(network.unit_shapes[layer - 2]))
        act = in_elems + _unit_activation_elems(spec.units[layer - 1],
                                                network.unit_shapes[layer - 1])
        if layer < network.num_units:
            a = plan.aux[layer - 1]
            cur = a.input_shape
            from .netspec import _unit_out_shape
            for u in a.units:
                cur = _unit_out_shape(u, cur)
                act += _unit_activation_elems(u, cur)
            act += a.classifier.in_channels + a.classifier.num_classes
        else:
            act += spec.classifier.in_channels + spec.classifier.num_classes
        peak = max(peak, act)
    return static + peak * batch_size * element_bytes
