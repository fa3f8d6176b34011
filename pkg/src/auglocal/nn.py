"""Executable networks built from declarative specs.

A runtime unit owns its parameters (inside a shared ParamSet, under a
unique name prefix) and its batchnorm running statistics. Initialization
is Kaiming-uniform for conv/dense weights, scale 1 / shift 0 for norms.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .auxbuild import AuxNetworkSpec
from .netspec import ClassifierSpec, LocalUnitSpec, ValidatedNetwork
from .tensor import BatchNormState, ParamSet, Tensor


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class ConvLayer:
    def __init__(self, params: ParamSet, prefix: str, rng, cin: int, cout: int,
                 k: int, stride: int, bias: bool):
        self.stride = stride
        self.w = params.add(f"{prefix}.w",
                            _kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.b = params.add(f"{prefix}.b", np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride)


class BatchNormLayer:
    def __init__(self, params: ParamSet, prefix: str, channels: int):
        self.gamma = params.add(f"{prefix}.gamma", np.ones(channels))
        self.beta = params.add(f"{prefix}.beta", np.zeros(channels))
        self.state = BatchNormState(channels)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.state, training)


class ConvUnit:
    """conv3x3 / conv1x1 local unit: conv (+ norm) + relu."""

    def __init__(self, spec: LocalUnitSpec, params: ParamSet, prefix: str, rng):
        self.spec = spec
        k = 3 if spec.kind == "conv3x3" else 1
        self.conv = ConvLayer(params, f"{prefix}.conv", rng, spec.in_channels,
                              spec.out_channels, k, spec.stride, bias=not spec.has_norm)
        self.norm = BatchNormLayer(params, f"{prefix}.norm", spec.out_channels) \
            if spec.has_norm else None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = self.conv.forward(x)
        if self.norm is not None:
            y = self.norm.forward(y, training)
        return T.relu(y)

    def bn_states(self):
        return [self.norm.state] if self.norm is not None else []


class ResidualBlock:
    """Basic block: conv3x3-norm-relu-conv3x3-norm plus shortcut, then relu.
    The shortcut is a 1x1 projection when channels or stride change."""

    def __init__(self, spec: LocalUnitSpec, params: ParamSet, prefix: str, rng):
        self.spec = spec
        cin, cout, s = spec.in_channels, spec.out_channels, spec.stride
        bias = not spec.has_norm
        self.conv1 = ConvLayer(params, f"{prefix}.conv1", rng, cin, cout, 3, s, bias)
        self.conv2 = ConvLayer(params, f"{prefix}.conv2", rng, cout, cout, 3, 1, bias)
        if spec.has_norm:
            self.norm1 = BatchNormLayer(params, f"{prefix}.norm1", cout)
            self.norm2 = BatchNormLayer(params, f"{prefix}.norm2", cout)
        else:
            self.norm1 = self.norm2 = None
        if spec.needs_projection:
            self.proj = ConvLayer(params, f"{prefix}.proj", rng, cin, cout, 1, s, bias)
            self.proj_norm = BatchNormLayer(params, f"{prefix}.proj_norm", cout) \
                if spec.has_norm else None
        else:
            self.proj = self.proj_norm = None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = self.conv1.forward(x)
        if self.norm1 is not None:
            y = self.norm1.forward(y, training)
        y = T.relu(y)
        y = self.conv2.forward(y)
        if self.norm2 is not None:
            y = self.norm2.forward(y, training)
        if self.proj is not None:
            sc = self.proj.forward(x)
            if self.proj_norm is not None:
                sc = self.proj_norm.forward(sc, training)
        else:
            sc = x
        return T.relu(T.add(y, sc))

    def bn_states(self):
        return [n.state for n in (self.norm1, self.norm2, self.proj_norm) if n is not None]


class DenseUnit:
    def __init__(self, spec: LocalUnitSpec, params: ParamSet, prefix: str, rng):
        self.spec = spec
        self.w = params.add(f"{prefix}.w",
                            _kaiming_uniform(rng, (spec.in_channels, spec.out_channels),
                                             spec.in_channels))
        self.b = params.add(f"{prefix}.b", np.zeros(spec.out_channels))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if x.data.ndim == 4:
            x = T.flatten(x)
        return T.relu(T.dense(x, self.w, self.b))

    def bn_states(self):
        return []


class Classifier:
    """Global average pool followed by a fully-connected logit layer."""

    def __init__(self, spec: ClassifierSpec, params: ParamSet, prefix: str, rng):
        self.spec = spec
        self.w = params.add(f"{prefix}.w",
                            _kaiming_uniform(rng, (spec.in_channels, spec.num_classes),
                                             spec.in_channels))
        self.b = params.add(f"{prefix}.b", np.zeros(spec.num_classes))

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim == 4:
            x = T.global_avg_pool(x)
        return T.dense(x, self.w, self.b)


def build_unit(spec: LocalUnitSpec, params: ParamSet, prefix: str, rng):
    if spec.kind in ("conv3x3", "conv1x1"):
        return ConvUnit(spec, params, prefix, rng)
    if spec.kind == "residual-basic-block":
        return ResidualBlock(spec, params, prefix, rng)
    return DenseUnit(spec, params, prefix, rng)


class PrimaryModel:
    """The trained artifact: local units 1..L and the global classifier.
    Inference touches only these parameters; auxiliary heads live elsewhere."""

    def __init__(self, network: ValidatedNetwork, seed: int = 0):
        self.network = network
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        self.units = [build_unit(u, self.params, f"unit{i}", rng)
                      for i, u in enumerate(network.units, start=1)]
        self.classifier = Classifier(network.spec.classifier, self.params, "classifier", rng)

    @property
    def num_units(self) -> int:
        return self.network.num_units

    def unit_param_names(self, index: int) -> list[str]:
        prefix = f"unit{index}."
        return [n for n in self.params.names() if n.startswith(prefix)]

    def classifier_param_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("classifier.")]

    def forward_unit(self, index: int, x: Tensor, training: bool) -> Tensor:
        return self.units[index - 1].forward(x, training)

    def forward_features(self, x: Tensor, training: bool = False) -> list[Tensor]:
        """Hidden activations h^1 .. h^L."""
        feats = []
        h = x
        for unit in self.units:
            h = unit.forward(h, training)
            feats.append(h)
        return feats

    def forward_logits(self, x: Tensor, training: bool = False) -> Tensor:
        h = x
        for unit in self.units:
            h = unit.forward(h, training)
        return self.classifier.forward(h)

    def bn_states(self) -> list[BatchNormState]:
        states = []
        for unit in self.units:
            states.extend(unit.bn_states())
        return states


class AuxModel:
    """One hidden layer's auxiliary head, with parameters disjoint from the
    primary network and from every other head."""

    def __init__(self, spec: AuxNetworkSpec, seed: int = 0):
        self.spec = spec
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        prefix = f"aux{spec.layer}"
        self.units = [build_unit(u, self.params, f"{prefix}.unit{j}", rng)
                      for j, u in enumerate(spec.units, start=1)]
        self.classifier = Classifier(spec.classifier, self.params,
                                     f"{prefix}.classifier", rng)

    def forward(self, h: Tensor, training: bool) -> Tensor:
        for unit in self.units:
            h = unit.forward(h, training)
        return self.classifier.forward(h)

    def bn_states(self) -> list[BatchNormState]:
        states = []
        for unit in self.units:
            states.extend(unit.bn_states())
        return states
