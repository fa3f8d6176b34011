"""Construction of per-layer auxiliary networks.

Each hidden layer gets a small head built from the structures of its own
downstream layers: a depth schedule decides how many trainable layers the
head has, a selection strategy picks which downstream units to copy, and a
dimension-adaptation rule rewrites channel counts and strides so the copied
chain type-checks. Parameters are always freshly initialized; only
structure is reused.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

from .errors import (
    DepthExceedsRemaining,
    FlopsBudgetExceeded,
    InvalidDepthBounds,
    UnknownStrategy,
)
from .netspec import (
    ClassifierSpec,
    LocalUnitSpec,
    ValidatedNetwork,
    chain_flops,
    count_flops,
)

STRATEGIES = ("uniform", "sequential", "repetitive", "handcrafted-c1x1", "handcrafted-c3x3")


def _round_half_away(x: float) -> int:
    """Nearest integer, ties away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def pyramidal_depth(layer: int, num_units: int, d: int, d_min: int, tau: float) -> int:
    """Depth of the auxiliary head for hidden layer ``layer``.

    Starts at the maximum ``d`` for the first hidden layer and decays
    linearly toward ``d_min`` at rate ``tau``, capped by the number of
    layers remaining to the top.
    """
    if d < d_min or d_min < 2:
        raise InvalidDepthBounds(f"need d >= d_min >= 2, got d={d}, d_min={d_min}")
    if not 0.0 <= tau <= 1.0:
        raise InvalidDepthBounds(f"tau must lie in [0, 1], got {tau}")
    if num_units < 3:
        raise InvalidDepthBounds(f"need at least 3 local units, got {num_units}")
    if not 1 <= layer <= num_units - 1:
        raise InvalidDepthBounds(f"layer {layer} outside [1, {num_units - 1}]")
    frac = tau * (layer - 1) / (num_units - 2)
    return min(_round_half_away((1.0 - frac) * d + frac * d_min), num_units - layer + 1)


def _check_depth(layer: int, num_units: int, depth: int) -> None:
    if not 2 <= depth <= num_units - layer + 1:
        raise DepthExceedsRemaining(
            f"depth {depth} invalid for layer {layer} of {num_units} units")


def select_uniform(layer: int, num_units: int, depth: int) -> list[int]:
    """Evenly spaced downstream unit indices, always ending at the top unit."""
    _check_depth(layer, num_units, depth)
    return [layer + _round_half_away((num_units - layer) * i / (depth - 1))
            for i in range(1, depth)]


def select_sequential(layer: int, num_units: int, depth: int) -> list[int]:
    """The immediately following units."""
    _check_depth(layer, num_units, depth)
    return list(range(layer + 1, layer + depth))


def select_repetitive(layer: int, depth: int) -> list[int]:
    """The layer's own structure repeated (fresh parameters each copy)."""
    if depth < 2:
        raise DepthExceedsRemaining(f"repetitive selection needs depth >= 2, got {depth}")
    return [layer] * (depth - 1)


@dataclass(frozen=True)
class AuxNetworkSpec:
    """One hidden layer's auxiliary head: adapted units plus a fresh
    pool-and-classify top."""
    layer: int
    depth: int
    strategy: str
    indices: tuple[int, ...]
    units: tuple[LocalUnitSpec, ...]
    classifier: ClassifierSpec
    input_shape: tuple[int, int, int]   # shape of the hidden activation it consumes

    def flops(self) -> int:
        return chain_flops(self.units, self.input_shape, self.classifier)


def _adapt_chain(source_units, in_channels: int) -> list[LocalUnitSpec]:
    """Rewrite input channels so the chain composes; downsample (stride 2)
    exactly when a unit's output channels are at least double its adapted
    input channels."""
    adapted = []
    cur = in_channels
    for src in source_units:
        stride = 2 if src.out_channels >= 2 * cur else 1
        adapted.append(replace(src, in_channels=cur, stride=stride))
        cur = src.out_channels
    return adapted


def build_aux(network: ValidatedNetwork, layer: int, strategy: str, depth: int,
              width_multiplier: int | None = None,
              repetitive_downsample: bool = False) -> AuxNetworkSpec:
    """Build the auxiliary head for one hidden layer.

    ``width_multiplier`` applies to the handcrafted conv strategies only;
    when omitted it is chosen by :func:`find_width_multiplier` to match the
    FLOPs of the uniform head at equal depth.
    """
    if strategy not in STRATEGIES:
        raise UnknownStrategy(f"unknown strategy: {strategy!r}")
    num_units = network.num_units
    if not 1 <= layer <= num_units - 1:
        raise DepthExceedsRemaining(f"layer {layer} has no auxiliary head")
    in_c = network.units[layer - 1].out_channels
    in_shape = network.unit_shapes[layer - 1]
    clf = ClassifierSpec(0, network.spec.num_classes)  # in_channels set below

    if strategy == "uniform":
        indices = select_uniform(layer, num_units, depth)
        units = _adapt_chain([network.units[i - 1] for i in indices], in_c)
    elif strategy == "sequential":
        indices = select_sequential(layer, num_units, depth)
        units = _adapt_chain([network.units[i - 1] for i in indices], in_c)
    elif strategy == "repetitive":
        indices = select_repetitive(layer, depth)
        units = _adapt_chain([network.units[layer - 1]] * (depth - 1), in_c)
        if repetitive_downsample and units:
            units[0] = replace(units[0], stride=2)
    else:  # handcrafted conv stacks
        _check_depth(layer, num_units, depth)
        if width_multiplier is None:
            width_multiplier = find_width_multiplier(network, layer, depth, strategy)
        kind = "conv1x1" if strategy == "handcrafted-c1x1" else "conv3x3"
        width = in_c * width_multiplier
        indices = []
        units = []
        cur = in_c
        for i in range(depth - 1):
            stride = 2 if i == 0 and repetitive_downsample else 1
            units.append(LocalUnitSpec(kind, cur, width, stride))
            cur = width
        indices = tuple()

    top_c = units[-1].out_channels if units else in_c
    clf = ClassifierSpec(top_c, network.spec.num_classes)
    return AuxNetworkSpec(layer=layer, depth=depth, strategy=strategy,
                          indices=tuple(indices), units=tuple(units),
                          classifier=clf, input_shape=in_shape)


def find_width_multiplier(network: ValidatedNetwork, layer: int, depth: int,
                          strategy: str, max_multiplier: int = 64) -> int:
    """Smallest-error integer channel multiplier for a handcrafted head,
    found by bisection against the FLOPs of the uniform head at equal depth."""
    target = build_aux(network, layer, "uniform", depth).flops()

    def flops_at(m: int) -> int:
        return build_aux(network, layer, strategy, depth, width_multiplier=m).flops()

    lo, hi = 1, max_multiplier
    if flops_at(hi) < target:
        return hi
    while lo < hi:
        mid = (lo + hi) // 2
        if flops_at(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    if lo > 1 and abs(flops_at(lo - 1) - target) < abs(flops_at(lo) - target):
        return lo - 1
    return lo


@dataclass(frozen=True)
class AuxPlan:
    """Auxiliary heads for every hidden layer of a validated network."""
    network: ValidatedNetwork
    aux: tuple[AuxNetworkSpec, ...]     # one per hidden layer 1..L-1
    d: int
    d_min: int
    tau: float
    strategy: str

    def aux_flops(self) -> int:
        return sum(a.flops() for a in self.aux)

    def total_flops(self) -> int:
        return count_flops(self.network) + self.aux_flops()

    def depths(self) -> list[int]:
        return [a.depth for a in self.aux]


def plan_all(network: ValidatedNetwork, d: int, d_min: int = 2, tau: float = 0.5,
             strategy: str = "uniform", flops_budget: int | None = None,
             width_multiplier: int | None = None,
             repetitive_downsample: bool = False) -> AuxPlan:
    """Plan auxiliary heads for all hidden layers; the top unit gets none
    (it trains jointly with the global classifier)."""
    heads = []
    for layer in range(1, network.num_units):
        depth = pyramidal_depth(layer, network.num_units, d, d_min, tau)
        heads.append(build_aux(network, layer, strategy, depth,
                               width_multiplier=width_multiplier,
                               repetitive_downsample=repetitive_downsample))
    plan = AuxPlan(network=network, aux=tuple(heads), d=d, d_min=d_min,
                   tau=tau, strategy=strategy)
    if flops_budget is not None and plan.aux_flops() > flops_budget:
        raise FlopsBudgetExceeded(
            f"auxiliary FLOPs {plan.aux_flops()} exceed budget {flops_budget}")
    return plan


def emit_plan_text(plan: AuxPlan) -> str:
    """Structured text rendering of a plan, for diffing against expectations."""
    out = io.StringIO()
    out.write("format = plan/1\n")
    out.write("[plan]\n")
    out.write(f"network = {plan.network.spec.name}\n")
    out.write(f"strategy = {plan.strategy}\n")
    out.write(f"d = {plan.d}\n")
    out.write(f"d_min = {plan.d_min}\n")
    out.write(f"tau = {plan.tau}\n")
    out.write(f"primary_flops = {count_flops(plan.network)}\n")
    out.write(f"aux_flops = {plan.aux_flops()}\n")
    out.write(f"total_flops = {plan.total_flops()}\n")
    for a in plan.aux:
        out.write(f"[layer {a.layer}]\n")
        out.write(f"depth = {a.depth}\n")
        out.write(f"indices = {','.join(str(i) for i in a.indices)}\n")
        out.write(f"flops = {a.flops()}\n")
        for j, u in enumerate(a.units, start=1):
            out.write(f"unit{j} = {u.kind} {u.in_channels}->{u.out_channels} stride {u.stride}\n")
        out.write(f"classifier = global-average-pool + fc "
                  f"{a.classifier.in_channels}->{a.classifier.num_classes}\n")
    return out.getvalue()
