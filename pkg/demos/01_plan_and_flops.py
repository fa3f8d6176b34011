"""Auxiliary-head planning and compute accounting.

Builds a ResNet-110-style network, plans auxiliary heads for every hidden
layer under several depth schedules, and prints how the schedule trades
auxiliary compute against head capacity.

Run:  python3 demos/01_plan_and_flops.py
"""

from auglocal.auxbuild import build_aux, plan_all
from auglocal.netspec import count_flops, count_params, resnet110_cifar, validate


def gmacs(v: int) -> str:
    return f"{v / 1e9:.4f} G"


def main() -> None:
    net = validate(resnet110_cifar())
    print(f"network: {net.spec.name}")
    print(f"  local units:    {net.num_units}")
    print(f"  parameters:     {count_params(net):,}")
    print(f"  forward FLOPs:  {gmacs(count_flops(net))} (multiply-accumulate = 1)")
    print()

    print("depth schedule (d=6, d_min=2) at three decay rates:")
    for tau in (0.0, 0.5, 1.0):
        plan = plan_all(net, d=6, tau=tau)
        depths = plan.depths()
        print(f"  tau={tau:3.1f}  depths {depths[0]}..{depths[-1]}  "
              f"aux {gmacs(plan.aux_flops())}  total {gmacs(plan.total_flops())}")
    print()

    print("the shallowest configuration, d=2: every hidden layer gets the")
    print("top unit's structure, adapted to its own channel count:")
    for layer in (1, 20, 40, 54):
        aux = build_aux(net, layer, "uniform", 2)
        u = aux.units[0]
        print(f"  layer {layer:2d}: {u.kind} {u.in_channels}->{u.out_channels} "
              f"stride {u.stride}, then GAP + FC -> {aux.classifier.num_classes}")
    print()

    print("selection strategies for layer 10 at depth 4:")
    for strategy in ("uniform", "sequential", "repetitive"):
        aux = build_aux(net, 10, strategy, 4)
        chain = " -> ".join(f"{u.in_channels}:{u.out_channels}" for u in aux.units)
        idx = list(aux.indices) if aux.indices else "(own structure)"
        print(f"  {strategy:10s} copies {idx}  channels {chain}  "
              f"{gmacs(aux.flops())}")


if __name__ == "__main__":
    main()
