"""Representation similarity, linear probing, and the memory model.

Trains a backprop reference and two local models with different head
depths, compares their hidden representations to the reference with
linear CKA, probes layer separability, and prints the analytical peak
training-memory comparison for a deep network.

Run:  python3 demos/04_cka_probe_memory.py   (about a minute on CPU)
"""

from auglocal.analysis import layerwise_cka, linear_probe, peak_memory
from auglocal.auxbuild import plan_all
from auglocal.data import gen_synthetic
from auglocal.netspec import resnet110_cifar, tinynet8, validate
from auglocal.trainer import TrainConfig, train


def main() -> None:
    net = validate(tinynet8())
    tr = gen_synthetic(10, (3, 8, 8), 120, seed=0, separation=5.0)
    te = gen_synthetic(10, (3, 8, 8), 40, seed=10_000, separation=5.0)
    data = ((tr.images, tr.labels), (te.images, te.labels))

    bp, _ = train(net, TrainConfig(mode="bp", lr=0.2, epochs=12,
                                   batch_size=128, seed=0), *data)
    print("deeper auxiliary heads pull local representations toward the")
    print("backprop reference (average linear CKA over layers):")
    locals_ = {}
    for d in (2, 4):
        learner, _ = train(net, TrainConfig(mode="local", d=d, lr=0.2,
                                            epochs=12, batch_size=128, seed=0),
                           *data)
        locals_[d] = learner
        cka = layerwise_cka(learner.model, bp.model, te.images[:256])
        print(f"  d={d}: average {cka['average']:.4f}  "
              f"per-layer {['%.3f' % v for v in cka['per_layer']]}")
    print()

    print("linear probes on frozen features of the d=4 local model:")
    for layer in (2, 5, 8):
        acc = linear_probe(locals_[4].model, layer, *data, epochs=15, lr=0.1)
        print(f"  layer {layer}: probe accuracy {acc:.3f}")
    print()

    deep = validate(resnet110_cifar())
    plan = plan_all(deep, d=2)
    for batch in (256, 1024):
        bp_b = peak_memory(deep, "bp", batch)
        lo_b = peak_memory(deep, "local", batch, plan=plan)
        print(f"peak training memory, {deep.spec.name}, batch {batch}: "
              f"bp {bp_b / 2**30:.2f} GiB vs local {lo_b / 2**30:.2f} GiB "
              f"({1 - lo_b / bp_b:.0%} lower)")


if __name__ == "__main__":
    main()
