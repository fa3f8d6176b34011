"""Training-time model, pipeline simulator, threaded pipelined training."""

import numpy as np
import pytest

from auglocal import pipeline as P
from auglocal.data import gen_synthetic
from auglocal.errors import WorkerPanicPropagated
from auglocal.netspec import ClassifierSpec, LocalUnitSpec, PrimaryNetworkSpec, validate
from auglocal.pipeline import (
    PipelineConfig,
    predict_times,
    run_pipelined_training,
    simulate_pipeline,
)
from auglocal.trainer import TrainConfig, train


def small_net():
    units = (
        LocalUnitSpec("conv3x3", 3, 4),
        LocalUnitSpec("conv3x3", 4, 4),
        LocalUnitSpec("conv3x3", 4, 8, stride=2),
    )
    return validate(PrimaryNetworkSpec(units, ClassifierSpec(8, 4), (3, 6, 6), 4,
                                       name="small3"))


def small_data(seed=0, n=16):
    ds = gen_synthetic(4, (3, 6, 6), n // 4, seed=seed, separation=4.0)
    return ds.images, ds.labels


def test_predict_times_closed_forms():
    out = predict_times(55, 2, 1.0, 1.0, 100)
    assert out["bp_time"] == 56 * 2 * 100
    assert out["auglocal_time"] == 55 + 3 * 2 * 100
    assert out["ratio"] == pytest.approx(out["auglocal_time"] / out["bp_time"])


def test_predict_times_ratio_approaches_depth_fraction():
    # for long runs the startup ramp vanishes and the ratio tends to
    # (d + 1) / (L + 1)
    out = predict_times(55, 6, 1.0, 1.0, 10_000_000)
    assert out["ratio"] == pytest.approx(7 / 56, rel=1e-4)


def test_simulator_matches_hand_traced_schedule():
    # L=2 hidden workers + output stage, d=2, t_f=2, t_b=3, one iteration:
    #   worker1 starts 0, emits 2, frees at 15
    #   worker2 starts 2, emits 4, frees at 17
    #   output  starts 4, emits 6, frees at 19
    res = simulate_pipeline(PipelineConfig(num_layers=2, d=2, t_f=2.0, t_b=3.0,
                                           iterations=1))
    assert res.makespan == pytest.approx(19.0)


def test_simulator_exact_for_constant_times():
    for L, d, tf, tb, N in ((8, 2, 1.0, 2.0, 20), (16, 4, 2.0, 3.0, 10),
                            (4, 3, 1.5, 2.5, 7)):
        res = simulate_pipeline(PipelineConfig(num_layers=L, d=d, t_f=tf, t_b=tb,
                                               iterations=N))
        expected = tf * L + (d + 1) * (tf + tb) * N
        assert res.makespan == pytest.approx(expected, rel=1e-12)


def test_simulator_utilization_bounds_and_bottleneck():
    res = simulate_pipeline(PipelineConfig(num_layers=8, d=2, t_f=1.0, t_b=2.0,
                                           iterations=50))
    assert all(0.0 < u <= 1.0 for u in res.utilization)
    # every worker has identical busy time here, and the first worker never
    # waits, so its utilization is the highest
    assert res.utilization[0] == pytest.approx(max(res.utilization))


def test_simulator_makespan_non_increasing_in_queue_capacity():
    spans = []
    for cap in (1, 2, 4):
        res = simulate_pipeline(PipelineConfig(num_layers=6, d=3, t_f=1.0,
                                               t_b=2.0, iterations=30,
                                               queue_capacity=cap,
                                               time_jitter=0.3, seed=5))
        spans.append(res.makespan)
    assert spans[0] >= spans[1] >= spans[2]


def test_simulator_jitter_reproducible_and_zero_jitter_deterministic():
    cfg = dict(num_layers=5, d=2, t_f=1.0, t_b=1.0, iterations=20,
               time_jitter=0.2)
    a = simulate_pipeline(PipelineConfig(**cfg, seed=9))
    b = simulate_pipeline(PipelineConfig(**cfg, seed=9))
    c = simulate_pipeline(PipelineConfig(**cfg, seed=10))
    assert a.makespan == b.makespan
    assert a.makespan != c.makespan
    flat = simulate_pipeline(PipelineConfig(num_layers=5, d=2, t_f=1.0, t_b=1.0,
                                            iterations=20))
    assert flat.makespan == pytest.approx(5 + 3 * 2 * 20)


def test_simulator_per_layer_depths_extension():
    base = simulate_pipeline(PipelineConfig(num_layers=3, d=4, t_f=1.0, t_b=1.0,
                                            iterations=10))
    shallow = simulate_pipeline(PipelineConfig(num_layers=3, d=4, t_f=1.0,
                                               t_b=1.0, iterations=10,
                                               depths=[4, 3, 2]))
    assert shallow.makespan < base.makespan


def test_simulator_rejects_bad_parameters():
    with pytest.raises(ValueError):
        PipelineConfig(num_layers=3, d=2, t_f=0.0, t_b=1.0, iterations=1)
    with pytest.raises(ValueError):
        PipelineConfig(num_layers=3, d=2, t_f=1.0, t_b=1.0, iterations=1,
                       queue_capacity=0)
    with pytest.raises(ValueError):
        simulate_pipeline(PipelineConfig(num_layers=3, d=2, t_f=1.0, t_b=1.0,
                                         iterations=1, depths=[2, 2]))


@pytest.mark.parametrize("threads", [1, 2, 4])
def test_pipelined_training_bit_identical_to_sequential(threads):
    net = small_net()
    x, y = small_data(seed=20, n=16)
    cfg = TrainConfig(mode="local", d=2, epochs=2, lr=0.1, batch_size=8, seed=51)

    seq_learner, _ = train(net, cfg, (x, y), (x, y))
    pipe_learner, hist = run_pipelined_training(net, cfg, (x, y), (x, y),
                                                threads=threads)
    for name, t in seq_learner.model.params.items():
        np.testing.assert_array_equal(t.data, pipe_learner.model.params[name].data,
                                      err_msg=name)
    for a, b in zip(seq_learner.model.bn_states(), pipe_learner.model.bn_states()):
        np.testing.assert_array_equal(a.running_mean, b.running_mean)
        np.testing.assert_array_equal(a.running_var, b.running_var)
    for sa, sb in zip(seq_learner.aux, pipe_learner.aux):
        for name, t in sa.params.items():
            np.testing.assert_array_equal(t.data, sb.params[name].data)
    assert hist[-1]["split"] == "test"


def test_pipelined_training_nonbarrier_also_identical():
    net = small_net()
    x, y = small_data(seed=21, n=16)
    cfg = TrainConfig(mode="local", d=2, epochs=1, lr=0.1, batch_size=8, seed=53)
    seq_learner, _ = train(net, cfg, (x, y))
    pipe_learner, _ = run_pipelined_training(net, cfg, (x, y), threads=3,
                                             barrier=False, queue_capacity=4)
    for name, t in seq_learner.model.params.items():
        np.testing.assert_array_equal(t.data, pipe_learner.model.params[name].data)


def test_pipelined_training_with_many_batches_does_not_stall():
    # more mini-batches than the bounded queues can absorb at once; the
    # run must still stream through and match sequential training
    net = small_net()
    x, y = small_data(seed=23, n=64)
    cfg = TrainConfig(mode="local", d=2, epochs=1, lr=0.1, batch_size=4, seed=57)
    seq_learner, _ = train(net, cfg, (x, y))
    pipe_learner, _ = run_pipelined_training(net, cfg, (x, y), threads=4,
                                             timeout=60.0)
    for name, t in seq_learner.model.params.items():
        np.testing.assert_array_equal(t.data, pipe_learner.model.params[name].data)


def test_worker_panic_propagates(monkeypatch):
    net = small_net()
    x, y = small_data(seed=22, n=8)
    cfg = TrainConfig(mode="local", d=2, epochs=1, lr=0.1, batch_size=8, seed=55)

    def explode(self, x, y, lr):
        raise RuntimeError("injected fault")

    monkeypatch.setattr(P._Stage, "process", explode)
    with pytest.raises(WorkerPanicPropagated):
        run_pipelined_training(net, cfg, (x, y), threads=2, timeout=5.0)
