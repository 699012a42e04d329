"""Optimizer math, splits, selection, and small end-to-end training runs."""

import numpy as np
import pytest

from scl.autodiff.tensor import Parameter, Tensor
from scl.model import ModelConfig, SCLModel
from scl.rpm import Layout, generate_problems, read_dataset, write_dataset
from scl.training import (Adam, Metrics, TrainConfig, evaluate, select_best,
                          split_dataset, train, train_runs)


def make_param(values, name="p"):
    return Parameter(name, Tensor(np.asarray(values, dtype=np.float32)))


# ---- Adam ----

def test_zero_gradient_no_decay_leaves_params():
    p = make_param([1.0, -2.0])
    p.tensor.grad = np.zeros(2, dtype=np.float32)
    Adam([p], lr=0.005, weight_decay=0.0).step()
    np.testing.assert_array_equal(p.tensor.data, [1.0, -2.0])


def test_zero_gradient_decay_scales_by_factor():
    p = make_param([1.0, -2.0])
    p.tensor.grad = np.zeros(2, dtype=np.float32)
    opt = Adam([p], lr=0.005, weight_decay=0.01)
    opt.step()
    np.testing.assert_allclose(p.tensor.data, np.array([1.0, -2.0]) * 0.99995,
                               rtol=1e-6)


def test_zero_gradient_decay_is_geometric():
    p = make_param([4.0])
    opt = Adam([p], lr=0.005, weight_decay=0.01)
    for step in range(1, 6):
        p.tensor.grad = np.zeros(1, dtype=np.float32)
        opt.step()
        np.testing.assert_allclose(p.tensor.data, 4.0 * 0.99995 ** step, rtol=1e-5)


def test_constant_gradient_step_approaches_lr_sign():
    p = make_param([0.0])
    opt = Adam([p], lr=0.01, weight_decay=0.0)
    prev = p.tensor.data.copy()
    for _ in range(500):
        p.tensor.grad = np.array([3.7], dtype=np.float32)
        prev = p.tensor.data.copy()
        opt.step()
    step = prev - p.tensor.data
    np.testing.assert_allclose(step, 0.01, rtol=1e-3)  # lr * sign(g)


def test_adam_converges_on_convex_quadratic():
    # f(x) = 0.5 * sum(c_i (x_i - t_i)^2), minimizer t
    rng = np.random.default_rng(0)
    c = rng.uniform(0.5, 3.0, 10).astype(np.float32)
    t = rng.uniform(-2, 2, 10).astype(np.float32)
    p = make_param(np.zeros(10))
    opt = Adam([p], lr=0.01, weight_decay=0.0)
    for _ in range(5000):
        p.tensor.grad = c * (p.tensor.data - t)
        opt.step()
    assert np.abs(p.tensor.data - t).max() <= 1e-3


def test_nan_gradient_aborts_with_name():
    p = make_param([1.0], name="object_net.fc.weight")
    p.tensor.grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(RuntimeError, match="object_net.fc.weight"):
        Adam([p]).step()


# ---- splits ----

def test_split_sizes_600_200_200():
    tr, va, te = split_dataset(1000, (0.6, 0.2, 0.2), seed=0)
    assert (len(tr), len(va), len(te)) == (600, 200, 200)


def test_split_deterministic_and_exhaustive():
    a = split_dataset(500, (0.6, 0.2, 0.2), seed=3)
    b = split_dataset(500, (0.6, 0.2, 0.2), seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    joined = np.concatenate(a)
    assert len(joined) == 500 and len(set(joined.tolist())) == 500


def test_split_bad_ratios():
    with pytest.raises(ValueError, match="sum"):
        split_dataset(100, (0.5, 0.2, 0.2), seed=0)


def test_split_empty_raises():
    with pytest.raises(ValueError, match="empty"):
        split_dataset(2, (0.6, 0.2, 0.2), seed=0)


def test_split_honors_sections(tmp_path):
    problems = generate_problems(Layout.CENTER, 20, global_seed=30)
    out = write_dataset(tmp_path / "ds", problems, panel_px=16, seed=30,
                        layout_tag="center", sections=[12, 4, 4])
    ds = read_dataset(out)
    tr, va, te = split_dataset(ds, (0.6, 0.2, 0.2), seed=99)
    np.testing.assert_array_equal(tr, np.arange(12))
    np.testing.assert_array_equal(va, np.arange(12, 16))
    np.testing.assert_array_equal(te, np.arange(16, 20))


# ---- selection ----

def _metrics(seed, valid, train_loss):
    m = Metrics(seed=seed)
    m.best_valid_acc = valid
    m.train_loss = [train_loss]
    return m


def test_select_best_single_run():
    assert select_best([_metrics(0, 0.5, 1.0)]) == 0


def test_select_best_argmax_valid():
    runs = [_metrics(0, 0.90, 1.0), _metrics(1, 0.95, 1.0), _metrics(2, 0.93, 1.0)]
    assert select_best(runs) == 1


def test_select_best_tie_breaks_on_train_loss_then_seed():
    runs = [_metrics(0, 0.9, 1.0), _metrics(1, 0.9, 0.5), _metrics(2, 0.9, 0.5)]
    assert select_best(runs) == 1
    runs = [_metrics(5, 0.9, 0.5), _metrics(1, 0.9, 0.5)]
    assert select_best(runs) == 1


def test_select_best_permutation_invariant():
    runs = [_metrics(0, 0.91, 1.0), _metrics(1, 0.95, 0.9), _metrics(2, 0.93, 0.8)]
    winner = runs[select_best(runs)]
    reordered = [runs[2], runs[0], runs[1]]
    assert reordered[select_best(reordered)] is winner


# ---- end-to-end on a tiny dataset ----

@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    problems = generate_problems(Layout.CENTER, 96, global_seed=31)
    out = write_dataset(tmp_path_factory.mktemp("data") / "tiny", problems,
                        panel_px=16, seed=31, layout_tag="center")
    return read_dataset(out)


def small_cfg():
    return ModelConfig(panel_px=16, conv_channels=(4, 4, 8, 8))


def test_one_epoch_decreases_loss(tiny):
    model = SCLModel(small_cfg(), seed=0)
    cfg = TrainConfig(epochs=2, seeds=1, batch_size=16, early_stop_patience=0)
    tr, va, te = split_dataset(tiny, cfg.split, seed=31)
    before = model.loss(tiny.batch_images(tr[:16]),
                        tiny.answers()[tr[:16]]).item()
    metrics = train(model, tiny, cfg, seed=0, train_idx=tr, valid_idx=va)
    after = model.loss(tiny.batch_images(tr[:16]), tiny.answers()[tr[:16]]).item()
    assert after < before
    assert len(metrics.train_loss) == 2


def test_identical_seeds_identical_trajectories(tiny):
    cfg = TrainConfig(epochs=2, seeds=1, batch_size=16, deterministic=True)
    tr, va, _ = split_dataset(tiny, cfg.split, seed=31)
    results = []
    for _ in range(2):
        model = SCLModel(small_cfg(), seed=1)
        metrics = train(model, tiny, cfg, seed=1, train_idx=tr, valid_idx=va)
        results.append((metrics.train_loss, metrics.valid_acc,
                        {k: v.tobytes() for k, v in model.state_dict().items()}))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]
    assert results[0][2] == results[1][2]
    # wall clock is suppressed under the determinism flag


def test_best_checkpoint_at_least_final(tiny):
    model = SCLModel(small_cfg(), seed=2)
    cfg = TrainConfig(epochs=3, seeds=1, batch_size=16)
    tr, va, _ = split_dataset(tiny, cfg.split, seed=31)
    metrics = train(model, tiny, cfg, seed=2, train_idx=tr, valid_idx=va)
    assert metrics.best_valid_acc >= metrics.valid_acc[-1]
    assert evaluate(model, tiny, va) == metrics.best_valid_acc


def test_deterministic_flag_suppresses_wall_clock(tiny):
    model = SCLModel(small_cfg(), seed=3)
    cfg = TrainConfig(epochs=1, seeds=1, batch_size=16, deterministic=True)
    tr, va, _ = split_dataset(tiny, cfg.split, seed=31)
    metrics = train(model, tiny, cfg, seed=3, train_idx=tr, valid_idx=va)
    assert metrics.wall_clock_s is None


def test_untrained_model_at_chance():
    problems = generate_problems(Layout.CENTER, 800, global_seed=32)
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        ds = read_dataset(write_dataset(tmp + "/ds", problems, panel_px=16,
                                        seed=32, layout_tag="center"))
        model = SCLModel(small_cfg(), seed=4)
        acc = evaluate(model, ds, np.arange(len(ds)))
    assert abs(acc - 0.125) <= 0.04


def test_train_runs_selects_best(tiny):
    cfg = TrainConfig(epochs=2, seeds=2, batch_size=16)
    model, runs, best = train_runs(small_cfg(), tiny, cfg)
    assert len(runs) == 2
    assert best == select_best(runs)
    assert runs[best].best_valid_acc == max(r.best_valid_acc for r in runs)


def test_divergent_loss_aborts_with_epoch(tiny):
    model = SCLModel(small_cfg(), seed=5)
    # poison one parameter so the first forward already yields NaN
    model.parameters()[0].tensor.data[:] = np.nan
    cfg = TrainConfig(epochs=2, seeds=1, batch_size=16)
    tr, va, _ = split_dataset(tiny, cfg.split, seed=31)
    with pytest.raises(RuntimeError, match="epoch 0"):
        train(model, tiny, cfg, seed=5, train_idx=tr, valid_idx=va)
