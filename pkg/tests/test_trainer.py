import pytest
import torch
import torch.nn as nn

from fgpcl.data_stream import ArrayDataset, build_schedule, phase_state
from fgpcl.errors import ConfigError, ContractError
from fgpcl.exemplars import ExemplarStore
from fgpcl.trainer import (IncrementalNet, OptimizerSchedule,
                           evaluate_groups, extend_head, resolve_config,
                           run_incremental, snapshot, train_phase)


class TinyBackbone(nn.Module):
    feature_dim = 4

    def __init__(self):
        super().__init__()
        self.fc = nn.Linear(4, 4)

    def forward(self, x):
        return self.fc(x.flatten(1))


def blob_dataset(num_classes=4, per_class=20, seed=0):
    gen = torch.Generator().manual_seed(seed)
    centers = torch.randn(num_classes, 4, generator=gen) * 4
    inputs, labels = [], []
    for c in range(num_classes):
        pts = centers[c] + 0.3 * torch.randn(per_class, 4, generator=gen)
        inputs.append(pts)
        labels.append(torch.full((per_class,), c))
    return ArrayDataset(torch.cat(inputs).reshape(-1, 1, 2, 2), torch.cat(labels))


def make_model(normalization="rectified_cosine"):
    torch.manual_seed(0)
    return IncrementalNet(TinyBackbone(), normalization)


# --- optimizer schedule -----------------------------------------------------

def test_schedule_decay_steps():
    s = OptimizerSchedule(learning_rate=2.0, decay_epochs=(2, 4), decay_factor=5.0, epochs=6)
    assert s.lr_at(0) == 2.0
    assert s.lr_at(2) == pytest.approx(0.4)
    assert s.lr_at(5) == pytest.approx(0.08)


def test_schedule_rejects_bad_decay():
    with pytest.raises(ConfigError):
        OptimizerSchedule(decay_epochs=(5, 3), epochs=10)
    with pytest.raises(ConfigError):
        OptimizerSchedule(decay_epochs=(12,), epochs=10)


# --- head -------------------------------------------------------------------

def test_extend_head_preserves_existing_rows():
    model = make_model()
    extend_head(model, list(range(50)))
    before = model.head.weight.data.clone()
    extend_head(model, list(range(50, 60)))
    assert model.head.num_classes == 60
    assert torch.equal(model.head.weight.data[:50], before)
    assert torch.all(model.head.bias.data[50:] == 0)


def test_extend_head_rejects_duplicates_and_empty():
    model = make_model()
    extend_head(model, [0, 1])
    with pytest.raises(ContractError):
        extend_head(model, [1])
    with pytest.raises(ContractError):
        extend_head(model, [])


def test_new_embedding_init_statistics():
    model = make_model()
    gen = torch.Generator().manual_seed(0)
    extend_head(model, list(range(2000)), gen)
    w = model.head.weight.data
    gain = 1.0 / model.head.feature_dim ** 0.5
    assert float(w.abs().max()) <= gain
    assert abs(float(w.mean())) < 0.02  # symmetric around zero
    # uniform on [-gain, gain] has std gain/sqrt(3)
    assert float(w.std()) == pytest.approx(gain / 3 ** 0.5, rel=0.05)


# --- snapshot ---------------------------------------------------------------

def test_snapshot_isolation_and_determinism():
    model = make_model()
    extend_head(model, [0, 1])
    data = blob_dataset(2)
    probe = data.inputs[:8]
    snap = snapshot(model)
    before = snap.activations(probe, [0, 1])
    assert torch.allclose(model.head.activations(model.features(probe), [0, 1]),
                          before, atol=1e-7)

    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    train_phase(model, data, state, None, "none",
                OptimizerSchedule(epochs=2, batch_size=16), seed=0)
    after = snap.activations(probe, [0, 1])
    assert torch.equal(before, after)  # frozen copy unaffected by training
    assert not torch.allclose(
        model.head.activations(model.features(probe), [0, 1]), before)
    # two passes through the snapshot are bitwise identical
    assert torch.equal(snap.activations(probe, [0, 1]), after)


def test_no_gradient_flows_into_snapshot():
    model = make_model()
    extend_head(model, [0, 1])
    snap = snapshot(model)
    extend_head(model, [2, 3])
    data = blob_dataset(4)
    state = phase_state(build_schedule(4, 2, 2, 0), 1)
    params_before = [p.clone() for p in snap.model.parameters()]
    train_phase(model, data, state, snap, "wE",
                OptimizerSchedule(epochs=1, batch_size=16), seed=0)
    for p0, p1 in zip(params_before, snap.model.parameters()):
        assert torch.equal(p0, p1)


# --- train_phase ------------------------------------------------------------

def test_zero_epochs_is_noop():
    model = make_model()
    extend_head(model, [0, 1])
    data = blob_dataset(2)
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    before = [p.clone() for p in model.parameters()]
    losses = train_phase(model, data, state, None, "none",
                         OptimizerSchedule(epochs=0), seed=0)
    assert losses == []
    for p0, p1 in zip(before, model.parameters()):
        assert torch.equal(p0, p1)


def test_phase_zero_ignores_dummy_snapshot():
    data = blob_dataset(2)
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    sched = OptimizerSchedule(epochs=2, batch_size=16)

    model_a = make_model()
    extend_head(model_a, [0, 1])
    dummy = snapshot(model_a)
    train_phase(model_a, data, state, dummy, "wE", sched, seed=0)

    model_b = make_model()
    extend_head(model_b, [0, 1])
    train_phase(model_b, data, state, None, "wE", sched, seed=0)
    for pa, pb in zip(model_a.parameters(), model_b.parameters()):
        assert torch.allclose(pa, pb, atol=0, rtol=0)


def test_loss_decreases_on_separable_toy():
    model = make_model()
    extend_head(model, [0, 1])
    data = blob_dataset(2, per_class=40)
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    losses = train_phase(model, data, state, None, "none",
                         OptimizerSchedule(epochs=3, batch_size=16,
                                           learning_rate=0.05), seed=0)
    assert losses[0] >= losses[1] >= losses[2]


def test_empty_data_rejected():
    model = make_model()
    extend_head(model, [0, 1])
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    empty = ArrayDataset(torch.empty(0, 1, 2, 2), torch.empty(0, dtype=torch.long))
    with pytest.raises(ContractError):
        train_phase(model, empty, state, None, "none", OptimizerSchedule(), seed=0)


def test_missing_snapshot_rejected_after_phase_zero():
    model = make_model()
    extend_head(model, [0, 1, 2, 3])
    data = blob_dataset(4)
    state = phase_state(build_schedule(4, 2, 2, 0), 1)
    with pytest.raises(ConfigError):
        train_phase(model, data, state, None, "wE", OptimizerSchedule(epochs=1), seed=0)


@pytest.mark.parametrize("loss_name", ["wE", "icarl_bce", "e2e_kl",
                                       "wE_uniform_gamma", "bce_with_wE_gamma"])
def test_all_loss_presets_train(loss_name):
    model = make_model()
    extend_head(model, [0, 1])
    snap = snapshot(model)
    extend_head(model, [2, 3])
    data = blob_dataset(4)
    state = phase_state(build_schedule(4, 2, 2, 0), 1)
    losses = train_phase(model, data, state, snap, loss_name,
                         OptimizerSchedule(epochs=1, batch_size=16), seed=0)
    assert all(l == l and l >= 0 for l in losses)  # finite, nonnegative


# --- evaluation -------------------------------------------------------------

def test_evaluation_uses_head_argmax_without_store():
    model = make_model()
    extend_head(model, [0, 1])
    data = blob_dataset(2, per_class=40)
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    train_phase(model, data, state, None, "none",
                OptimizerSchedule(epochs=10, batch_size=16, learning_rate=0.05), seed=0)
    accs, per_class = evaluate_groups(model, data, [(0, 1)], None)
    assert accs[0] > 0.9
    assert set(per_class) == {0, 1}


def test_evaluation_with_nme_store():
    model = make_model()
    extend_head(model, [0, 1])
    data = blob_dataset(2, per_class=40)
    state = phase_state(build_schedule(2, 2, 0, 0), 0)
    train_phase(model, data, state, None, "none",
                OptimizerSchedule(epochs=10, batch_size=16, learning_rate=0.05), seed=0)
    store = ExemplarStore(20, data)
    for c in (0, 1):
        store.add_class(c, data.indices_of([c])[:10].tolist())
    accs, _ = evaluate_groups(model, data, [(0, 1)], store)
    assert accs[0] > 0.9


# --- config and full runs ---------------------------------------------------

def test_resolve_config_rejects_unknown_keys_and_losses():
    with pytest.raises(ConfigError):
        resolve_config({"nonsense": 1})
    with pytest.raises(ConfigError, match="loss"):
        resolve_config({"loss": "made_up"})


def quick_config(**over):
    cfg = {
        "dataset": "digits",
        "classes_per_phase": 5,
        "memory": 20,
        "epochs": 1,
        "batch_size": 64,
        "seed": 0,
    }
    cfg.update(over)
    return cfg


def test_single_phase_run_is_plain_supervised(tmp_path):
    matrix, report = run_incremental(quick_config(classes_per_phase=10, epochs=2))
    assert matrix.num_phases == 1
    assert len(matrix.rows[0]) == 1
    assert report["forgetting"] is None


def test_run_reproducible_and_head_monotone(tmp_path):
    m1, r1 = run_incremental(quick_config(), tmp_path / "a")
    m2, r2 = run_incremental(quick_config(), tmp_path / "b")
    for ra, rb in zip(m1.rows, m2.rows):
        assert all(abs(x - y) < 1e-6 for x, y in zip(ra, rb))
    assert (tmp_path / "a" / "accuracy_matrix.csv").exists()
    assert (tmp_path / "a" / "config.json").exists()
    assert (tmp_path / "a" / "metrics.json").exists()
    assert (tmp_path / "a" / "exemplars.json").exists()
    assert (tmp_path / "a" / "model.pt").exists()


def test_pretrain_scenario_first_group_larger():
    matrix, _ = run_incremental(quick_config(classes_per_phase=2,
                                             pretrain_class_count=6))
    assert matrix.num_phases == 3  # 6 + 2 + 2
