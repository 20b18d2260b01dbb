import numpy as np
import pytest

from sriem import ndmath as nd
from sriem.checkpoint import load_checkpoint, save_checkpoint
from sriem.dataset import Vocabulary, batchify
from sriem.errors import IncompatibleCheckpointError, NonFiniteError, TrainingError
from sriem.model import ModelConfig, forward, init_params
from sriem.synthetic import transition_corpus
from sriem.trainer import Adam, AdamState, TrainConfig, adam_step, schedule, split_validation, train
import sriem.trainer as trainer_mod


def fresh(shape):
    return AdamState(np.zeros(shape), np.zeros(shape))


# schedule ------------------------------------------------------------------------

def test_schedule_examples():
    cfg = TrainConfig()
    assert schedule(0, cfg) == 1e-3
    assert schedule(3, cfg) == 1e-4
    assert schedule(7, cfg) == 1e-5


def test_schedule_closed_form_20_epochs():
    cfg = TrainConfig()
    expected = [float(f"1e-{3 + e // 3}") for e in range(20)]
    assert [schedule(e, cfg) for e in range(20)] == expected


# adam ----------------------------------------------------------------------------

def test_zero_gradient_leaves_params():
    w = np.array([0.3, -2.0])
    adam_step(w, np.zeros(2), fresh(2), lr=0.1)
    assert w.tolist() == [0.3, -2.0]


def test_first_step_is_full_lr():
    w = np.array([1.0])
    adam_step(w, np.array([1.0]), fresh(1), lr=0.1)
    assert w[0] == pytest.approx(0.9, abs=1e-6)


def test_second_identical_step_not_larger():
    w = np.array([1.0])
    s = fresh(1)
    adam_step(w, np.array([1.0]), s, lr=0.1)
    first = 1.0 - w[0]
    before = w[0]
    adam_step(w, np.array([1.0]), s, lr=0.1)
    assert before - w[0] <= first + 1e-9


def test_l2_shrinks_norm_with_zero_data_gradient():
    rng = np.random.default_rng(0)
    w = rng.normal(size=20)
    s = fresh(20)
    norms = [np.linalg.norm(w)]
    for _ in range(10):
        adam_step(w, np.zeros(20), s, lr=1e-3, l2=1e-5)
        norms.append(np.linalg.norm(w))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_adam_names_non_finite_tensor():
    params = init_params(ModelConfig(n_items=5, d=4, l=2), 0)
    params.tensors["W_k"].grad = np.full((4, 2), np.nan)
    with pytest.raises(NonFiniteError, match="W_k"):
        Adam(params).step(1e-3)


@pytest.mark.parametrize("seed", range(20))
def test_small_lr_step_goes_downhill(seed):
    rng = np.random.default_rng(seed)
    params = init_params(ModelConfig(n_items=30, d=8, l=4), seed)
    pairs = [(list(rng.integers(1, 31, size=int(rng.integers(1, 6)))), int(rng.integers(1, 31)))
             for _ in range(8)]
    batch = next(batchify(pairs, 8, 10))
    with nd.Tape() as tape:
        before = forward(batch, params).loss
        nd.backward(before, tape)
    Adam(params).step(1e-4)
    assert forward(batch, params, with_loss=True).loss.item() < before.item()


# training loop --------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus200():
    return transition_corpus(200, 50, seed=0)


def cfg_small(**kw):
    return TrainConfig(**{"epochs": 5, "patience": 10, **kw})


def test_loss_strictly_decreases_first_five_epochs(corpus200):
    _, rep = train(corpus200, ModelConfig(corpus200.n_items, d=32, l=16), cfg_small())
    losses = [e.loss for e in rep.epochs]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_patience_zero_runs_one_epoch(corpus200):
    _, rep = train(corpus200, ModelConfig(corpus200.n_items, d=8, l=4), TrainConfig(patience=0))
    assert len(rep.epochs) == 1 and rep.best_epoch == 0


def test_same_seed_bit_identical(corpus200, tmp_path):
    mc = ModelConfig(corpus200.n_items, d=8, l=4, variant="stamp")
    runs = [train(corpus200, mc, cfg_small(epochs=3, seed=4)) for _ in range(2)]
    assert runs[0][1].to_dict() == runs[1][1].to_dict()
    for name, t in runs[0][0].named():
        assert t.data.tobytes() == runs[1][0].tensors[name].data.tobytes()
    other = train(corpus200, mc, cfg_small(epochs=3, seed=5))
    assert other[1].to_dict() != runs[0][1].to_dict()


def test_best_epoch_selected_on_validation(corpus200):
    _, rep = train(corpus200, ModelConfig(corpus200.n_items, d=8, l=4), cfg_small(epochs=4))
    mrrs = [e.val_mrr for e in rep.epochs]
    assert rep.best_epoch == int(np.argmax(mrrs))


def test_non_finite_gradient_aborts_with_last_good(corpus200, monkeypatch):
    real = trainer_mod.Adam.step
    epochs_done = []

    def poisoned(self, lr):
        if epochs_done:  # first step of the second epoch
            self.params.tensors["W_0"].grad = np.full(self.params.W_0.shape, np.nan)
        return real(self, lr)

    monkeypatch.setattr(trainer_mod.Adam, "step", poisoned)
    with pytest.raises(TrainingError, match="W_0") as info:
        train(corpus200, ModelConfig(corpus200.n_items, d=8, l=4), cfg_small(),
              on_epoch=epochs_done.append)
    best = info.value.best_params
    assert best is not None
    assert all(np.isfinite(t.data).all() for _, t in best.named())
    assert len(info.value.report.epochs) == 1


def test_validation_split_is_latest_sessions():
    s = [[i, i] for i in range(20)]
    tr, va = split_validation(s, 0.1)
    assert va == s[-2:] and tr == s[:-2]


def test_report_json_excludes_wall_time(corpus200, tmp_path):
    _, rep = train(corpus200, ModelConfig(corpus200.n_items, d=8, l=4), cfg_small(epochs=2))
    rep.write_json(tmp_path / "r.json")
    rep.write_csv(tmp_path / "r.csv")
    assert "wall_time" not in (tmp_path / "r.json").read_text()
    assert (tmp_path / "r.csv").read_text().startswith("epoch,loss,val_recall,val_mrr,lr,best")
    assert len(rep.timings()) == 2


# checkpoints ---------------------------------------------------------------------

@pytest.fixture
def saved(tmp_path):
    params = init_params(ModelConfig(n_items=4, d=6, l=3, variant="sat"), 1)
    params.vocab = Vocabulary(["a", "b", "c", "d"])
    path = tmp_path / "m.sriem"
    save_checkpoint(params, path)
    return params, path


def test_checkpoint_round_trip(saved):
    params, path = saved
    back = load_checkpoint(path, params.vocab)
    assert back.config == params.config
    assert back.vocab.keys == params.vocab.keys
    for name, t in params.named():
        assert back.tensors[name].data.tobytes() == t.data.tobytes()


def test_truncated_checkpoint(saved):
    _, path = saved
    raw = path.read_bytes()
    for cut in (3, 8, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(path)


def test_trailing_bytes_and_bad_magic(saved):
    _, path = saved
    raw = path.read_bytes()
    path.write_bytes(raw + b"\0")
    with pytest.raises(IncompatibleCheckpointError, match="trailing"):
        load_checkpoint(path)
    path.write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(IncompatibleCheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_vocab_mismatch(saved):
    _, path = saved
    with pytest.raises(IncompatibleCheckpointError, match="vocabulary"):
        load_checkpoint(path, Vocabulary(["a", "b", "c", "e"]))
