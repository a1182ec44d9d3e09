"""Margin training loop, Adam, clipping, and the checkpoint wire format."""

import numpy as np
import pytest

from grail.autodiff import constant, parameter, sum_all
from grail.kg import from_parts, load_triples
from grail.model import GnnConfig
from grail.subgraph import feature_dim
from grail.train import (
    MAGIC,
    AdamState,
    Checkpoint,
    TrainConfig,
    adam_step,
    clip_gradients,
    gnn_config_from_checkpoint,
    hinge_loss,
    load_checkpoint,
    relations_from_checkpoint,
    save_checkpoint,
    scorer_from_checkpoint,
    train,
    write_loss_log,
)

from oracles import adam_reference, random_kg


def toy_setup(num_entities=12, num_edges=50, seed=0, **tkw):
    rng = np.random.default_rng(seed)
    g = random_kg(rng, num_entities, 2, num_edges)
    valid = g.triples[:3]
    tdef = dict(margin=2.0, lr=0.05, l2=1e-4, clip_norm=5.0, epochs=2,
                eval_every=1, batch_size=8, hops=2, seed=seed)
    tdef.update(tkw)
    tcfg = TrainConfig(**tdef)
    gcfg = GnnConfig(num_layers=2, hidden_dim=4, num_bases=2,
                     edge_dropout_rate=0.2, input_dim=feature_dim(tcfg.hops))
    return g, valid, tcfg, gcfg


def test_train_config_validation():
    with pytest.raises(ValueError, match="margin"):
        TrainConfig(margin=0.0)
    with pytest.raises(ValueError, match="l2"):
        TrainConfig(l2=-1.0)
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="hops"):
        TrainConfig(hops=0)
    with pytest.raises(ValueError, match="labeling"):
        TrainConfig(labeling="nope")
    with pytest.raises(ValueError, match="extraction"):
        TrainConfig(extraction_mode="nope")


def test_hinge_loss_values():
    def val(pos, neg, margin):
        return hinge_loss(constant([[pos]]), constant([[neg]]), margin).item()

    assert val(5.0, 1.0, 2.0) == 0.0       # pos clears neg by more than the margin
    assert val(1.0, 5.0, 2.0) == 6.0       # neg - pos + margin
    assert val(3.0, 1.0, 2.0) == 0.0       # exactly at the margin
    assert val(3.0, 2.0, 2.0) == 1.0


def test_hinge_loss_gradient_direction():
    pos = parameter(np.array([[1.0]]))
    neg = parameter(np.array([[5.0]]))
    sum_all(hinge_loss(pos, neg, 2.0)).backward()
    assert pos.grad[0, 0] == -1.0 and neg.grad[0, 0] == 1.0


def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal(12)
    theta0 = 0.7
    p = parameter(np.array([[theta0]]))
    state = AdamState()
    got = []
    for g in grads:
        p.zero_grad()
        p.grad[0, 0] = g
        adam_step({"p": p}, state, lr=0.02, l2=0.03)
        got.append(p.data[0, 0])
    want = adam_reference(grads, lr=0.02, theta0=theta0, l2=0.03)
    assert np.allclose(got, want, atol=1e-14)
    assert state.t == 12


def test_adam_rejects_nonfinite_grad():
    p = parameter(np.array([[1.0]]))
    p.grad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite gradient"):
        adam_step({"p": p}, AdamState(), lr=0.1)


def test_clip_gradients():
    a = parameter(np.zeros((1, 2)))
    b = parameter(np.zeros((1, 1)))
    a.grad[:] = [[3.0, 0.0]]
    b.grad[:] = [[4.0]]
    params = {"a": a, "b": b}
    norm = clip_gradients(params, max_norm=2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(p.grad**2)) for p in params.values()))
    assert total == pytest.approx(2.5)
    # direction preserved
    assert a.grad[0, 0] / b.grad[0, 0] == pytest.approx(3.0 / 4.0)
    # under the cap: untouched
    a.grad[:] = [[0.1, 0.0]]
    b.grad[:] = [[0.0]]
    norm = clip_gradients(params, max_norm=2.5)
    assert norm == pytest.approx(0.1)
    assert a.grad[0, 0] == 0.1
    with pytest.raises(ValueError, match="max_norm"):
        clip_gradients(params, max_norm=0.0)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "layers.0.w": rng.standard_normal((3, 4)),
        "bias": rng.standard_normal(4),
        "adam.t": np.array(7.0),
    }
    ck = Checkpoint(config={"hops": "2", "note": "x=y"},
                    tensors=tensors, epoch=7, val_metric=0.5)
    path = str(tmp_path / "ck.bin")
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    assert back.epoch == 7 and back.val_metric == 0.5
    assert back.config["hops"] == "2" and back.config["note"] == "x=y"
    assert set(back.tensors) == set(tensors)
    for k in tensors:
        assert back.tensors[k].shape == tensors[k].shape
        assert np.array_equal(back.tensors[k], tensors[k])
    # rank-0 stays rank-0
    assert back.tensors["adam.t"].shape == ()


def test_checkpoint_bytes_deterministic(tmp_path):
    ck = Checkpoint(config={"a": "1"}, tensors={"w": np.ones((2, 2))},
                    epoch=1, val_metric=0.25)
    p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_checkpoint(ck, p1)
    save_checkpoint(ck, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_corruption_errors(tmp_path):
    ck = Checkpoint(config={"a": "1"}, tensors={"w": np.ones((2, 2))},
                    epoch=1, val_metric=0.0)
    path = str(tmp_path / "ck.bin")
    save_checkpoint(ck, path)
    raw = open(path, "rb").read()

    bad_magic = str(tmp_path / "m.bin")
    open(bad_magic, "wb").write(b"NOTMAGIC" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(bad_magic)

    trunc = str(tmp_path / "t.bin")
    open(trunc, "wb").write(raw[:-5])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(trunc)

    trail = str(tmp_path / "x.bin")
    open(trail, "wb").write(raw + b"junk")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(trail)


def test_checkpoint_rejects_duplicate_tensor(tmp_path):
    import struct

    name = b"w"
    arr = np.ones(1)
    rec = struct.pack("<H", len(name)) + name + bytes([1]) + struct.pack("<I", 1) + arr.tobytes()
    blob = b"a=1"
    raw = MAGIC + struct.pack("<I", 2) + rec + rec + struct.pack("<I", len(blob)) + blob
    path = str(tmp_path / "dup.bin")
    open(path, "wb").write(raw)
    with pytest.raises(ValueError, match="duplicate tensor"):
        load_checkpoint(path)


def test_training_loss_decreases():
    g, valid, tcfg, gcfg = toy_setup(epochs=6, seed=3)
    best, final, history = train(g, valid, tcfg, gcfg)
    assert len(history) == 6
    first, last = history[0]["loss"], history[-1]["loss"]
    assert last < first
    assert final.epoch == 6
    assert 0.0 <= best.val_metric <= 1.0


def test_best_checkpoint_tracks_max_val(tmp_path):
    g, valid, tcfg, gcfg = toy_setup(epochs=4, seed=4)
    best, final, history = train(g, valid, tcfg, gcfg)
    vals = [h["val_auc_pr"] for h in history if h["val_auc_pr"] is not None]
    assert best.val_metric == max(vals)
    assert best.epoch == history[int(np.argmax(vals))]["epoch"]


def test_train_deterministic():
    g, valid, tcfg, gcfg = toy_setup(epochs=2, seed=5)
    b1, f1, h1 = train(g, valid, tcfg, gcfg)
    b2, f2, h2 = train(g, valid, tcfg, gcfg)
    assert h1 == h2
    for k, arr in f1.tensors.items():
        assert np.array_equal(arr, f2.tensors[k])


def test_resume_bit_exact(tmp_path):
    g, valid, tcfg, gcfg = toy_setup(epochs=4, seed=6)
    _, straight, hs = train(g, valid, tcfg, gcfg)

    half_cfg = TrainConfig(**{**tcfg.__dict__, "epochs": 2})
    _, half, _ = train(g, valid, half_cfg, gcfg)
    path = str(tmp_path / "half.bin")
    save_checkpoint(half, path)
    resumed_start = load_checkpoint(path)
    _, resumed, hr = train(g, valid, tcfg, gcfg, start=resumed_start)

    assert set(straight.tensors) == set(resumed.tensors)
    for k, arr in straight.tensors.items():
        assert np.array_equal(arr, resumed.tensors[k]), k
    assert [h["loss"] for h in hs[2:]] == [h["loss"] for h in hr]


def test_resume_past_end_rejected():
    g, valid, tcfg, gcfg = toy_setup(epochs=2, seed=7)
    _, final, _ = train(g, valid, tcfg, gcfg)
    with pytest.raises(ValueError, match="already at epoch"):
        train(g, valid, tcfg, gcfg, start=final)


def test_train_input_validation():
    g, valid, tcfg, gcfg = toy_setup()
    empty = from_parts(["a", "b"], ["r"], [(0, 0, 1)])
    with pytest.raises(ValueError, match="validation set is empty"):
        train(g, [], tcfg, gcfg)
    with pytest.raises(ValueError, match="input_dim"):
        train(g, valid, tcfg, GnnConfig(num_layers=2, hidden_dim=4, num_bases=2,
                                        edge_dropout_rate=0.0, input_dim=3))
    loops = from_parts(["a", "b"], ["r"], [(0, 0, 0), (1, 0, 1)])
    with pytest.raises(ValueError, match="non-self-loop"):
        train(loops, [(0, 0, 0)], tcfg, gcfg)
    with pytest.raises(ValueError, match="no triples"):
        train(from_parts(["a"], ["r"], []), valid, tcfg, gcfg)


def test_checkpoint_config_reconstruction():
    g, valid, tcfg, gcfg = toy_setup(epochs=1, seed=8)
    _, final, _ = train(g, valid, tcfg, gcfg)
    assert gnn_config_from_checkpoint(final) == gcfg
    assert relations_from_checkpoint(final) == g.relation_names
    assert int(final.config["hops"]) == tcfg.hops


def test_scorer_from_checkpoint_strips_adam(tmp_path):
    g, valid, tcfg, gcfg = toy_setup(epochs=1, seed=9)
    _, final, _ = train(g, valid, tcfg, gcfg)
    assert any(k.startswith("adam.") for k in final.tensors)
    scorer = scorer_from_checkpoint(final)
    h, r, t = g.triples[0]
    score = scorer(g, h, r, t)
    assert np.isfinite(score)
    # evaluation path ignores dropout: scoring twice is identical
    assert scorer(g, h, r, t) == score


def test_loss_log_roundtrip(tmp_path):
    history = [
        {"epoch": 1, "loss": 0.5, "val_auc_pr": 0.75},
        {"epoch": 2, "loss": 0.25, "val_auc_pr": None},
    ]
    path = str(tmp_path / "loss.csv")
    write_loss_log(history, path)
    lines = open(path).read().splitlines()
    assert lines[0] == "epoch,loss,val_auc_pr"
    assert lines[1] == "1,0.5,0.75"
    assert lines[2] == "2,0.25,"
