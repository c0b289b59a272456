import numpy as np
import pytest

from crossview import autodiff as ad
from crossview import fusion as fl
from crossview import train as tr
from crossview.autodiff import Tensor
from crossview.data import MultimodalDataset, synth_generate
from crossview.graph import Graph, add_self_loops
from crossview.train import DivergenceError, TrainConfig, run_cv, train_one_fold

from conftest import grad_check

FAST = dict(epochs=15, backbone="identity", hidden=6, out_dim=5, fuse_dim=4, knn_k=3, folds=3)


def small(n=24, seed=0, **kw):
    d = synth_generate(n=n, image_size=8, seed=seed, **kw)
    # precomputed embeddings stand in for images and keep these tests quick
    emb = d.images.reshape(n, -1)[:, ::8].astype(np.float64)
    return MultimodalDataset(d.clinical, d.labels, d.ids, embeddings=emb)


def rand_looped(rng, n, p=0.5):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return add_self_loops(Graph(a + a.T))


@pytest.mark.parametrize("normalize", [True, False])
@pytest.mark.parametrize("seed", range(20))
def test_composite_loss_gradient(seed, normalize):
    """End-to-end objective on six nodes against central differences."""
    rng = np.random.default_rng(seed)
    n = 6
    cfg = TrainConfig(hidden=3, out_dim=3, fuse_dim=3, heads=2, normalize_similarity=normalize, seed=seed)
    gnn = "gat" if seed % 2 == 0 else "gcn"
    cfg = TrainConfig(**{**cfg.to_dict(), "gnn": gnn})
    Xm, Xf = rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
    gm, gf = rand_looped(rng, n), rand_looped(rng, n)
    state = tr.init_state(3, 4, 2, cfg, seed)
    Y = np.eye(2)[rng.integers(0, 2, n)]
    train = np.array([1, 1, 0, 1, 1, 0], dtype=bool)
    Y_train = Y * train[:, None]
    # keep the hinge away from its kink so the difference quotient is smooth
    S = tr.forward(state, gm, gf, Xm, Xf, normalize).S.data
    neither = (1 - gm.adjacency) * (1 - gf.adjacency) > 0
    while np.any(np.abs((1 - S)[neither] - state.fusion.delta) < 1e-3):
        state.fusion.delta += 0.01

    def f():
        fw = tr.forward(state, gm, gf, Xm, Xf, normalize)
        return tr.objective(fw, state, gm, gf, Y_train, train, cfg)["total"]

    assert grad_check(f, state.parameters()) < 1e-3


def test_beta_zero_history_is_ce_plus_diag():
    r = run_cv(small(), TrainConfig(**FAST, beta=0.0))
    for h in r.folds[0].loss_history:
        assert h["total"] == pytest.approx(h["L_m"] + h["L_f"] + h["L_diag"], rel=1e-12)
        assert h["L_pos"] != 0.0


def test_history_length_and_columns():
    r = run_cv(small(), TrainConfig(**FAST))
    for rep in r.folds:
        assert len(rep.loss_history) == FAST["epochs"]
        assert tuple(rep.loss_history[0]) == tuple(tr.LOSS_COLUMNS)


def test_zero_lr_freezes_parameters():
    data = small()
    cfg = TrainConfig(**{**FAST, "lr": 0.0})
    masks = tr.split(data, cfg)[0]
    res = train_one_fold(data, cfg, masks)
    ref = tr.init_state(data.embeddings.shape[1], 12, 2, cfg, cfg.seed)
    for a, b in zip(res.state.parameters(), ref.parameters()):
        assert np.array_equal(a.data, b.data)
    totals = [h["total"] for h in res.report.loss_history]
    assert all(t == totals[0] for t in totals)


def test_test_labels_never_reach_training():
    data = small(n=30)
    cfg = TrainConfig(**FAST)
    train, test = tr.split(data, cfg)[1]
    a = train_one_fold(data, cfg, (train, test), fold_index=1)
    flipped = data.labels.copy()
    flipped[test] = flipped[test][:, ::-1]
    other = MultimodalDataset(data.clinical, flipped, data.ids, embeddings=data.embeddings)
    b = train_one_fold(other, cfg, (train, test), fold_index=1)
    assert a.report.loss_history == b.report.loss_history
    assert np.array_equal(a.probabilities, b.probabilities)


def test_unmasked_mode_does_read_test_labels():
    data = small(n=30)
    cfg = TrainConfig(**FAST, mask_contrastive_labels=False)
    train, test = tr.split(data, cfg)[0]
    a = train_one_fold(data, cfg, (train, test))
    flipped = data.labels.copy()
    flipped[test] = flipped[test][:, ::-1]
    b = train_one_fold(MultimodalDataset(data.clinical, flipped, data.ids, embeddings=data.embeddings), cfg, (train, test))
    assert a.report.loss_history != b.report.loss_history


def test_run_cv_deterministic():
    data = small()
    a = run_cv(data, TrainConfig(**FAST, seed=3))
    b = run_cv(data, TrainConfig(**FAST, seed=3))
    assert a.to_dict() == b.to_dict()
    assert [r.loss_history for r in a.folds] == [r.loss_history for r in b.folds]


def test_pooled_covers_every_node_once():
    data = small()
    r = run_cv(data, TrainConfig(**FAST))
    assert np.array_equal(r.test_index, np.arange(data.n))
    assert r.pooled.n_evaluated == data.n
    assert len(r.folds) == 3


def test_fold_auc_aggregation():
    rep = tr.evaluate(np.array([[0.9, 0.1], [0.2, 0.8]]), [0, 1])
    cv = tr.CVResult(rep, [rep, rep], [0.9, 0.95], np.arange(2), np.zeros((2, 2)))
    assert cv.mean_auc == pytest.approx(0.925)
    same = tr.CVResult(rep, [rep, rep], [0.8, 0.8], np.arange(2), np.zeros((2, 2)))
    assert same.mean_auc == 0.8 and same.mean_accuracy == rep.accuracy


def test_fixed_protocol():
    data = small(n=40)
    r = run_cv(data, TrainConfig(**{**FAST, "protocol": "fixed", "test_fraction": 0.25}))
    assert len(r.folds) == 1 and r.pooled.n_evaluated == 10


def test_gcn_and_conv_backbone_run():
    d = synth_generate(n=20, image_size=12, seed=1)
    r = run_cv(d, TrainConfig(**{**FAST, "gnn": "gcn", "backbone": "conv", "ae_epochs": 3, "folds": 2}))
    assert r.encoder is not None and r.pooled.n_evaluated == 20


def test_pairs_scale_divides_contrastive_terms():
    data = small()
    a = run_cv(data, TrainConfig(**{**FAST, "epochs": 1}))
    b = run_cv(data, TrainConfig(**{**FAST, "epochs": 1, "contrastive_scale": "pairs"}))
    n = data.n
    ha, hb = a.folds[0].loss_history[0], b.folds[0].loss_history[0]
    assert hb["L_pos"] == pytest.approx(ha["L_pos"] / n**2)
    assert hb["L_neg"] == pytest.approx(ha["L_neg"] / n**2)


def test_divergence_names_epoch_and_component(monkeypatch):
    calls = {"n": 0}
    real = fl.diag_loss

    def flaky(S, A):
        calls["n"] += 1
        out = real(S, A)
        return out * float("nan") if calls["n"] == 4 else out

    monkeypatch.setattr(fl, "diag_loss", flaky)
    with pytest.raises(DivergenceError) as e:
        run_cv(small(), TrainConfig(**FAST))
    assert e.value.epoch == 3 and e.value.component == "L_diag" and e.value.fold == 0
    assert "epoch 3" in str(e.value)


@pytest.mark.parametrize(
    "kw",
    [
        {"epochs": 0},
        {"folds": 1},
        {"gnn": "sage"},
        {"backbone": "resnet"},
        {"beta": 1.2},
        {"delta": -0.1},
        {"diag_reference": "x"},
        {"metric": "manhattan"},
        {"contrastive_scale": "mean"},
        {"protocol": "loo"},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_similarity_gap():
    S = np.array([[1, 0.5, -0.2], [0.5, 1, 0.0], [-0.2, 0.0, 1]])
    same, cross = tr.similarity_gap(S, np.array([0, 0, 1]))
    assert same == 0.5 and cross == pytest.approx(-0.1)


@pytest.mark.slow
def test_final_loss_below_initial_majority():
    data = small(n=60, separation=3.0)
    wins = 0
    for seed in range(10):
        r = run_cv(data, TrainConfig(**{**FAST, "epochs": 60, "folds": 2, "seed": seed}))
        h = r.folds[0].loss_history
        wins += h[-1]["total"] < h[0]["total"] + 0.05 * abs(h[0]["total"])
    assert wins >= 6
