import numpy as np
import pytest

from ssmdet import pipeline
from ssmdet.data import SplitSpec, gen_synthetic, load_dataset, split
from ssmdet.pipeline import Config

TINY = dict(image_size=16, widths=(2, 2, 2, 2), d_state=2, clf_base_width=2,
            epochs_ae=2, epochs_clf=2, lr=1e-3, batch=4)


@pytest.fixture(scope="module")
def tiny_splits(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    gen_synthetic(root, seed=0, n_per_class=8, size=16)
    ds = load_dataset(root, image_size=(16, 16))
    return split(ds, SplitSpec(seed=0))


def test_config_file_parsing(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("image_size = 32\nwidths = 4,4,4,4\nlr = 0.01\n"
                 "target_class = target  # trailing comment\nseed = 9\n")
    cfg = Config.from_file(p)
    assert cfg.image_size == 32
    assert cfg.widths == (4, 4, 4, 4)
    assert cfg.lr == 0.01
    assert cfg.seed == 9


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("momentum = 0.9\n")
    with pytest.raises(ValueError, match="momentum"):
        Config.from_file(p)


def test_paper_profile_settings():
    cfg = Config(profile="paper")
    assert cfg.epochs_ae == 110 and cfg.epochs_clf == 110
    assert cfg.lr == 1.5e-5


def test_phase1_curve_shape_and_progress(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**{**TINY, "widths": (4, 4, 8, 8), "epochs_ae": 5})
    _, curve = pipeline.train_phase1(tr, va, cfg)
    assert len(curve) == 5
    assert [row[0] for row in curve] == [1, 2, 3, 4, 5]
    assert all(np.isfinite(row[1]) for row in curve)
    assert curve[-1][2] < curve[0][2]  # validation loss decreases


def test_phase1_deterministic(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**TINY)
    _, c1 = pipeline.train_phase1(tr, va, cfg)
    _, c2 = pipeline.train_phase1(tr, va, cfg)
    assert c1 == c2  # bit-identical in f64


def test_phase1_requires_target_class(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**{**TINY, "target_class": "nonesuch"})
    with pytest.raises(ValueError, match="nonesuch"):
        pipeline.train_phase1(tr, va, cfg)


def test_phase2_freezes_ae_and_curve_lengths(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**TINY)
    ae, _ = pipeline.train_phase1(tr, va, cfg)
    before = {k: p.data.copy() for k, p in ae.named_params().items()}
    _, loss_curve, acc_curve = pipeline.train_phase2(ae, tr, va, cfg)
    assert len(loss_curve) == cfg.epochs_clf and len(acc_curve) == cfg.epochs_clf
    for k, p in ae.named_params().items():
        assert np.array_equal(p.data, before[k]), k


def test_evaluate_composition_and_empty_set(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**TINY)
    ae, _ = pipeline.train_phase1(tr, va, cfg)
    clf, _, _ = pipeline.train_phase2(ae, tr, va, cfg)
    cm, report = pipeline.evaluate(ae, clf, va, cfg)
    from ssmdet.metrics import kpis
    assert report.accuracy == kpis(cm).accuracy
    assert cm.total == len(va)
    with pytest.raises(ValueError, match="empty"):
        pipeline.evaluate(ae, clf, va.subset([]), cfg)


def test_memorized_toy_set_gives_diagonal_confusion(tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**{**TINY, "clf_base_width": 4, "epochs_ae": 10,
                    "epochs_clf": 60, "lr": 3e-3})
    ae, _ = pipeline.train_phase1(tr, va, cfg)
    clf, _, acc_curve = pipeline.train_phase2(ae, tr, tr, cfg)
    cm, _ = pipeline.evaluate(ae, clf, tr, cfg)
    assert np.array_equal(cm.counts, np.diag(np.bincount(tr.labels)))


def test_nan_loss_aborts():
    with pytest.raises(FloatingPointError, match="diverged"):
        pipeline._check_finite(float("nan"), "test")


def test_curve_csv_roundtrip(tmp_path):
    path = tmp_path / "curve.csv"
    curve = [(1, 0.5, 0.25), (2, 1 / 3, 0.125)]
    pipeline.write_curve_csv(path, curve)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train,val"
    assert len(lines) == 3
    # float repr round-trips exactly
    e, t, v = lines[2].split(",")
    assert float(t) == 1 / 3


def test_model_save_load_roundtrip(tmp_path, tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**TINY)
    ae, curve = pipeline.train_phase1(tr, va, cfg)
    p1 = tmp_path / "ae.ckpt"
    pipeline.save_model(p1, ae, cfg, "ae", cfg.epochs_ae, curve[-1][1])
    loaded, cfg2 = pipeline.load_ae(p1)
    for k, p in loaded.named_params().items():
        assert np.array_equal(p.data, ae.named_params()[k].data)
    # save -> load -> save is byte-identical
    p2 = tmp_path / "ae2.ckpt"
    pipeline.save_model(p2, loaded, cfg2, "ae", cfg.epochs_ae, curve[-1][1])
    assert p1.read_bytes() == p2.read_bytes()


def test_load_ae_rejects_wrong_kind(tmp_path, tiny_splits):
    tr, va = tiny_splits
    cfg = Config(**TINY)
    ae, _ = pipeline.train_phase1(tr, va, cfg)
    path = tmp_path / "x.ckpt"
    pipeline.save_model(path, ae, cfg, "clf", 1, 0.0)
    with pytest.raises(Exception, match="kind"):
        pipeline.load_ae(path)
