import csv
from dataclasses import asdict

import numpy as np
import pytest

from cdaae import objectives as O
from cdaae.datasets import DomainBatch
from cdaae.objectives import LossWeights
from cdaae.trainer import (
    METRICS_HEADER,
    TrainConfig,
    Trainer,
    run_steps,
    sample_batch,
    split_for_semisup,
    train_run,
)

ZERO = LossWeights(**{k: 0.0 for k in asdict(LossWeights())})


def tiny_cfg(**kw) -> TrainConfig:
    base = dict(width=0.125, batch_size=8, steps=6, lr=1e-3, lr_disc=1e-3, seed=2)
    base.update(kw)
    return TrainConfig(**base)


def _params(nets):
    return [p.data.copy() for p in nets.parameters()]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(mode="unsupervised")


def test_zero_weights_leave_parameters_unchanged(tiny_pair):
    tr = Trainer(tiny_cfg(weights=ZERO))
    before = _params(tr.nets)
    run_steps(tr, tiny_pair, 2)
    for a, p in zip(before, tr.nets.parameters()):
        np.testing.assert_array_equal(a, p.data)


def test_supervised_step_requires_labels(tiny_pair):
    tr = Trainer(tiny_cfg())
    with pytest.raises(ValueError, match="labels"):
        tr.train_step_supervised(tiny_pair.train_a, tiny_pair.train_b.unlabeled(), np.random.default_rng(0))


def test_supervised_mode_never_evaluates_unsupervised_consistency(tiny_pair, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("unsupervised consistency evaluated")

    monkeypatch.setattr(O, "cc_unsupervised", boom)
    monkeypatch.setattr(O, "cc_mixed", boom)
    reports = run_steps(Trainer(tiny_cfg()), tiny_pair, 2)
    assert set(reports[0]) == {"adv_style", "adv_content", "enc_adv", "rec", "sup", "cc_su", "total_eg"}


def test_supervised_step_uses_adversarial_and_reconstruction_paths(tiny_pair, monkeypatch):
    calls = []
    for name in ("adv_style_loss", "adv_content_loss", "reconstruction_loss", "supervised_loss", "cc_supervised", "encoder_adv_surrogate"):
        orig = getattr(O, name)

        def wrap(*a, _orig=orig, _name=name, **k):
            calls.append(_name)
            return _orig(*a, **k)

        monkeypatch.setattr(O, name, wrap)
    run_steps(Trainer(tiny_cfg()), tiny_pair, 1)
    assert sorted(set(calls)) == sorted(["adv_style_loss", "adv_content_loss", "reconstruction_loss", "supervised_loss", "cc_supervised", "encoder_adv_surrogate"])


def test_alternating_schedule(tiny_pair, monkeypatch):
    tr = Trainer(tiny_cfg())
    seen = {}
    disc_step, eg_step = tr._disc_step, tr._eg_step

    def watch_disc(loss):
        eg = [p.data.copy() for p in tr.eg_params]
        disc_step(loss)
        seen["eg_frozen"] = all((a == p.data).all() for a, p in zip(eg, tr.eg_params))

    def watch_eg(loss):
        d = [p.data.copy() for p in tr.d_params]
        eg_step(loss)
        seen["d_frozen"] = all((a == p.data).all() for a, p in zip(d, tr.d_params))

    tr._disc_step, tr._eg_step = watch_disc, watch_eg
    d_before = [p.data.copy() for p in tr.d_params]
    run_steps(tr, tiny_pair, 1)
    assert seen == {"eg_frozen": True, "d_frozen": True}
    assert any((a != p.data).any() for a, p in zip(d_before, tr.d_params))


def test_semisup_step_terms_and_errors(tiny_pair):
    tr = Trainer(tiny_cfg(mode="semi-supervised", weights=LossWeights.semi_supervised(), labeled_per_class=1))
    rng = np.random.default_rng(0)
    semi = split_for_semisup(tiny_pair, 1, 0)
    rep = tr.train_step_semisup(semi.labeled_a, semi.labeled_b, sample_batch(semi.unlabeled_a, 8, rng), sample_batch(semi.unlabeled_b, 8, rng), rng)
    assert {"sup", "cc_su", "cc_un", "rec", "adv_content"} <= set(rep)
    empty_a, empty_b = semi.labeled_a.take(np.arange(0)), semi.labeled_b.take(np.arange(0))
    rep = tr.train_step_semisup(empty_a, empty_b, sample_batch(semi.unlabeled_a, 8, rng), sample_batch(semi.unlabeled_b, 8, rng), rng)
    assert "sup" not in rep and "cc_su" not in rep and "cc_un" in rep
    with pytest.raises(ValueError):
        tr.train_step_semisup(empty_a, empty_b, semi.unlabeled_a.take(np.arange(0)), semi.unlabeled_b.take(np.arange(0)), rng)


def test_semisup_reproducible_reports(tiny_pair):
    def run():
        tr = Trainer(tiny_cfg(mode="semi-supervised", weights=LossWeights.semi_supervised(), labeled_per_class=2))
        return [r.rows(i) for i, r in enumerate(run_steps(tr, tiny_pair, 20))]

    assert run() == run()


def test_semisup_label_economy(tiny_pair):
    cfg = tiny_cfg(mode="semi-supervised", weights=LossWeights.semi_supervised(), labeled_per_class=2, batch_size=4)
    tr = Trainer(cfg)
    fed = []
    tr.sup_hook = lambda batch: fed.append((batch.domain, batch.index.copy()))
    run_steps(tr, tiny_pair, 25)
    semi = split_for_semisup(tiny_pair, 2, cfg.seed)
    allowed = {"A": set(semi.labeled_a.index.tolist()), "B": set(semi.labeled_b.index.tolist())}
    for domain, idx in fed:
        assert set(idx.tolist()) <= allowed[domain]
    assert len(tr.sup_seen["A"]) == len(tr.sup_seen["B"]) == 2 * tiny_pair.num_classes
    assert tr.sup_seen["A"] == allowed["A"]


def test_train_run_metrics_and_checkpoint(tiny_pair, tmp_path):
    cfg = tiny_cfg(steps=4, checkpoint_every=2)
    tr = train_run(cfg, tiny_pair, tmp_path)
    with open(tmp_path / "metrics.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == METRICS_HEADER
    terms = {"adv_style", "adv_content", "enc_adv", "rec", "sup", "cc_su", "total_eg"}
    for step in range(1, 5):
        assert {r[1] for r in rows[1:] if r[0] == str(step)} == terms
    assert len(rows) == 1 + 4 * len(terms)
    assert (tmp_path / "checkpoints" / "step-0000002.ckpt").exists()
    loaded = Trainer.from_checkpoint(tmp_path / "final.ckpt")
    assert loaded.step == 4
    for a, b in zip(tr.nets.state_dict().values(), loaded.nets.state_dict().values()):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(tr.state_tensors().values(), loaded.state_tensors().values()):
        assert a.tobytes() == b.tobytes()
    assert loaded.opt_eg.step_count == tr.opt_eg.step_count == 4


def test_resume_matches_uninterrupted(tiny_pair, tmp_path):
    cfg = tiny_cfg(steps=8, checkpoint_every=5)
    full = train_run(cfg, tiny_pair, tmp_path / "full")
    train_run(cfg, tiny_pair, tmp_path / "cut", stop_at=6)
    resumed = train_run(cfg, tiny_pair, tmp_path / "cut", resume=tmp_path / "cut" / "checkpoints" / "step-0000005.ckpt")
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "cut" / "metrics.csv").read_bytes()
    for a, b in zip(full.nets.state_dict().values(), resumed.nets.state_dict().values()):
        assert a.tobytes() == b.tobytes()


def test_unwritable_output_fails_before_training(tiny_pair, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="not writable"):
        train_run(tiny_cfg(), tiny_pair, blocker / "out")


def test_sample_batch_without_replacement():
    data = DomainBatch(np.zeros((5, 3, 32, 32), np.float32), np.arange(5), "A", np.arange(5))
    b = sample_batch(data, 10, np.random.default_rng(0))
    assert sorted(b.index.tolist()) == [0, 1, 2, 3, 4]


@pytest.mark.slow
def test_reconstruction_falls_in_short_run():
    from cdaae.datasets import synth_pair

    data = synth_pair("digits", 20, seed=1, n_test_per_class=2)
    cfg = tiny_cfg(weights=LossWeights(gamma2=2.0, lambda2=5.0), batch_size=16, width=0.25)
    reports = run_steps(Trainer(cfg), data, 200)
    rec = np.array([r["rec"] for r in reports])
    assert np.isfinite([v for r in reports for v in r.values.values()]).all()
    assert rec[-10:].mean() <= 0.5 * rec[:10].mean()
