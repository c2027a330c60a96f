"""Supervised and semi-supervised CDAAE training.

Each step alternates one discriminator update (ascent on the adversarial
objective, encoder codes detached) with one encoder/generator update on the
non-saturating adversarial surrogate plus reconstruction, supervised and
content-consistency terms. Batch indices and prior draws come from a generator
seeded by ``(seed, step)``, so a resumed run replays exactly.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import objectives as O
from .autodiff.optim import Adam
from .autodiff.tensor import Tensor, backward
from .datasets import DatasetPair, DomainBatch, semisup_split
from .nets import NetworkSet, PriorSpec, load_nets, save_nets
from .objectives import LossReport, LossWeights

log = logging.getLogger(__name__)

MODES = ("supervised", "semi-supervised")


@dataclass
class TrainConfig:
    mode: str = "supervised"
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 64
    steps: int = 1000
    lr: float = 2e-4
    lr_disc: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0
    width: float = 1.0
    num_classes: int = 10
    style_dim_a: int = 8
    style_dim_b: int = 8
    labeled_per_class: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec(self.num_classes, self.style_dim_a, self.style_dim_b)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.as_dict()
        return d


def sample_batch(data: DomainBatch, n: int, rng: np.random.Generator) -> DomainBatch:
    if len(data) == 0:
        return data
    idx = rng.choice(len(data), size=min(n, len(data)), replace=False)
    return data.take(np.sort(idx))


def _step_grads(params, loss: Tensor) -> None:
    for p in params:
        p.grad = None
    backward(loss, params)


class Trainer:
    """Owns the networks and both optimizers for a run."""

    def __init__(self, cfg: TrainConfig, nets: Optional[NetworkSet] = None):
        self.cfg = cfg
        self.nets = nets if nets is not None else NetworkSet(cfg.prior, cfg.width, cfg.seed)
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.eg_params = self.nets.encoder_parameters() + self.nets.generator_parameters()
        self.d_params = self.nets.discriminator_parameters()
        self.opt_eg = Adam(self.eg_params, cfg.lr, betas)
        self.opt_d = Adam(self.d_params, cfg.lr_disc, betas)
        self.step = 0
        # indices of labeled samples ever fed to the supervised loss, per domain
        self.sup_seen: dict[str, set[int]] = {"A": set(), "B": set()}
        self.sup_hook: Optional[Callable[[DomainBatch], None]] = None

    def step_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, step])

    def _record_sup(self, batch: DomainBatch) -> None:
        if batch.index is not None:
            self.sup_seen[batch.domain].update(int(i) for i in batch.index)
        if self.sup_hook is not None:
            self.sup_hook(batch)

    def _disc_step(self, loss_d: Tensor) -> None:
        _step_grads(self.d_params, -loss_d)
        self.opt_d.step()

    def _eg_step(self, loss: Tensor) -> None:
        _step_grads(self.eg_params, loss)
        for p in self.d_params:
            p.grad = None
        self.opt_eg.step()

    def train_step_supervised(self, a: DomainBatch, b: DomainBatch, rng: np.random.Generator) -> LossReport:
        """One alternating step with labels in both domains."""
        if a.labels is None or b.labels is None:
            raise ValueError("supervised step needs labels for every sample in both batches")
        nets, w = self.nets, self.cfg.weights
        prior = nets.prior
        n = len(a)
        prior_a = prior.sample_style("A", n, rng)
        prior_b = prior.sample_style("B", len(b), rng)
        prior_c = prior.sample_content(n, rng)
        style_b, style_a = prior.sample_style("B", n, rng), prior.sample_style("A", len(b), rng)

        fwd = O.PairForward(nets, a.images, b.images, style_b, style_a)
        enc_a, enc_b = fwd.enc_a, fwd.enc_b

        d_style = O.adv_style_loss(nets, enc_a, enc_b, prior_a, prior_b, w, detach_codes=True)
        d_content = O.adv_content_loss(nets, enc_a, enc_b, prior_c, w, detach_codes=True)
        self._disc_step(d_style + d_content)

        enc_adv = O.encoder_adv_surrogate(nets, enc_a, enc_b, w)
        rec = O.reconstruction_loss(nets, enc_a, enc_b, w)
        sup = O.supervised_loss(nets, enc_a, a.labels, enc_b, b.labels, w)
        self._record_sup(a)
        self._record_sup(b)
        cc = O.cc_supervised(nets, enc_a, a.labels, enc_b, b.labels, w)
        total = enc_adv + rec + sup + cc
        self._eg_step(total)

        return LossReport({
            "adv_style": d_style, "adv_content": d_content, "enc_adv": enc_adv,
            "rec": rec, "sup": sup, "cc_su": cc, "total_eg": total,
        })

    def train_step_semisup(
        self,
        la: DomainBatch,
        lb: DomainBatch,
        ua: DomainBatch,
        ub: DomainBatch,
        rng: np.random.Generator,
    ) -> LossReport:
        """One alternating step with a labeled and an unlabeled batch per domain."""
        if len(ua) == 0 and len(ub) == 0 and len(la) == 0 and len(lb) == 0:
            raise ValueError("semi-supervised step needs at least one nonempty batch")
        if len(ua) == 0 or len(ub) == 0:
            raise ValueError("semi-supervised step needs unlabeled batches for both domains")
        nets, w = self.nets, self.cfg.weights
        prior = nets.prior
        n = len(ua)
        prior_a = prior.sample_style("A", n, rng)
        prior_b = prior.sample_style("B", len(ub), rng)
        prior_c = prior.sample_content(n, rng)
        cc_styles = [prior.sample_style(d, m, rng) for d, m in (("B", len(ua)), ("A", len(ub)), ("B", len(la)), ("A", len(lb)))]

        fwd_u = O.PairForward(nets, ua.images, ub.images, cc_styles[0], cc_styles[1])
        enc_ua, enc_ub = fwd_u.enc_a, fwd_u.enc_b

        d_style = O.adv_style_loss(nets, enc_ua, enc_ub, prior_a, prior_b, w, detach_codes=True)
        d_content = O.adv_content_loss(nets, enc_ua, enc_ub, prior_c, w, detach_codes=True)
        self._disc_step(d_style + d_content)

        enc_adv = O.encoder_adv_surrogate(nets, enc_ua, enc_ub, w)
        rec = O.reconstruction_loss(nets, enc_ua, enc_ub, w)
        cc_un = O.cc_unsupervised(nets, enc_ua, enc_ub, w)
        terms = {"adv_style": d_style, "adv_content": d_content, "enc_adv": enc_adv, "rec": rec, "cc_un": cc_un}
        total = enc_adv + rec + cc_un
        if len(la) and len(lb):
            fwd_l = O.PairForward(nets, la.images, lb.images, cc_styles[2], cc_styles[3])
            enc_la, enc_lb = fwd_l.enc_a, fwd_l.enc_b
            sup = O.supervised_loss(nets, enc_la, la.labels, enc_lb, lb.labels, w)
            self._record_sup(la)
            self._record_sup(lb)
            cc_su = O.cc_supervised(nets, enc_la, la.labels, enc_lb, lb.labels, w)
            total = total + sup + cc_su
            terms.update(sup=sup, cc_su=cc_su)
        self._eg_step(total)
        terms["total_eg"] = total
        return LossReport(terms)

    # -- checkpoint state -------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for group, opt in (("eg", self.opt_eg), ("d", self.opt_d)):
            out.update({f"optim/{group}/{k}": v for k, v in opt.state_arrays().items()})
        return out

    def save(self, path, meta: Optional[dict] = None) -> Path:
        info = {
            "step": self.step,
            "optim_steps": {"eg": self.opt_eg.step_count, "d": self.opt_d.step_count},
            "config": self.cfg.as_dict(),
        }
        info.update(meta or {})
        return save_nets(path, self.nets, self.state_tensors(), info)

    @classmethod
    def from_checkpoint(cls, path, cfg: Optional[TrainConfig] = None) -> "Trainer":
        nets, tensors, meta = load_nets(path)
        if cfg is None:
            cfg = config_from_dict(meta["config"])
        trainer = cls(cfg, nets)
        trainer.step = int(meta["step"])
        for group, opt in (("eg", trainer.opt_eg), ("d", trainer.opt_d)):
            prefix = f"optim/{group}/"
            arrays = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            opt.load_state_arrays(arrays, int(meta["optim_steps"][group]))
        return trainer


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    return TrainConfig(**d)


@dataclass
class SemisupData:
    labeled_a: DomainBatch
    labeled_b: DomainBatch
    unlabeled_a: DomainBatch
    unlabeled_b: DomainBatch


def split_for_semisup(data: DatasetPair, per_class: int, seed: int) -> SemisupData:
    la, ua = semisup_split(data.train_a, per_class, seed, data.num_classes)
    lb, ub = semisup_split(data.train_b, per_class, seed + 1, data.num_classes)
    return SemisupData(la, lb, ua, ub)


def run_steps(trainer: Trainer, data: DatasetPair, until: int, on_step: Optional[Callable[[int, LossReport], None]] = None) -> list[LossReport]:
    """Advance ``trainer`` from its current step to ``until``."""
    cfg = trainer.cfg
    semi = split_for_semisup(data, cfg.labeled_per_class, cfg.seed) if cfg.mode == "semi-supervised" else None
    reports = []
    trainer.nets.train()
    while trainer.step < until:
        step = trainer.step + 1
        rng = trainer.step_rng(step)
        if semi is None:
            a = sample_batch(data.train_a, cfg.batch_size, rng)
            b = sample_batch(data.train_b, cfg.batch_size, rng)
            report = trainer.train_step_supervised(a, b, rng)
        else:
            la = sample_batch(semi.labeled_a, cfg.batch_size, rng)
            lb = sample_batch(semi.labeled_b, cfg.batch_size, rng)
            ua = sample_batch(semi.unlabeled_a, cfg.batch_size, rng)
            ub = sample_batch(semi.unlabeled_b, cfg.batch_size, rng)
            report = trainer.train_step_semisup(la, lb, ua, ub, rng)
        trainer.step = step
        reports.append(report)
        if on_step is not None:
            on_step(step, report)
    return reports


METRICS_HEADER = ("step", "term", "value")


def _check_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc


def _truncate_metrics(path: Path, keep_through: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    kept = [r for r in rows[1:] if int(r[0]) <= keep_through]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        w.writerows(kept)


def train_run(
    cfg: TrainConfig,
    data: DatasetPair,
    out_dir: os.PathLike | str,
    resume: Optional[os.PathLike | str] = None,
    stop_at: Optional[int] = None,
) -> Trainer:
    """Train to ``cfg.steps`` writing ``metrics.csv``, periodic checkpoints under
    ``checkpoints/`` and ``final.ckpt``. ``stop_at`` interrupts early (the run can
    be resumed from the latest checkpoint)."""
    out_dir = Path(out_dir)
    _check_writable(out_dir)
    metrics = out_dir / "metrics.csv"
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, cfg)
        _truncate_metrics(metrics, trainer.step)
        log.info("resumed from %s at step %d", resume, trainer.step)
    else:
        trainer = Trainer(cfg)
        with open(metrics, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_HEADER)

    until = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    with open(metrics, "a", newline="") as f:
        writer = csv.writer(f)

        def on_step(step: int, report: LossReport) -> None:
            writer.writerows(report.rows(step))
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                f.flush()
                trainer.save(out_dir / "checkpoints" / f"step-{step:07d}.ckpt")
            if step % 50 == 0:
                log.info("step %d %s", step, report)

        run_steps(trainer, data, until, on_step)
    if trainer.step >= cfg.steps:
        trainer.save(out_dir / "final.ckpt")
    return trainer
