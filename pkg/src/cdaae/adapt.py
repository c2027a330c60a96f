"""Domain adaptation by confidence-thresholded pseudo-labeling.

Phase 1 fits the content classifier (trunk and content head only) to the
labeled source. Phase 2 repeats epochs of: rebuild the pseudo-labeled target
set T' at threshold t, then for each step run the adversarial/reconstruction
/mixed-consistency update followed by a supervised update on source plus T'.
The boosted variant raises t every epoch along a saturating exponential.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import objectives as O
from .autodiff.optim import Adam
from .autodiff.tensor import backward
from .datasets import DomainBatch
from .nets import NetworkSet
from .objectives import LossReport, LossWeights
from .trainer import TrainConfig, Trainer, sample_batch

TRACE_HEADER = ("epoch", "t", "pseudo_labeled", "target_accuracy")


def _adapt_train_config() -> TrainConfig:
    return TrainConfig(mode="semi-supervised", weights=LossWeights.semi_supervised())


@dataclass
class AdaptConfig:
    t_init: float = 0.85
    w: float = 10000.0
    pretrain_steps: int = 300
    epochs: int = 10
    boosted: bool = False
    train: TrainConfig = field(default_factory=_adapt_train_config)

    def __post_init__(self):
        if not 0.0 <= self.t_init <= 1.0:
            raise ValueError(f"t_init must lie in [0, 1], got {self.t_init}")
        if not (math.isfinite(self.w) and self.w > 0):
            raise ValueError(f"w must be finite and positive, got {self.w}")
        if self.pretrain_steps < 0 or self.epochs < 0:
            raise ValueError("pretrain_steps and epochs must be >= 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.as_dict()
        return d


def threshold_schedule(t_init: float, w: float, i: float) -> float:
    """t_init + (1 - t_init)(1 - exp(-i / w))."""
    if i < 0:
        raise ValueError(f"epoch index must be >= 0, got {i}")
    return t_init + (1.0 - t_init) * -math.expm1(-i / w)


@dataclass
class PseudoLabelSet:
    """Target samples whose top class probability exceeds ``threshold``."""

    index: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray
    threshold: float

    def __len__(self) -> int:
        return len(self.index)

    def batch(self, target: DomainBatch) -> DomainBatch:
        return DomainBatch(target.images[self.index], self.labels, target.domain, self.index)


def select_confident(probs: np.ndarray, t: float) -> PseudoLabelSet:
    probs = np.asarray(probs)
    conf = probs.max(axis=1)
    keep = np.flatnonzero(conf > t)
    # argmax returns the lowest index among ties
    return PseudoLabelSet(keep, probs[keep].argmax(axis=1), conf[keep], float(t))


def pseudo_label(nets: NetworkSet, target: DomainBatch, t: float) -> PseudoLabelSet:
    return select_confident(nets.predict(target.images), t)


def target_accuracy(nets: NetworkSet, test: DomainBatch) -> float:
    if test.labels is None:
        raise ValueError("target accuracy needs labeled test images")
    return float((nets.predict(test.images).argmax(axis=1) == test.labels).mean())


@dataclass
class TraceRow:
    epoch: int
    t: float
    pseudo_labeled: int
    target_accuracy: float


@dataclass
class AdaptResult:
    nets: NetworkSet
    baseline_accuracy: float
    trace: list[TraceRow]
    trainer: Trainer

    @property
    def final_accuracy(self) -> float:
        return self.trace[-1].target_accuracy if self.trace else self.baseline_accuracy

    def write_trace(self, path: os.PathLike | str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(TRACE_HEADER)
            for r in self.trace:
                w.writerow((r.epoch, repr(r.t), r.pseudo_labeled, repr(r.target_accuracy)))


class Adapter:
    """Holds the networks, the joint trainer and the supervised-only optimizer."""

    def __init__(self, cfg: AdaptConfig, nets: Optional[NetworkSet] = None):
        self.cfg = cfg
        tc = cfg.train
        self.trainer = Trainer(tc, nets)
        self.nets = self.trainer.nets
        self.opt_sup = Adam(self.nets.classifier_parameters(), tc.lr, (tc.adam_beta1, tc.adam_beta2))
        # every loss the joint step evaluates, for auditing
        self.terms_seen: set[str] = set()

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.train.seed, *key])

    def _sup_step(self, source: DomainBatch, pseudo: Optional[DomainBatch]) -> float:
        """lambda1 on source labels plus lambda2 on pseudo-labels, one joint trunk pass."""
        w = self.cfg.train.weights
        if pseudo is not None and len(pseudo):
            ea, eb = O.content_pair(self.nets, source.images, pseudo.images)
            loss = O.supervised_loss(self.nets, ea, source.labels, eb, pseudo.labels, w)
        else:
            loss = O.supervised_loss(self.nets, source.images, source.labels, None, None, w)
        self.opt_sup.zero_grad()
        backward(loss, self.opt_sup.params)
        self.opt_sup.step()
        return loss.item()

    def pretrain(self, source: DomainBatch) -> None:
        """Supervised fit of the classifier path on the source domain."""
        self.nets.train()
        for step in range(self.cfg.pretrain_steps):
            batch = sample_batch(source, self.cfg.train.batch_size, self.rng(1, step))
            self._sup_step(batch, None)

    def joint_step(self, source: DomainBatch, target: DomainBatch, rng: np.random.Generator) -> LossReport:
        tr, nets, w = self.trainer, self.nets, self.cfg.train.weights
        prior = nets.prior
        prior_a = prior.sample_style("A", len(source), rng)
        prior_b = prior.sample_style("B", len(target), rng)
        prior_c = prior.sample_content(len(source), rng)
        fwd = O.PairForward(nets, source.images, target.images, prior.sample_style("B", len(source), rng), prior.sample_style("A", len(target), rng))
        ea, eb = fwd.enc_a, fwd.enc_b

        d_style = O.adv_style_loss(nets, ea, eb, prior_a, prior_b, w, detach_codes=True)
        d_content = O.adv_content_loss(nets, ea, eb, prior_c, w, detach_codes=True)
        tr._disc_step(d_style + d_content)

        enc_adv = O.encoder_adv_surrogate(nets, ea, eb, w)
        rec = O.reconstruction_loss(nets, ea, eb, w)
        cc = O.cc_mixed(nets, ea, source.labels, eb, w)
        total = enc_adv + rec + cc
        tr._eg_step(total)
        report = LossReport({
            "adv_style": d_style, "adv_content": d_content, "enc_adv": enc_adv,
            "rec": rec, "cc_suun": cc, "total_eg": total,
        })
        self.terms_seen.update(report)
        return report

    def steps_per_epoch(self, source: DomainBatch, target: DomainBatch) -> int:
        return max(1, math.ceil(min(len(source), len(target)) / self.cfg.train.batch_size))

    def run_epoch(self, epoch: int, t: float, source: DomainBatch, target: DomainBatch) -> PseudoLabelSet:
        pl = pseudo_label(self.nets, target, t)
        pseudo = pl.batch(target)
        bs = self.cfg.train.batch_size
        self.nets.train()
        for step in range(self.steps_per_epoch(source, target)):
            rng = self.rng(2, epoch, step)
            a = sample_batch(source, bs, rng)
            b = sample_batch(target, bs, rng)
            self.joint_step(a, b, rng)
            self.trainer.step += 1
            self._sup_step(sample_batch(source, bs, rng), sample_batch(pseudo, bs, rng) if len(pseudo) else None)
        return pl


def _check_inputs(source: DomainBatch, target: DomainBatch) -> None:
    if len(source) == 0:
        raise ValueError("source domain is empty")
    if source.labels is None:
        raise ValueError("source domain must be labeled")
    if len(target) == 0:
        raise ValueError("target domain is empty")


def adapt(
    cfg: AdaptConfig,
    source: DomainBatch,
    target: DomainBatch,
    target_test: Optional[DomainBatch] = None,
    on_epoch: Optional[Callable[[TraceRow], None]] = None,
) -> AdaptResult:
    """Run both phases; ``cfg.boosted`` selects the rising threshold."""
    _check_inputs(source, target)
    target = target.unlabeled()
    ad = Adapter(cfg)
    ad.pretrain(source)
    acc = target_accuracy(ad.nets, target_test) if target_test is not None else float("nan")
    trace: list[TraceRow] = []
    for epoch in range(cfg.epochs):
        t = threshold_schedule(cfg.t_init, cfg.w, epoch) if cfg.boosted else cfg.t_init
        pl = ad.run_epoch(epoch, t, source, target)
        row = TraceRow(epoch + 1, t, len(pl), target_accuracy(ad.nets, target_test) if target_test is not None else float("nan"))
        trace.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return AdaptResult(ad.nets, acc, trace, ad.trainer)


def adapt_basic(cfg: AdaptConfig, source: DomainBatch, target: DomainBatch, target_test: Optional[DomainBatch] = None, **kw) -> AdaptResult:
    return adapt(_with_boost(cfg, False), source, target, target_test, **kw)


def adapt_boosted(cfg: AdaptConfig, source: DomainBatch, target: DomainBatch, target_test: Optional[DomainBatch] = None, **kw) -> AdaptResult:
    return adapt(_with_boost(cfg, True), source, target, target_test, **kw)


def _with_boost(cfg: AdaptConfig, boosted: bool) -> AdaptConfig:
    if cfg.boosted == boosted:
        return cfg
    return AdaptConfig(cfg.t_init, cfg.w, cfg.pretrain_steps, cfg.epochs, boosted, cfg.train)


def source_only_baseline(cfg: AdaptConfig, source: DomainBatch, target_test: DomainBatch) -> tuple[NetworkSet, float]:
    """Phase 1 alone: the classifier fitted to the source, scored on the target."""
    if len(source) == 0 or source.labels is None:
        raise ValueError("source domain must be nonempty and labeled")
    ad = Adapter(cfg)
    ad.pretrain(source)
    return ad.nets, target_accuracy(ad.nets, target_test)


def save_result(result: AdaptResult, out_dir: os.PathLike | str, cfg: AdaptConfig) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_trace(out_dir / "trace.csv")
    meta = {"adapt": cfg.as_dict(), "baseline_accuracy": result.baseline_accuracy}
    return result.trainer.save(out_dir / "final.ckpt", meta)
