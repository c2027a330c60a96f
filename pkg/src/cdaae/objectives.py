"""CDAAE losses: adversarial prior matching, reconstruction, supervision and
content-latent-code consistency.

Every loss takes the network set, per-domain inputs and a :class:`LossWeights`.
Inputs may be raw image arrays or :class:`Encoded` batches, which lets a
training step share one encoder pass across all terms. Terms whose weight is
zero are skipped entirely (no forward pass, no gradient path).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Optional, Union

import numpy as np

from .autodiff import layers as L
from .autodiff.tensor import Tensor, concat
from .nets import LatentCode, NetworkSet


@dataclass
class LossWeights:
    """Loss coefficients; defaults are the supervised digit-experiment values."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 1.0
    gamma1: float = 2.0
    gamma2: float = 0.15
    lambda1: float = 5.0
    lambda2: float = 0.5
    eta1: float = 0.3
    eta2: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {f.name} must be a finite non-negative number, got {v!r}")
            setattr(self, f.name, float(v))

    @classmethod
    def semi_supervised(cls, **overrides) -> "LossWeights":
        # unlabeled content codes are matched to the prior, so beta1/beta2 are active
        return cls(**{"beta1": 1.0, "beta2": 1.0, **overrides})

    def scaled(self, **factors: float) -> "LossWeights":
        d = asdict(self)
        for k, f in factors.items():
            d[k] *= f
        return LossWeights(**d)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class Encoded:
    """One encoder pass over a domain batch (graph retained)."""

    images: np.ndarray
    domain: str
    content: Tensor
    style: Optional[Tensor]
    pair: Optional["PairForward"] = None

    def __len__(self) -> int:
        return len(self.images)


class PairForward:
    """Joint forward pass over one A batch and one B batch.

    Both batches go through the shared trunk and content head as a single
    concatenated batch, and each generator decodes its reconstruction codes and
    the cross-domain codes together. Batch-norm statistics seen in training thus
    mix both domains the same way the running statistics used at evaluation do.
    Losses given the ``Encoded`` halves (``enc_a``/``enc_b``) reuse these passes.

    ``style_to_b``/``style_to_a`` are the prior style draws used for x_A->B and
    x_B->A.
    """

    def __init__(self, nets: NetworkSet, images_a: np.ndarray, images_b: np.ndarray, style_to_b: np.ndarray, style_to_a: np.ndarray):
        _nonempty(images_a)
        _nonempty(images_b)
        self.nets = nets
        self.n_a = len(images_a)
        both = np.concatenate([images_a, images_b], axis=0)
        h = nets.trunk(nets._images(both))
        content = nets.content_head(h)
        na = self.n_a
        self.enc_a = Encoded(np.asarray(images_a), "A", content[:na], nets.style_a(h[:na]), self)
        self.enc_b = Encoded(np.asarray(images_b), "B", content[na:], nets.style_b(h[na:]), self)
        self.style_to_b = style_to_b
        self.style_to_a = style_to_a
        self._generated: Optional[dict[str, Tensor]] = None
        self._transformed: Optional[dict[str, Tensor]] = None

    def _generate(self) -> dict[str, Tensor]:
        if self._generated is None:
            nets, ea, eb = self.nets, self.enc_a, self.enc_b
            na, nb = len(ea), len(eb)
            code_a = concat([LatentCode(ea.content, ea.style, "A").vector(), LatentCode(eb.content, Tensor(self.style_to_a), "A").vector()], axis=0)
            code_b = concat([LatentCode(eb.content, eb.style, "B").vector(), LatentCode(ea.content, Tensor(self.style_to_b), "B").vector()], axis=0)
            out_a = nets.generate(code_a, "A")
            out_b = nets.generate(code_b, "B")
            self._generated = {"rec_A": out_a[:na], "B->A": out_a[na:], "rec_B": out_b[:nb], "A->B": out_b[nb:]}
        return self._generated

    def reconstruction(self, domain: str) -> Tensor:
        return self._generate()[f"rec_{domain}"]

    def transformed(self, src: str) -> Tensor:
        return self._generate()["A->B" if src == "A" else "B->A"]

    def transformed_content(self, src: str) -> Tensor:
        """E_c of the cross-domain image generated from the ``src`` batch."""
        if self._transformed is None:
            g = self._generate()
            both = self.nets.encode_content(concat([g["A->B"], g["B->A"]], axis=0))
            na = self.n_a
            self._transformed = {"A": both[:na], "B": both[na:]}
        return self._transformed[src]


InputLike = Union[np.ndarray, Encoded]


def encode_batch(nets: NetworkSet, images: np.ndarray, domain: str) -> Encoded:
    _nonempty(images)
    code = nets.encode(images, domain)
    return Encoded(np.asarray(images), domain, code.content, code.style)


def content_pair(nets: NetworkSet, images_a: np.ndarray, images_b: np.ndarray) -> tuple[Encoded, Encoded]:
    """Content codes of both batches from one trunk pass (no style heads)."""
    _nonempty(images_a)
    _nonempty(images_b)
    na = len(images_a)
    content = nets.encode_content(np.concatenate([images_a, images_b], axis=0))
    return (
        Encoded(np.asarray(images_a), "A", content[:na], None),
        Encoded(np.asarray(images_b), "B", content[na:], None),
    )


def _enc(nets: NetworkSet, x: InputLike, domain: str) -> Encoded:
    if isinstance(x, Encoded):
        if x.domain != domain:
            raise ValueError(f"expected an encoded batch from domain {domain}, got {x.domain}")
        _nonempty(x.images)
        return x
    return encode_batch(nets, x, domain)


def _images(x: InputLike) -> np.ndarray:
    return x.images if isinstance(x, Encoded) else np.asarray(x)


def _nonempty(x) -> None:
    if x is None or len(x) == 0:
        raise ValueError("loss evaluated on an empty batch")


def _zero() -> Tensor:
    return Tensor(np.zeros((), np.float32))


def _total(terms: list[Tensor]) -> Tensor:
    if not terms:
        return _zero()
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def log_real(p: Tensor) -> Tensor:
    """Batch mean of log p (clipped)."""
    return L.safe_log(p).mean()


def log_fake(p: Tensor) -> Tensor:
    """Batch mean of log(1 - p) (clipped)."""
    return L.safe_log(1.0 - p).mean()


# -- adversarial ---------------------------------------------------------------


def adv_style_loss(
    nets: NetworkSet,
    x_a: InputLike,
    x_b: InputLike,
    prior_a: np.ndarray,
    prior_b: np.ndarray,
    w: LossWeights,
    detach_codes: bool = False,
) -> Tensor:
    """Style adversarial objective (discriminators maximize it)::

        a1 E[log(1 - D_A(E_A(x_A)))] + a2 E[log(1 - D_B(E_B(x_B)))]
        + a3 E[log D_A(z_A)] + a4 E[log D_B(z_B)]
    """
    _nonempty(_images(x_a))
    _nonempty(_images(x_b))
    terms = []
    if w.alpha1:
        s = _enc(nets, x_a, "A").style
        terms.append(w.alpha1 * log_fake(nets.discriminate(s.detach() if detach_codes else s, "style-A")))
    if w.alpha2:
        s = _enc(nets, x_b, "B").style
        terms.append(w.alpha2 * log_fake(nets.discriminate(s.detach() if detach_codes else s, "style-B")))
    if w.alpha3:
        _nonempty(prior_a)
        terms.append(w.alpha3 * log_real(nets.discriminate(prior_a, "style-A")))
    if w.alpha4:
        _nonempty(prior_b)
        terms.append(w.alpha4 * log_real(nets.discriminate(prior_b, "style-B")))
    return _total(terms)


def adv_content_loss(
    nets: NetworkSet,
    x_a: Optional[InputLike],
    x_b: Optional[InputLike],
    prior_content: np.ndarray,
    w: LossWeights,
    detach_codes: bool = False,
) -> Tensor:
    """Content adversarial objective::

        b1 E[log(1 - D_c(E_c(x_A)))] + b2 E[log(1 - D_c(E_c(x_B)))] + b3 E[log D_c(z_c)]

    ``x_a``/``x_b`` may be None when their weight is zero.
    """
    terms = []
    for beta, x, dom in ((w.beta1, x_a, "A"), (w.beta2, x_b, "B")):
        if beta:
            _nonempty(None if x is None else _images(x))
            c = _enc(nets, x, dom).content
            terms.append(beta * log_fake(nets.discriminate(c.detach() if detach_codes else c, "content")))
    if w.beta3:
        _nonempty(prior_content)
        terms.append(w.beta3 * log_real(nets.discriminate(prior_content, "content")))
    return _total(terms)


def encoder_adv_surrogate(nets: NetworkSet, x_a: Optional[InputLike], x_b: Optional[InputLike], w: LossWeights, content_a: Optional[InputLike] = None, content_b: Optional[InputLike] = None) -> Tensor:
    """Non-saturating encoder objective: minimize -log D(E(x)) for every
    encoder-dependent adversarial term. Prior terms do not involve the encoders
    and are absent. ``content_a``/``content_b`` select which batches feed the
    content terms (defaults to ``x_a``/``x_b``)."""
    terms = []
    if w.alpha1 and x_a is not None:
        terms.append(-w.alpha1 * log_real(nets.discriminate(_enc(nets, x_a, "A").style, "style-A")))
    if w.alpha2 and x_b is not None:
        terms.append(-w.alpha2 * log_real(nets.discriminate(_enc(nets, x_b, "B").style, "style-B")))
    ca = x_a if content_a is None else content_a
    cb = x_b if content_b is None else content_b
    if w.beta1 and ca is not None:
        terms.append(-w.beta1 * log_real(nets.discriminate(_enc(nets, ca, "A").content, "content")))
    if w.beta2 and cb is not None:
        terms.append(-w.beta2 * log_real(nets.discriminate(_enc(nets, cb, "B").content, "content")))
    return _total(terms)


@dataclass(frozen=True)
class MinimaxRoles:
    """Which parameters descend and which ascend the adversarial objective."""

    minimizers: tuple[str, ...]
    maximizers: tuple[str, ...]
    encoder_objective: str = "non-saturating"
    schedule: str = "alternating 1:1, discriminator first"


def minimax_roles(nets: NetworkSet) -> MinimaxRoles:
    """Encoders minimize and discriminators maximize the summed adversarial loss.

    The trainer realizes this as alternating steps: the discriminators take a
    descent step on the negated objective, the encoders a descent step on
    :func:`encoder_adv_surrogate`.
    """
    enc = {id(p) for p in nets.encoder_parameters()}
    disc = {id(p) for p in nets.discriminator_parameters()}
    names = dict(nets.named_parameters())
    return MinimaxRoles(
        minimizers=tuple(n for n, p in names.items() if id(p) in enc),
        maximizers=tuple(n for n, p in names.items() if id(p) in disc),
    )


# -- reconstruction and supervision --------------------------------------------


def reconstruction_loss(nets: NetworkSet, x_a: Optional[InputLike], x_b: Optional[InputLike], w: LossWeights) -> Tensor:
    """g1 E[mse(x_A, G_A([E_c(x_A), E_A(x_A)]))] + g2 E[same for B]."""
    terms = []
    for gamma, x, dom in ((w.gamma1, x_a, "A"), (w.gamma2, x_b, "B")):
        if gamma:
            _nonempty(None if x is None else _images(x))
            e = _enc(nets, x, dom)
            rec = e.pair.reconstruction(dom) if e.pair is not None else nets.generate(LatentCode(e.content, e.style, dom))
            terms.append(gamma * L.mse(rec, e.images))
    return _total(terms)


def _labels(labels, k: int) -> np.ndarray:
    if labels is None:
        raise ValueError("labels are required for this loss")
    return L.one_hot(np.asarray(labels), k)


def supervised_loss(
    nets: NetworkSet,
    x_a: Optional[InputLike],
    labels_a: Optional[np.ndarray],
    x_b: Optional[InputLike],
    labels_b: Optional[np.ndarray],
    w: LossWeights,
) -> Tensor:
    """l1 E[CE(E_c(x_A), l_A)] + l2 E[CE(E_c(x_B), l_B)]. A side passed as None
    (or empty) contributes nothing."""
    k = nets.prior.num_classes
    terms = []
    for lam, x, lab, dom in ((w.lambda1, x_a, labels_a, "A"), (w.lambda2, x_b, labels_b, "B")):
        if lam and x is not None and len(_images(x)):
            target = _labels(lab, k)
            terms.append(lam * L.cross_entropy(_enc(nets, x, dom).content, target))
    return _total(terms)


# -- content-latent-code consistency -------------------------------------------


def _transformed_content(nets: NetworkSet, e: Encoded, target: str, style: Optional[np.ndarray], rng: Optional[np.random.Generator]) -> Tensor:
    if e.pair is not None and style is None:
        return e.pair.transformed_content(e.domain)
    n = len(e)
    if style is None:
        if rng is None:
            raise ValueError("rng is required to draw prior styles")
        style = nets.prior.sample_style(target, n, rng)
    x_t = nets.generate(LatentCode(e.content, Tensor(style), target))
    return nets.encode_content(x_t)


def _cc_label_term(nets, x, labels, src, eta, style, rng) -> Tensor:
    target = _labels(labels, nets.prior.num_classes)
    e = _enc(nets, x, src)
    if len(target) != len(e):
        raise ValueError(f"{len(target)} labels for {len(e)} images")
    dst = "B" if src == "A" else "A"
    return eta * L.cross_entropy(_transformed_content(nets, e, dst, style, rng), target)


def _cc_soft_term(nets, x, src, eta, style, rng) -> Tensor:
    e = _enc(nets, x, src)
    dst = "B" if src == "A" else "A"
    # the original's code is a fixed soft target
    return eta * L.cross_entropy(_transformed_content(nets, e, dst, style, rng), e.content.detach())


def cc_unsupervised(
    nets: NetworkSet,
    x_a: InputLike,
    x_b: InputLike,
    w: LossWeights,
    rng: Optional[np.random.Generator] = None,
    style_b: Optional[np.ndarray] = None,
    style_a: Optional[np.ndarray] = None,
) -> Tensor:
    """e1 E[CE(E_c(x_A), E_c(x_A->B))] + e2 E[CE(E_c(x_B), E_c(x_B->A))].

    ``style_b`` is the style used for x_A->B, ``style_a`` for x_B->A; missing
    ones are drawn from the prior with ``rng``.
    """
    _nonempty(_images(x_a))
    _nonempty(_images(x_b))
    terms = []
    if w.eta1:
        terms.append(_cc_soft_term(nets, x_a, "A", w.eta1, style_b, rng))
    if w.eta2:
        terms.append(_cc_soft_term(nets, x_b, "B", w.eta2, style_a, rng))
    return _total(terms)


def cc_supervised(
    nets: NetworkSet,
    x_a: InputLike,
    labels_a: np.ndarray,
    x_b: InputLike,
    labels_b: np.ndarray,
    w: LossWeights,
    rng: Optional[np.random.Generator] = None,
    style_b: Optional[np.ndarray] = None,
    style_a: Optional[np.ndarray] = None,
) -> Tensor:
    """e1 E[CE(E_c(x_A->B), l_A)] + e2 E[CE(E_c(x_B->A), l_B)]."""
    _nonempty(_images(x_a))
    _nonempty(_images(x_b))
    if labels_a is None or labels_b is None:
        raise ValueError("cc_supervised needs labels for both domains")
    terms = []
    if w.eta1:
        terms.append(_cc_label_term(nets, x_a, labels_a, "A", w.eta1, style_b, rng))
    if w.eta2:
        terms.append(_cc_label_term(nets, x_b, labels_b, "B", w.eta2, style_a, rng))
    return _total(terms)


def cc_mixed(
    nets: NetworkSet,
    x_a: InputLike,
    labels_a: np.ndarray,
    x_b: InputLike,
    w: LossWeights,
    rng: Optional[np.random.Generator] = None,
    style_b: Optional[np.ndarray] = None,
    style_a: Optional[np.ndarray] = None,
) -> Tensor:
    """e1 E[CE(E_c(x_A->B), l_A)] + e2 E[CE(E_c(x_B), E_c(x_B->A))]: labeled A,
    unlabeled B (any B labels are ignored)."""
    _nonempty(_images(x_a))
    _nonempty(_images(x_b))
    if labels_a is None:
        raise ValueError("cc_mixed needs labels for domain A")
    terms = []
    if w.eta1:
        terms.append(_cc_label_term(nets, x_a, labels_a, "A", w.eta1, style_b, rng))
    if w.eta2:
        terms.append(_cc_soft_term(nets, x_b, "B", w.eta2, style_a, rng))
    return _total(terms)


# -- reporting -------------------------------------------------------------------


class LossReport:
    """Ordered named scalars for one training step."""

    def __init__(self, values: Optional[dict[str, float]] = None):
        self.values: dict[str, float] = {}
        for k, v in (values or {}).items():
            self[k] = v

    def __setitem__(self, name: str, value) -> None:
        v = float(value.data) if isinstance(value, Tensor) else float(value)
        if not math.isfinite(v):
            raise FloatingPointError(f"loss term {name} is not finite: {v}")
        self.values[name] = v

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def items(self):
        return self.values.items()

    def rows(self, step: int) -> list[tuple[int, str, str]]:
        """(step, term, value) rows; values use repr so reruns compare byte-for-byte."""
        return [(step, k, repr(v)) for k, v in self.values.items()]

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v:.4g}" for k, v in self.values.items())
        return f"LossReport({inner})"
