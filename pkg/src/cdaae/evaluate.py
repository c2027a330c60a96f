"""Evaluation: oracle classifiers, transfer accuracy, compression ratio, image grids."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .autodiff import layers as L
from .autodiff.optim import Adam
from .autodiff.tensor import backward, no_grad
from .datasets import DatasetPair, DomainBatch
from .nets import Classifier, LatentCode, NetworkSet, check_domain, other_domain

SCENARIOS = ("prior", "self", "cross")
RED = (255, 0, 0)


# -- oracle classifiers ----------------------------------------------------------


@dataclass
class Oracle:
    classifier: Classifier
    domain: str
    test_accuracy: float

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.classifier.predict(images).argmax(axis=1)


def train_oracle_classifier(
    train: DomainBatch,
    test: Optional[DomainBatch] = None,
    num_classes: int = 10,
    steps: int = 300,
    batch_size: int = 64,
    lr: float = 1e-3,
    width: float = 0.25,
    seed: int = 0,
) -> Oracle:
    """Train an independent classifier (content-encoder architecture) on one domain."""
    if train.labels is None:
        raise ValueError("oracle classifier needs labeled training data")
    clf = Classifier(num_classes, width, seed)
    opt = Adam(clf.parameters(), lr, (0.9, 0.999))
    rng = np.random.default_rng([seed, 7])
    clf.train()
    for _ in range(steps):
        idx = rng.choice(len(train), size=min(batch_size, len(train)), replace=False)
        loss = L.cross_entropy(clf(train.images[idx]), L.one_hot(train.labels[idx], num_classes))
        opt.zero_grad()
        backward(loss, opt.params)
        opt.step()
    clf.eval()
    acc = float("nan")
    if test is not None and test.labels is not None:
        acc = float((clf.predict(test.images).argmax(1) == test.labels).mean())
    return Oracle(clf, train.domain, acc)


# -- transfer accuracy --------------------------------------------------------------


def _generate_eval(nets: NetworkSet, content: np.ndarray, style: np.ndarray, domain: str, batch: int = 256) -> np.ndarray:
    was = nets.training
    nets.eval()
    try:
        with no_grad():
            return np.concatenate([
                nets.generate(LatentCode(content[i : i + batch], style[i : i + batch], domain)).data
                for i in range(0, len(content), batch)
            ])
    finally:
        nets.train(was)


def transform_eval(nets: NetworkSet, images: np.ndarray, target: str, rng: np.random.Generator, style: Optional[np.ndarray] = None) -> np.ndarray:
    """Eval-mode transform of ``images`` into ``target`` with prior (or given) styles."""
    content = nets.predict(images)
    if style is None:
        style = nets.prior.sample_style(target, len(images), rng)
    return _generate_eval(nets, content, style, target)


def transfer_accuracy(
    nets: NetworkSet,
    oracle: Oracle,
    scenario: str,
    data: Optional[DatasetPair] = None,
    n_per_class: int = 100,
    seed: int = 0,
) -> float:
    """Oracle agreement on images generated into ``oracle.domain``.

    ``prior``: one-hot content for each class with prior styles; ``self``/``cross``:
    test images of the oracle's / the other domain transformed with prior styles,
    scored against the input's label.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    target = oracle.domain
    rng = np.random.default_rng([seed, SCENARIOS.index(scenario)])
    k = nets.prior.num_classes
    if scenario == "prior":
        labels = np.repeat(np.arange(k), n_per_class)
        images = _generate_eval(nets, L.one_hot(labels, k), nets.prior.sample_style(target, len(labels), rng), target)
    else:
        if data is None:
            raise ValueError(f"scenario {scenario!r} needs test images")
        source = target if scenario == "self" else other_domain(target)
        test = data.test(source)
        if test.domain != source or test.labels is None:
            raise ValueError(f"scenario {scenario!r} into {target} needs labeled test images from domain {source}")
        labels = test.labels
        images = transform_eval(nets, test.images, target, rng)
    return float((oracle.predict(images) == labels).mean())


@dataclass
class EvalReport:
    """Accuracy per scenario; keys follow P2A, A2A, B2A, P2B, B2B, A2B."""

    accuracies: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    oracle_accuracy: dict[str, float] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(("scenario", "accuracy", "samples"))
        for key, acc in self.accuracies.items():
            w.writerow((key, repr(acc), self.counts[key]))
        return buf.getvalue()

    def table(self) -> str:
        keys = list(self.accuracies)
        head = " ".join(f"{k:>7}" for k in keys)
        vals = " ".join(f"{100 * self.accuracies[k]:6.2f}%" for k in keys)
        lines = [head, vals]
        if self.oracle_accuracy:
            lines.append("oracle test accuracy: " + ", ".join(f"{d}={100 * a:.2f}%" for d, a in self.oracle_accuracy.items()))
        return "\n".join(lines)


def evaluate(nets: NetworkSet, oracles: dict[str, Oracle], data: DatasetPair, n_per_class: int = 100, seed: int = 0) -> EvalReport:
    report = EvalReport(oracle_accuracy={d: o.test_accuracy for d, o in oracles.items()})
    for target in ("A", "B"):
        other = other_domain(target)
        for scenario, key in (("prior", f"P2{target}"), ("self", f"{target}2{target}"), ("cross", f"{other}2{target}")):
            report.accuracies[key] = transfer_accuracy(nets, oracles[target], scenario, data, n_per_class, seed)
            n = n_per_class * nets.prior.num_classes if scenario == "prior" else len(data.test(target if scenario == "self" else other))
            report.counts[key] = n
    return report


# -- compression ----------------------------------------------------------------------


def compression_ratio_exact(
    image_dims: Sequence[int],
    num_classes: int = 10,
    style_dims: int = 8,
    style_bits: int = 32,
    pixel_bits: int = 8,
    content_bits_per_dim: int = 1,
) -> Fraction:
    """Image storage bits over latent storage bits (one-hot content, float style)."""
    if any(d <= 0 for d in image_dims) or pixel_bits <= 0:
        raise ValueError(f"image dimensions must be positive, got {tuple(image_dims)}")
    image_bits = math.prod(image_dims) * pixel_bits
    code_bits = num_classes * content_bits_per_dim + style_dims * style_bits
    if code_bits <= 0:
        raise ValueError("latent code has zero storage cost")
    return Fraction(image_bits, code_bits)


def compression_ratio(image_dims: Sequence[int], num_classes: int = 10, style_dims: int = 8, style_bits: int = 32, pixel_bits: int = 8, content_bits_per_dim: int = 1) -> float:
    return float(compression_ratio_exact(image_dims, num_classes, style_dims, style_bits, pixel_bits, content_bits_per_dim))


# -- image grids -------------------------------------------------------------------------


def to_pixels(images: np.ndarray) -> np.ndarray:
    """(N, 3, H, W) in [-1, 1] -> (N, H, W, 3) uint8 via round((v + 1) * 127.5)."""
    px = np.round((np.asarray(images, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(px, 0, 255).astype(np.uint8).transpose(0, 2, 3, 1)


def image_grid(
    images: np.ndarray,
    rows: int,
    cols: int,
    path: Optional[Path | str] = None,
    sep_after_col: Optional[int] = None,
    sep_after_row: Optional[int] = None,
    sep_width: int = 2,
    sep_color: tuple[int, int, int] = RED,
    upscale: int = 1,
    blank: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Tile ``rows * cols`` images row-major into an RGB array (and PNG file).

    A separator band of ``sep_width`` pixels is inserted after column
    ``sep_after_col`` and/or row ``sep_after_row`` (1-based counts). Cells listed
    in ``blank`` are left black.
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) images, got {images.shape}")
    if len(images) != rows * cols:
        raise ValueError(f"{len(images)} images do not fill a {rows}x{cols} grid")
    n, _, h, w = images.shape
    px = to_pixels(images)
    col_sep = sep_width if sep_after_col is not None else 0
    row_sep = sep_width if sep_after_row is not None else 0
    out = np.zeros((rows * h + row_sep, cols * w + col_sep, 3), np.uint8)
    if col_sep:
        x0 = sep_after_col * w
        out[:, x0 : x0 + col_sep] = sep_color
    if row_sep:
        y0 = sep_after_row * h
        out[y0 : y0 + row_sep, :] = sep_color
    blank = set(blank or ())
    for i in range(n):
        if i in blank:
            continue
        r, c = divmod(i, cols)
        y = r * h + (row_sep if sep_after_row is not None and r >= sep_after_row else 0)
        x = c * w + (col_sep if sep_after_col is not None and c >= sep_after_col else 0)
        out[y : y + h, x : x + w] = px[i]
    if upscale > 1:
        out = out.repeat(upscale, axis=0).repeat(upscale, axis=1)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(out, "RGB").save(path, format="PNG")
    return out


def prior_grid(nets: NetworkSet, domain: str, n_styles: int, rng: np.random.Generator) -> tuple[np.ndarray, int, int]:
    """Rows sweep the K one-hot contents, each column keeps one prior style fixed."""
    check_domain(domain)
    k = nets.prior.num_classes
    styles = nets.prior.sample_style(domain, n_styles, rng)
    content = L.one_hot(np.repeat(np.arange(k), n_styles), k)
    style = np.tile(styles, (k, 1))
    return _generate_eval(nets, content, style, domain), k, n_styles


def transform_grid(nets: NetworkSet, inputs: np.ndarray, target: str, n_styles: int, rng: np.random.Generator) -> tuple[np.ndarray, int, int]:
    """Each row: the input image followed by ``n_styles`` prior-style renderings in ``target``."""
    content = nets.predict(inputs)
    rows = []
    for i in range(len(inputs)):
        c = np.repeat(content[i : i + 1], n_styles, axis=0)
        out = _generate_eval(nets, c, nets.prior.sample_style(target, n_styles, rng), target)
        rows.append(np.concatenate([inputs[i : i + 1], out]))
    return np.concatenate(rows), len(inputs), n_styles + 1


def style_grid(nets: NetworkSet, content_images: np.ndarray, style_images: np.ndarray, style_domain: str) -> tuple[np.ndarray, int, int]:
    """Top row: style sources; left column: content sources; cell (i, j) renders
    content i with the style of image j in ``style_domain``. Cell (0, 0) is blank."""
    content = nets.predict(content_images)
    was = nets.training
    nets.eval()
    try:
        with no_grad():
            styles = nets.encode_style(style_images, style_domain).data
    finally:
        nets.train(was)
    nc, ns = len(content_images), len(style_images)
    cells = [np.full((1, 3, 32, 32), -1.0, np.float32), style_images]
    for i in range(nc):
        out = _generate_eval(nets, np.repeat(content[i : i + 1], ns, axis=0), styles, style_domain)
        cells += [content_images[i : i + 1], out]
    return np.concatenate(cells), nc + 1, ns + 1
