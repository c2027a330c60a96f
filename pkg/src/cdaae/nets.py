"""CDAAE network set: shared trunk, content/style heads, generators, discriminators.

Geometry (width multiplier 1):

* trunk: conv 3->64 (32->16), conv 64->128 (16->8)
* content head: conv 128->256 (8->4), conv 256->128 (4->1), dense 128->K, softmax
* style head (per domain): conv 128->128 (8->4), conv 128->256 (4->1), 1x1 conv 256->S
* generator (per domain): latent (K+S)x1x1 -> 256 (4) -> 128 (8) -> 64 (16) -> 3 (32), tanh
* discriminator: dense in->512->256->128->1, sigmoid

Downsampling layers use 4x4 kernels, stride 2, padding 1; the last encoder layer
is a valid 4x4 conv to 1x1 spatial and the generators mirror it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import layers as L
from .autodiff.nn import Conv2d, ConvTranspose2d, Dense, Module, conv_bn_relu, deconv_bn_relu
from .autodiff.tensor import Tensor, concat, no_grad

IMAGE_SHAPE = (3, 32, 32)
DOMAINS = ("A", "B")
DISCRIMINATORS = ("content", "style-A", "style-B")

ArrayLike = Union[np.ndarray, Tensor]


def _tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_domain(domain: str) -> str:
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    return domain


def other_domain(domain: str) -> str:
    return "B" if check_domain(domain) == "A" else "A"


@dataclass(frozen=True)
class PriorSpec:
    """Latent priors: uniform categorical over one-hot content, unit Gaussian style."""

    num_classes: int = 10
    style_dim_a: int = 8
    style_dim_b: int = 8

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.style_dim_a < 1 or self.style_dim_b < 1:
            raise ValueError("style dimensions must be >= 1")

    def style_dim(self, domain: str) -> int:
        return self.style_dim_a if check_domain(domain) == "A" else self.style_dim_b

    def sample_content(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.integers(0, self.num_classes, size=n)
        return L.one_hot(labels, self.num_classes)

    def sample_style(self, domain: str, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.style_dim(domain))).astype(np.float32)


@dataclass
class LatentCode:
    """Content probabilities followed by a domain's style vector."""

    content: ArrayLike
    style: ArrayLike
    domain: str

    def __post_init__(self):
        check_domain(self.domain)
        c = self.content.data if isinstance(self.content, Tensor) else np.asarray(self.content)
        s = self.style.data if isinstance(self.style, Tensor) else np.asarray(self.style)
        if c.ndim != 2 or s.ndim != 2 or c.shape[0] != s.shape[0]:
            raise ValueError(f"content {c.shape} and style {s.shape} must be (N, K) and (N, S) with equal N")
        if c.size and ((c < 0).any() or np.abs(c.sum(axis=1) - 1).max() > 1e-4):
            raise ValueError("content rows must be probability vectors (non-negative, summing to 1)")

    def vector(self) -> Tensor:
        return concat([_tensor(self.content), _tensor(self.style)], axis=1)


def _width(base: int, mult: float) -> int:
    return max(1, int(round(base * mult)))


class Trunk(Module):
    """Shared low-level layers; their output feeds the content head and both style heads."""

    def __init__(self, rng: np.random.Generator, width: float = 1.0):
        super().__init__()
        c1, c2 = _width(64, width), _width(128, width)
        self.layers = [conv_bn_relu(3, c1, 4, 2, 1, rng), conv_bn_relu(c1, c2, 4, 2, 1, rng)]
        self.out_channels = c2

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class ContentHead(Module):
    def __init__(self, in_ch: int, num_classes: int, rng: np.random.Generator, width: float = 1.0):
        super().__init__()
        c3, c4 = _width(256, width), _width(128, width)
        self.layers = [conv_bn_relu(in_ch, c3, 4, 2, 1, rng), conv_bn_relu(c3, c4, 4, 1, 0, rng)]
        self.fc = Dense(c4, num_classes, rng, gain=1.0)

    def logits(self, h: Tensor) -> Tensor:
        for layer in self.layers:
            h = layer(h)
        return self.fc(h.reshape(h.shape[0], -1))

    def forward(self, h: Tensor) -> Tensor:
        return L.softmax(self.logits(h))


class StyleHead(Module):
    def __init__(self, in_ch: int, style_dim: int, rng: np.random.Generator, width: float = 1.0):
        super().__init__()
        c1, c2 = _width(128, width), _width(256, width)
        self.layers = [
            conv_bn_relu(in_ch, c1, 4, 2, 1, rng),
            conv_bn_relu(c1, c2, 4, 1, 0, rng),
            Conv2d(c2, style_dim, 1, 1, 0, rng),  # no norm or activation: unbounded Gaussian code
        ]

    def forward(self, h: Tensor) -> Tensor:
        for layer in self.layers:
            h = layer(h)
        return h.reshape(h.shape[0], -1)


class Generator(Module):
    def __init__(self, latent_dim: int, rng: np.random.Generator, width: float = 1.0):
        super().__init__()
        c1, c2, c3 = _width(256, width), _width(128, width), _width(64, width)
        self.latent_dim = latent_dim
        self.layers = [
            deconv_bn_relu(latent_dim, c1, 4, 1, 0, rng),
            deconv_bn_relu(c1, c2, 4, 2, 1, rng),
            deconv_bn_relu(c2, c3, 4, 2, 1, rng),
            ConvTranspose2d(c3, 3, 4, 2, 1, rng),
        ]

    def forward(self, z: Tensor) -> Tensor:
        h = z.reshape(z.shape[0], self.latent_dim, 1, 1)
        for layer in self.layers:
            h = layer(h)
        return L.tanh(h)


class Discriminator(Module):
    def __init__(self, in_dim: int, rng: np.random.Generator, width: float = 1.0):
        super().__init__()
        dims = [in_dim, _width(512, width), _width(256, width), _width(128, width), 1]
        self.in_dim = in_dim
        self.layers = [Dense(a, b, rng, gain=2.0 if b != 1 else 1.0) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, code: Tensor) -> Tensor:
        h = code
        for layer in self.layers[:-1]:
            h = L.relu(layer(h))
        p = L.sigmoid(self.layers[-1](h)).reshape(-1)
        # keep strictly inside (0, 1) so both log terms stay finite
        return p.clip(L.LOG_EPS, 1.0 - L.LOG_EPS)


class NetworkSet(Module):
    """All CDAAE networks. The trunk is a single module referenced by the content
    path and both style paths."""

    def __init__(self, prior: PriorSpec = PriorSpec(), width: float = 1.0, seed: int = 0):
        super().__init__()
        self.prior = prior
        self.width = width
        rng = np.random.default_rng(seed)
        k = prior.num_classes
        self.trunk = Trunk(rng, width)
        self.content_head = ContentHead(self.trunk.out_channels, k, rng, width)
        self.style_a = StyleHead(self.trunk.out_channels, prior.style_dim_a, rng, width)
        self.style_b = StyleHead(self.trunk.out_channels, prior.style_dim_b, rng, width)
        self.gen_a = Generator(k + prior.style_dim_a, rng, width)
        self.gen_b = Generator(k + prior.style_dim_b, rng, width)
        self.disc_content = Discriminator(k, rng, width)
        self.disc_a = Discriminator(prior.style_dim_a, rng, width)
        self.disc_b = Discriminator(prior.style_dim_b, rng, width)

    # -- parameter groups -----------------------------------------------------

    def classifier_parameters(self):
        return self.trunk.parameters() + self.content_head.parameters()

    def encoder_parameters(self):
        return self.classifier_parameters() + self.style_a.parameters() + self.style_b.parameters()

    def generator_parameters(self):
        return self.gen_a.parameters() + self.gen_b.parameters()

    def discriminator_parameters(self):
        return self.disc_content.parameters() + self.disc_a.parameters() + self.disc_b.parameters()

    def style_head(self, domain: str) -> StyleHead:
        return self.style_a if check_domain(domain) == "A" else self.style_b

    def generator(self, domain: str) -> Generator:
        return self.gen_a if check_domain(domain) == "A" else self.gen_b

    def discriminator(self, which: str) -> Discriminator:
        table = {"content": self.disc_content, "style-A": self.disc_a, "style-B": self.disc_b}
        if which not in table:
            raise ValueError(f"unknown discriminator {which!r}; expected one of {DISCRIMINATORS}")
        return table[which]

    # -- compositions ---------------------------------------------------------

    @staticmethod
    def _images(x: ArrayLike) -> Tensor:
        x = _tensor(x)
        if x.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"images must be shaped Nx3x32x32, got {x.shape}")
        return x

    def encode_content(self, x: ArrayLike) -> Tensor:
        """Content probabilities (N, K)."""
        return self.content_head(self.trunk(self._images(x)))

    def encode_style(self, x: ArrayLike, domain: str) -> Tensor:
        """Style vectors (N, S_domain) from the domain's style head."""
        head = self.style_head(domain)
        return head(self.trunk(self._images(x)))

    def encode(self, x: ArrayLike, domain: str) -> LatentCode:
        """Content and style with a single trunk pass."""
        h = self.trunk(self._images(x))
        return LatentCode(self.content_head(h), self.style_head(domain)(h), domain)

    def generate(self, z: Union[LatentCode, ArrayLike], domain: Optional[str] = None) -> Tensor:
        """Decode latent codes into images of ``domain`` (defaults to the code's domain)."""
        if isinstance(z, LatentCode):
            domain = domain or z.domain
            vec = z.vector()
        else:
            if domain is None:
                raise ValueError("domain is required when generating from a raw latent vector")
            vec = _tensor(z)
        gen = self.generator(domain)
        if vec.ndim != 2 or vec.shape[1] != gen.latent_dim:
            raise ValueError(
                f"latent vector for domain {domain} must have {gen.latent_dim} "
                f"(K + style) entries per row, got shape {vec.shape}"
            )
        return gen(vec)

    def transform(
        self,
        x: ArrayLike,
        target: str,
        style: Optional[ArrayLike] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Content of ``x`` rendered in ``target`` with a given or prior-drawn style."""
        content = self.encode_content(x)
        n = content.shape[0]
        if style is None:
            if rng is None:
                raise ValueError("rng is required when drawing the style from the prior")
            style = self.prior.sample_style(target, n, rng)
        style = _tensor(style)
        sdim = self.prior.style_dim(target)
        if style.ndim != 2 or style.shape != (n, sdim):
            raise ValueError(f"style for domain {target} must be shaped ({n}, {sdim}), got {style.shape}")
        return self.generate(LatentCode(content, style, target))

    def discriminate(self, code: ArrayLike, which: str) -> Tensor:
        """Probability per row that ``code`` was drawn from the prior."""
        disc = self.discriminator(which)
        code = _tensor(code)
        if code.ndim != 2 or code.shape[1] != disc.in_dim:
            raise ValueError(f"discriminator {which} expects (N, {disc.in_dim}) codes, got {code.shape}")
        return disc(code)

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode content probabilities, batched, without recording a graph."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = [self.encode_content(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.prior.num_classes), np.float32)


class Classifier(Module):
    """Stand-alone network with the content encoder's architecture (oracle use)."""

    def __init__(self, num_classes: int, width: float = 1.0, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.trunk = Trunk(rng, width)
        self.head = ContentHead(self.trunk.out_channels, num_classes, rng, width)
        self.num_classes = num_classes

    def forward(self, x: ArrayLike) -> Tensor:
        return self.head(self.trunk(NetworkSet._images(x)))

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = [self(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(out, axis=0)


def save_nets(path, nets: NetworkSet, extra: Optional[dict[str, np.ndarray]] = None, meta: Optional[dict] = None):
    """Write the network set (plus optional extra tensors) to a checkpoint file."""
    from .checkpoint import save_checkpoint

    tensors = dict(nets.state_dict())
    tensors.update(extra or {})
    info = {
        "prior": {"num_classes": nets.prior.num_classes, "style_dim_a": nets.prior.style_dim_a, "style_dim_b": nets.prior.style_dim_b},
        "width": nets.width,
    }
    info.update(meta or {})
    return save_checkpoint(path, tensors, info)


def load_nets(path) -> tuple[NetworkSet, dict[str, np.ndarray], dict]:
    """Rebuild a network set from a checkpoint; returns (nets, all tensors, metadata)."""
    from .checkpoint import load_checkpoint

    tensors, meta = load_checkpoint(path)
    nets = NetworkSet(PriorSpec(**meta["prior"]), width=meta["width"])
    nets.load_state_dict({k: v for k, v in tensors.items() if k.startswith(("param/", "buffer/"))})
    return nets, tensors, meta
