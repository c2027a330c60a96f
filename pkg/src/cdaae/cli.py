"""``cdaae`` command line: train, adapt, generate, transform, eval, grid."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .adapt import adapt, save_result
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, emit_config, parse_config
from .datasets import DATA_ROOT_ENV, IDXError
from .evaluate import evaluate, image_grid, prior_grid, style_grid, train_oracle_classifier, transform_grid
from .nets import NetworkSet, check_domain, load_nets, other_domain
from .trainer import train_run

MANIFEST = "manifest.json"
LOCK = ".lock"


class CLIError(Exception):
    pass


# -- run directory -------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list[str]) -> None:
    files = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name not in (MANIFEST, LOCK)
    }
    doc = {"command": command, "argv": argv, "version": __version__, "files": files}
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@contextmanager
def run_dir(out: Path, cfg: RunConfig, command: str, argv: list[str]) -> Iterator[Path]:
    """Lock ``out``, snapshot the resolved config and seed, then write the manifest."""
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {out}: {exc.strerror}") from None
    lock = FileLock(str(out / LOCK))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise CLIError(f"output directory {out} is in use by another run") from None
    try:
        (out / "config.resolved").write_text(emit_config(cfg))
        (out / "seed").write_text(f"{cfg['seed']}\n")
        yield out
        write_manifest(out, command, argv)
    finally:
        lock.release()
        (out / LOCK).unlink(missing_ok=True)


# -- helpers ---------------------------------------------------------------------


def _load_config(args, command: str) -> RunConfig:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise CLIError(f"cannot read config {args.config}: {exc.strerror}") from None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    return parse_config(text, command, overrides)


NEEDS_CHECKPOINT = ("generate", "transform", "eval")


def _check_checkpoint(args) -> None:
    if args.command in NEEDS_CHECKPOINT and not args.checkpoint:
        raise CLIError(f"{args.command} needs --checkpoint")
    if args.checkpoint and not Path(args.checkpoint).is_file():
        raise CLIError(f"checkpoint {args.checkpoint} not found")


def _load_checkpoint(args) -> NetworkSet:
    nets, _, _ = load_nets(args.checkpoint)
    return nets


def _save_grid(out: Path, name: str, images: np.ndarray, rows: int, cols: int, upscale: int, **kw) -> Path:
    np.save(out / f"{name}.npy", images)
    path = out / f"{name}.png"
    image_grid(images, rows, cols, path, upscale=upscale, **kw)
    return path


# -- commands --------------------------------------------------------------------


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    tc = cfg.train
    trainer = train_run(tc, cfg.dataset(), out, resume=args.checkpoint)
    print(f"trained {trainer.step} steps; checkpoint {out / 'final.ckpt'}")


def cmd_adapt(args, cfg: RunConfig, out: Path) -> None:
    ac = cfg.adapt
    data = cfg.dataset()

    def show(row) -> None:
        print(f"epoch {row.epoch:4d}  t={row.t:.6f}  |T'|={row.pseudo_labeled:6d}  acc={row.target_accuracy:.4f}", flush=True)

    result = adapt(ac, data.train_a, data.train_b, data.test_b, on_epoch=show)
    save_result(result, out, ac)
    print(f"source-only {result.baseline_accuracy:.4f}; adapted {result.final_accuracy:.4f}")


def cmd_generate(args, cfg: RunConfig, out: Path) -> None:
    nets = _load_checkpoint(args)
    domain = check_domain(args.domain)
    images, rows, cols = prior_grid(nets, domain, args.styles, np.random.default_rng(cfg["seed"]))
    print(_save_grid(out, f"prior-{domain}", images, rows, cols, args.upscale))


def cmd_transform(args, cfg: RunConfig, out: Path) -> None:
    nets = _load_checkpoint(args)
    src = check_domain(args.source)
    dst = check_domain(args.target) if args.target else other_domain(src)
    data = cfg.dataset()
    inputs = data.test(src).images[: args.inputs]
    if args.style_source == "prior":
        images, rows, cols = transform_grid(nets, inputs, dst, args.styles, np.random.default_rng(cfg["seed"]))
        path = _save_grid(out, f"transform-{src}2{dst}", images, rows, cols, args.upscale, sep_after_col=1)
    else:
        styles = data.test(dst).images[: args.styles]
        images, rows, cols = style_grid(nets, inputs, styles, dst)
        path = _save_grid(out, f"styles-{src}-{dst}", images, rows, cols, args.upscale, sep_after_col=1, sep_after_row=1, blank=[0])
    print(path)


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    nets = _load_checkpoint(args)
    data = cfg.dataset()
    k = nets.prior.num_classes
    oracles = {
        d: train_oracle_classifier(data.train(d), data.test(d), k, args.oracle_steps, seed=cfg["seed"] + i)
        for i, d in enumerate(("A", "B"))
    }
    report = evaluate(nets, oracles, data, args.n_per_class, cfg["seed"])
    (out / "eval.csv").write_text(report.to_csv())
    table = report.table()
    (out / "eval.txt").write_text(table + "\n")
    print(table)


def cmd_grid(args, cfg: RunConfig, out: Path) -> None:
    try:
        images = np.load(args.samples)
    except (OSError, ValueError) as exc:
        raise CLIError(f"cannot read samples {args.samples}: {exc}") from None
    rows = args.rows
    cols = args.cols or (len(images) // rows if rows else 0)
    if not rows or not cols:
        raise CLIError("grid needs --rows (and --cols unless the count divides evenly)")
    print(_save_grid(out, Path(args.samples).stem + "-grid", images, rows, cols, args.upscale, sep_after_col=args.sep_after_col, sep_after_row=args.sep_after_row))


COMMANDS = {
    "train": cmd_train,
    "adapt": cmd_adapt,
    "generate": cmd_generate,
    "transform": cmd_transform,
    "eval": cmd_eval,
    "grid": cmd_grid,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cdaae",
        description="Cross-domain adversarial auto-encoder experiments.",
        epilog=f"Relative IDX paths are resolved against ${DATA_ROOT_ENV} when it is set.",
    )
    p.add_argument("--version", action="version", version=f"cdaae {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def common(name: str, help: str) -> argparse.ArgumentParser:
        s = sub.add_parser(name, help=help, description=help)
        s.add_argument("--config", help="key = value config file (defaults when omitted)")
        s.add_argument("--out", required=True, type=Path, help="run directory")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--checkpoint", help="checkpoint to load (train: resume from it)")
        s.add_argument("--steps", type=int, help="override the training step budget")
        s.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        return s

    common("train", "train the network set")
    common("adapt", "pseudo-label domain adaptation from A to B")
    g = common("generate", "grid of prior samples: rows sweep content, columns fix a style")
    g.add_argument("--domain", default="A")
    g.add_argument("--styles", type=int, default=10)
    g.add_argument("--upscale", type=int, default=1)
    t = common("transform", "per-input grids of transformed images")
    t.add_argument("--source", default="A")
    t.add_argument("--target", help="defaults to the other domain")
    t.add_argument("--inputs", type=int, default=8)
    t.add_argument("--styles", type=int, default=6)
    t.add_argument("--style-source", choices=("prior", "images"), default="prior")
    t.add_argument("--upscale", type=int, default=1)
    e = common("eval", "oracle-classifier accuracy on generated images")
    e.add_argument("--n-per-class", type=int, default=100)
    e.add_argument("--oracle-steps", type=int, default=300)
    r = common("grid", "render stored samples (.npy, N x 3 x 32 x 32) to PNG")
    r.add_argument("--samples", required=True)
    r.add_argument("--rows", type=int)
    r.add_argument("--cols", type=int)
    r.add_argument("--sep-after-col", type=int)
    r.add_argument("--sep-after-row", type=int)
    r.add_argument("--upscale", type=int, default=1)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args, args.command)
        _check_checkpoint(args)
        with run_dir(args.out, cfg, args.command, argv) as out:
            COMMANDS[args.command](args, cfg, out)
    except (CLIError, ConfigError, CheckpointError, IDXError, ValueError, KeyError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"cdaae: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
