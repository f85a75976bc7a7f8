"""`lffont` command-line entry point."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ConfigError, RunConfig
from .decomposition import component_frequency, load_table
from .glyphset import (
    DatasetManifest,
    GlyphStore,
    ManifestConfig,
    build_manifest,
    glyph_from_png,
    open_font,
    render_glyph,
    write_corpus,
)
from .glyphset.render import to_uint8

log = logging.getLogger("lffont")


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _snapshot(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    """Resolved flags plus input fingerprints, written into the run directory."""
    out.mkdir(parents=True, exist_ok=True)
    info = {"command": args.command, "args": {k: _jsonable(v) for k, v in vars(args).items() if k != "func"}}
    if extra:
        info.update(extra)
    (out / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str), encoding="utf-8")


def _jsonable(v):
    return str(v) if isinstance(v, Path) else v


def _load_manifest_and_table(manifest_path, table_path=None):
    if manifest_path is None:
        raise CommandError("--manifest is required")
    manifest = DatasetManifest.load(manifest_path)
    table_path = Path(table_path) if table_path else manifest.root / "table.tsv"
    if not table_path.exists():
        raise CommandError(f"decomposition table not found: {table_path} (pass --table)")
    table = load_table(table_path)
    if table.fingerprint() != manifest.table_fingerprint:
        raise CommandError("the manifest was built from a different decomposition table")
    return manifest, table, table_path


def _load_bundle(ckpt, table):
    from .networks import load_checkpoint

    if ckpt is None:
        raise CommandError("--ckpt is required")
    bundle, _ = load_checkpoint(ckpt, table)
    return bundle.eval()


def _save_png(glyph, path: Path) -> None:
    Image.fromarray(to_uint8(glyph.pixels)).save(path)


def _save_grid(glyphs, path: Path, cols: int = 10) -> None:
    if not glyphs:
        return
    r = glyphs[0].pixels.shape[0]
    rows = (len(glyphs) + cols - 1) // cols
    grid = np.full((rows * r, min(cols, len(glyphs)) * r), 255, dtype=np.uint8)
    for i, g in enumerate(glyphs):
        y, x = divmod(i, cols)
        grid[y * r:(y + 1) * r, x * r:(x + 1) * r] = to_uint8(g.pixels)
    Image.fromarray(grid).save(path)


def _read_refs(ref_dir, manifest, table, label_mode):
    from .inference import ReferenceSet

    ref_dir = Path(ref_dir)
    paths = sorted(p for p in ref_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise CommandError(f"no PNG reference glyphs in {ref_dir}")
    glyphs = [glyph_from_png(p, manifest.resolution, table=table) for p in paths]
    if label_mode == "ground_truth":
        unlabeled = [p.name for p, g in zip(paths, glyphs) if not hasattr(g.character, "id")]
        if unlabeled:
            raise CommandError(f"reference file names must name a known character: {unlabeled[:3]}")
    return ReferenceSet(glyphs, label_mode)


def _read_chars(chars_arg: str | None, use_all: bool, manifest, table) -> list[int]:
    if use_all:
        return list(manifest.available_chars(manifest.source_style))
    if chars_arg is None:
        raise CommandError("pass --chars <file> or --all")
    path = Path(chars_arg)
    text = path.read_text(encoding="utf-8") if path.exists() else chars_arg
    return [ord(ch) for ch in text if not ch.isspace()]


def _char_arg(value: str) -> int:
    if len(value) == 1:
        return ord(value)
    text = value[2:] if value.upper().startswith("U+") else value
    try:
        return int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a character or hex codepoint: {value!r}") from None


def _seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)


# ---------------------------------------------------------------- commands

def cmd_build_dataset(args) -> int:
    out = Path(args.out)
    if args.synthetic:
        font_dir, table_path = write_corpus(out / "corpus", args.n_styles, args.n_chars, args.n_components,
                                            seed=args.seed, missing_rate=args.missing_rate)
    else:
        if args.fonts is None or args.table is None:
            raise CommandError("--fonts and --table are required (or use --synthetic)")
        font_dir, table_path = Path(args.fonts), Path(args.table)
    table = load_table(table_path)
    cfg = ManifestConfig(
        resolution=args.resolution, source_font=args.source_font, n_test_styles=args.n_test_styles,
        test_styles=args.test_styles.split(",") if args.test_styles else None,
        unseen_ratio=args.unseen_ratio, n_characters=args.n_characters, seed=args.seed,
    )
    manifest = build_manifest(font_dir, table, cfg, out_dir=out)
    if Path(table_path).resolve() != (out / "table.tsv").resolve():
        shutil.copyfile(table_path, out / "table.tsv")
    _snapshot(out, args, {"table_fingerprint": table.fingerprint(),
                          "manifest_sha": _file_digest(out / "manifest.json")})
    print(f"{out / 'manifest.json'}: {len(manifest.train_styles)} train / {len(manifest.test_styles)} test styles, "
          f"{len(manifest.seen)} seen / {len(manifest.unseen)} unseen characters")
    return 0


def cmd_train(args) -> int:
    from .networks import load_checkpoint
    from .trainer import Trainer

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.override(manifest=args.manifest, table=args.table, out=args.out, seed=args.seed,
                 phase1_iters=args.phase1_iters, phase2_iters=args.phase2_iters, batch_size=args.batch_size)
    if cfg.out is None:
        raise CommandError("--out is required (flag or config file)")
    manifest, table, table_path = _load_manifest_and_table(cfg.manifest, cfg.table)
    tcfg = cfg.train_config(manifest.resolution)
    out = Path(cfg.out)
    _seed_all(tcfg.seed)
    resolved = cfg.to_dict()
    resolved["train_resolved"] = tcfg.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(resolved, indent=2, default=str), encoding="utf-8")
    _snapshot(out, args, {"table_fingerprint": table.fingerprint(),
                          "manifest_sha": _file_digest(manifest.root / "manifest.json")})

    if args.resume:
        trainer = Trainer.resume(args.resume, manifest, table, tcfg, out_dir=out)
    elif args.phase == "2":
        if args.ckpt is None:
            raise CommandError("phase 2 needs --ckpt pointing at a phase-1 checkpoint")
        bundle, _ = load_checkpoint(args.ckpt, table)
        if bundle.phase != 1:
            raise CommandError(f"{args.ckpt} is a phase-{bundle.phase} checkpoint; phase 2 needs phase 1")
        trainer = Trainer(manifest, table, tcfg, bundle=bundle, out_dir=out)
    else:
        trainer = Trainer(manifest, table, tcfg, out_dir=out)

    if tcfg.end_to_end:
        trainer.run(2, tcfg.phase1_iters + tcfg.phase2_iters)
        trainer.save(out / "final.pt")
    elif args.phase in ("1", "both"):
        trainer.run(1, max(tcfg.phase1_iters - trainer.step_count, 0))
        trainer.save(out / "phase1.pt")
        if args.phase == "both":
            trainer.run(2, tcfg.phase2_iters)
            trainer.save(out / "final.pt")
    else:
        trainer.run(2, tcfg.phase2_iters)
        trainer.save(out / "final.pt")
    last = trainer.history[-1] if trainer.history else {}
    print(f"trained {trainer.step_count} iterations; last L1 {last.get('l1', float('nan')):.4f}; "
          f"checkpoints in {out}")
    return 0


def cmd_generate(args) -> int:
    from .inference import FontGenerator, extract_style_factor, generate_cross_lingual, generate_library

    manifest, table, _ = _load_manifest_and_table(args.manifest, args.table)
    bundle = _load_bundle(args.ckpt, table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    label_mode = "predicted" if args.labels == "pred" else "ground_truth"

    if args.cross_lingual:
        refs = _read_refs(args.refs, manifest, table, "predicted")
        if args.source_font:
            font = open_font(args.source_font)
            targets = [render_glyph(font, cp, manifest.resolution) for cp in
                       _read_chars(args.chars, False, manifest, table)]
        else:
            store = GlyphStore(manifest)
            targets = [store.glyph(manifest.source_style, cp) for cp in
                       _read_chars(args.chars, args.all, manifest, table)]
        glyphs = []
        for t in targets:
            g = generate_cross_lingual(bundle, refs, t)
            cp = t.character.codepoint if hasattr(t.character, "codepoint") else int(t.character)
            _save_png(g, out / f"{cp:04x}.png")
            glyphs.append(g)
        _save_grid(glyphs, out / "grid.png")
        _snapshot(out, args, {"generated": len(glyphs)})
        print(f"generated {len(glyphs)} glyphs in {out}")
        return 0

    refs = _read_refs(args.refs, manifest, table, label_mode)
    chars = _read_chars(args.chars, args.all, manifest, table)
    gen = FontGenerator(bundle, manifest, table)
    result = generate_library(bundle, refs, chars, manifest, table, generator=gen)
    for g in result.glyphs:
        _save_png(g, out / f"{g.character.codepoint:04x}.png")
    _save_grid(result.glyphs, out / "grid.png")
    report = {
        "generated": len(result.glyphs),
        "failures": {f"{c:04x}" if isinstance(c, int) else str(c): why for c, why in result.failures.items()},
        "low_confidence": [f"{c:04x}" if isinstance(c, int) else str(c) for c in result.low_confidence],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    _snapshot(out, args, {"table_fingerprint": table.fingerprint()})
    print(f"generated {len(result.glyphs)} glyphs ({len(result.failures)} failed) in {out}")
    return 0


def cmd_interpolate(args) -> int:
    from .inference import interpolate_character, interpolate_style

    manifest, table, _ = _load_manifest_and_table(args.manifest, args.table)
    bundle = _load_bundle(args.ckpt, table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.refs_b is not None:
        if args.char is None:
            raise CommandError("style interpolation needs --char")
        ra = _read_refs(args.refs, manifest, table, "ground_truth")
        rb = _read_refs(args.refs_b, manifest, table, "ground_truth")
        glyphs = interpolate_style(bundle, ra, rb, args.char, args.steps, manifest, table)
    else:
        if args.char_a is None or args.char_b is None:
            raise CommandError("pass --refs-b and --char (style) or --char-a and --char-b (character)")
        refs = _read_refs(args.refs, manifest, table, "ground_truth")
        glyphs = interpolate_character(bundle, refs, args.char_a, args.char_b, args.steps, manifest, table)
    for i, g in enumerate(glyphs):
        _save_png(g, out / f"step{i:02d}.png")
    _save_grid(glyphs, out / "grid.png", cols=len(glyphs))
    _snapshot(out, args)
    print(f"wrote {len(glyphs)} interpolation steps to {out}")
    return 0


def cmd_mix(args) -> int:
    from .inference import fontmix

    manifest, table, _ = _load_manifest_and_table(args.manifest, args.table)
    bundle = _load_bundle(args.ckpt, table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x1 = glyph_from_png(args.x1, manifest.resolution, table=table)
    x2 = glyph_from_png(args.x2, manifest.resolution, table=table)
    for name, g in (("--x1", x1), ("--x2", x2)):
        if not hasattr(g.character, "id"):
            raise CommandError(f"{name} file name must name a known character")
    lam = args.lam
    if lam is None:
        lam = float(np.random.default_rng(args.seed).beta(args.alpha, args.alpha))
    glyph, label = fontmix(bundle, x1, x2, args.char, lam, args.mode, manifest, table)
    _save_png(glyph, out / "mix.png")
    info = {"lam": lam, "mode": args.mode,
            "label": {f"{table.character_by_id(k).codepoint:04x}": w for k, w in label.weights.items()}}
    (out / "label.json").write_text(json.dumps(info, indent=2), encoding="utf-8")
    _snapshot(out, args)
    print(json.dumps(info))
    return 0


def cmd_evaluate(args) -> int:
    from .evalsuite import build_evaluators, evaluate_run

    cfg = RunConfig.load(args.config) if args.config else RunConfig(seed=args.seed or 0)
    manifest, table, _ = _load_manifest_and_table(args.manifest or cfg.manifest, args.table or cfg.table)
    bundle = _load_bundle(args.ckpt, table)
    ecfg = cfg.eval_config()
    if args.eval_epochs is not None:
        ecfg.epochs = args.eval_epochs
    seed = args.seed if args.seed is not None else cfg.seed
    _seed_all(seed)
    store = GlyphStore(manifest)
    evaluators = build_evaluators(manifest, table, ecfg, store=store)
    blocks = evaluate_run(bundle, manifest, table, n_ref=args.n_ref, n_repeats=args.repeats, seed=seed,
                          evaluators=evaluators, store=store)
    report = {
        "seen": blocks["seen"].to_dict() if "seen" in blocks else None,
        "unseen": blocks["unseen"].to_dict() if "unseen" in blocks else None,
        "config": {"n_ref": args.n_ref, "repeats": args.repeats, "seed": seed, "eval": vars(ecfg),
                   "ckpt_sha": _file_digest(args.ckpt), "table_fingerprint": table.fingerprint()},
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(json.dumps({k: report[k] for k in ("seen", "unseen")}, indent=2))
    return 0


def cmd_decomp(args) -> int:
    table = load_table(args.table)
    if args.frequency:
        freq = component_frequency(table)
        for u, n in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0].id)):
            print(f"{u.char}\tU+{u.codepoint:04X}\t{n}")
        return 0
    if args.char is None:
        print(f"{len(table)} characters, {table.n_components} components, fingerprint {table.fingerprint()}")
        return 0
    comps = table.decompose(args.char)
    print(f"{chr(args.char)}\t" + " ".join(f"{u.char}(U+{u.codepoint:04X})" for u in comps))
    return 0


def cmd_augment_train(args) -> int:
    from .augment import AugmentConfig, augment_train

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    manifest, table, _ = _load_manifest_and_table(args.manifest or cfg.manifest, args.table or cfg.table)
    kw = dict(cfg.augment)
    for key in ("mode", "epochs", "batch_size", "n_chars", "images_per_char", "lr"):
        value = getattr(args, key)
        if value is not None:
            kw[key] = value
    kw["seed"] = args.seed if args.seed is not None else kw.get("seed", cfg.seed)
    acfg = AugmentConfig(**kw)
    bundle = _load_bundle(args.ckpt, table) if args.ckpt else None
    _seed_all(acfg.seed)
    _, report = augment_train(acfg, manifest, table, bundle=bundle)
    result = {**report.to_dict(), "config": vars(acfg)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, default=str), encoding="utf-8")
    print(f"{report.mode}: test accuracy {report.accuracy:.4f} on {report.n_test} glyphs")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lffont", description="Few-shot glyph generation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("build-dataset", help="rasterize fonts into a glyph dataset with a manifest")
    s.add_argument("--fonts")
    s.add_argument("--table")
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--source-font")
    s.add_argument("--test-styles", help="comma-separated style names held out for testing")
    s.add_argument("--n-test-styles", type=int, default=0)
    s.add_argument("--unseen-ratio", type=float, default=0.1)
    s.add_argument("--n-characters", type=int)
    s.add_argument("--synthetic", action="store_true", help="generate a synthetic script and fonts first")
    s.add_argument("--n-styles", type=int, default=20)
    s.add_argument("--n-chars", type=int, default=300)
    s.add_argument("--n-components", type=int, default=40)
    s.add_argument("--missing-rate", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="two-phase training")
    s.add_argument("--phase", choices=["1", "2", "both"], default="both")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--table")
    s.add_argument("--out")
    s.add_argument("--ckpt", help="phase-1 checkpoint to start phase 2 from")
    s.add_argument("--resume", help="checkpoint with trainer state to continue from")
    s.add_argument("--phase1-iters", type=int)
    s.add_argument("--phase2-iters", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate glyphs from reference images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--table")
    s.add_argument("--refs", required=True, help="directory of reference PNGs named by character")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--chars", help="file (or literal string) of characters to generate")
    g.add_argument("--all", action="store_true", help="every character of the source style")
    s.add_argument("--out", required=True)
    s.add_argument("--labels", choices=["gt", "pred"], default="gt")
    s.add_argument("--cross-lingual", action="store_true")
    s.add_argument("--source-font", help="font supplying target glyphs in cross-lingual mode")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("interpolate", help="style or character interpolation")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--table")
    s.add_argument("--refs", required=True)
    s.add_argument("--refs-b", help="second reference set (style interpolation)")
    s.add_argument("--char", type=_char_arg)
    s.add_argument("--char-a", type=_char_arg)
    s.add_argument("--char-b", type=_char_arg)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("mix", help="mix two glyphs in style-factor space")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--table")
    s.add_argument("--x1", required=True)
    s.add_argument("--x2", required=True)
    s.add_argument("--char", type=_char_arg, help="target character for style mixing (default: x1's)")
    s.add_argument("--lam", type=float, help="mixing ratio; drawn from Beta(alpha, alpha) when omitted")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--mode", choices=["style", "character"], default="style")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("evaluate", help="accuracy / FID / p_unseen report")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest")
    s.add_argument("--table")
    s.add_argument("--config")
    s.add_argument("--n-ref", type=int, default=8)
    s.add_argument("--repeats", type=int, default=50)
    s.add_argument("--eval-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("decomp", help="inspect a decomposition table")
    s.add_argument("--table", required=True)
    s.add_argument("--char", type=_char_arg)
    s.add_argument("--frequency", action="store_true", help="list components by character count")
    s.set_defaults(func=cmd_decomp)

    s = sub.add_parser("augment-train", help="character classifier with mix augmentation")
    s.add_argument("--manifest")
    s.add_argument("--table")
    s.add_argument("--config")
    s.add_argument("--ckpt", help="generation bundle (required for fontmix modes)")
    s.add_argument("--mode", choices=["vanilla", "cutmix", "fontmix-style", "fontmix-char", "fontmix-both"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--n-chars", type=int)
    s.add_argument("--images-per-char", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment_train)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, FileNotFoundError, KeyError, ValueError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lffont {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
