"""Two-phase training.

Phase 1 feeds raw component-wise style features to the generator and the
component classifier, using coverage-constrained single-style batches.
Phase 2 swaps in features rebuilt from style and component factors, uses
mixed-style batches, adds the factor consistency term and also rebuilds
one reference per example from its raw features.

Each iteration performs one discriminator update followed by one update of
everything else.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .decomposition import DecompositionTable
from .glyphset import DatasetManifest, GlyphStore
from .losses import (
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    component_cls_loss,
    consistency_loss,
    feature_matching_loss,
    l1_loss,
    total_loss,
)
from .networks import ArchConfig, ModelBundle, load_checkpoint, reconstruct_feature, save_checkpoint
from .sampler import BatchSampler, TrainingExample

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase1_iters: int = 5000
    phase2_iters: int = 2000
    batch_size: int = 8
    n_ref: int = 3
    lr_d: float = 8e-4
    lr_g: float = 2e-4
    betas: tuple[float, float] = (0.0, 0.99)
    weights: LossWeights = field(default_factory=LossWeights)
    char_cls_weight: float = 1.0
    adv_scale: float = 1.0          # multiplies the generator's adversarial term
    grad_clip: float = 0.0          # max global grad norm per update, 0 = off
    lr_schedule: str = "constant"   # or "cosine": per-phase decay down to lr_min_ratio
    lr_min_ratio: float = 0.1
    consist_reduction: str = "mean"
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    arch: ArchConfig = field(default_factory=lambda: ArchConfig(resolution=64, base=16, n_down=2, disc_base=16))
    max_retries: int = 50
    end_to_end: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.arch, dict):
            self.arch = ArchConfig(**self.arch)
        self.betas = tuple(self.betas)
        if self.phase1_iters < 0 or self.phase2_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be > 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 0 <= self.lr_min_ratio <= 1:
            raise ValueError("lr_min_ratio must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- batch plumbing

@dataclass
class _Batch:
    refs: torch.Tensor
    ref_styles: torch.Tensor
    ref_chars: torch.Tensor
    source: torch.Tensor
    target: torch.Tensor
    target_styles: torch.Tensor
    target_chars: torch.Tensor
    pair_ref: torch.Tensor        # (P,) reference index of each (ref, component) pair
    pair_comp: torch.Tensor       # (P,) component id
    gen_example: torch.Tensor     # (G,) example index of each target component occurrence
    gen_comp: torch.Tensor        # (G,) component id
    agg_raw: torch.Tensor         # (B, P) phase-1 aggregation of pair features
    tsrc_example: torch.Tensor    # (Q,) distinct target components per example
    tsrc_comp: torch.Tensor
    agg_src: torch.Tensor         # (B, Q) multiplicity of each distinct target component
    style_pool: torch.Tensor      # (B, P) averaging of style factors over target-style refs
    recon_agg: torch.Tensor | None = None   # (B, P) raw features of the flagged reference
    recon_source: torch.Tensor | None = None
    recon_target: torch.Tensor | None = None
    recon_styles: torch.Tensor | None = None
    recon_chars: torch.Tensor | None = None


def _stack(glyphs, dtype) -> torch.Tensor:
    return torch.from_numpy(np.stack([g.pixels for g in glyphs])[:, None]).to(dtype)


def collate(batch: list[TrainingExample], dtype=torch.float32) -> _Batch:
    B = len(batch)
    refs, ref_styles, ref_chars = [], [], []
    pair_ref, pair_comp, pair_owner = [], [], []
    gen_example, gen_comp = [], []
    tsrc_example, tsrc_comp, src_mult = [], [], []
    for b, ex in enumerate(batch):
        for glyph, comps in zip(ex.references, ex.reference_components):
            r = len(refs)
            refs.append(glyph)
            ref_styles.append(glyph.style.id)
            ref_chars.append(glyph.character.id)
            for u in sorted({u.id for u in comps}):
                pair_ref.append(r)
                pair_comp.append(u)
                pair_owner.append(b)
        counts: dict[int, int] = {}
        for u in ex.target_components:
            gen_example.append(b)
            gen_comp.append(u.id)
            counts[u.id] = counts.get(u.id, 0) + 1
        for u in sorted(counts):
            tsrc_example.append(b)
            tsrc_comp.append(u)
            src_mult.append(counts[u])

    P, Q = len(pair_ref), len(tsrc_example)
    agg_raw = torch.zeros(B, P, dtype=dtype)
    style_pool = torch.zeros(B, P, dtype=dtype)
    agg_src = torch.zeros(B, Q, dtype=dtype)
    for q, (b, m) in enumerate(zip(tsrc_example, src_mult)):
        agg_src[b, q] = m
    n_ref_per = [len(ex.references) for ex in batch]
    offsets = np.concatenate([[0], np.cumsum(n_ref_per)])
    for b, ex in enumerate(batch):
        mine = [p for p in range(P) if pair_owner[p] == b]
        # raw aggregation: each target component occurrence averages the refs holding it
        for u in tsrc_comp_of(tsrc_example, tsrc_comp, b):
            holders = [p for p in mine if pair_comp[p] == u]
            if holders:
                m = src_mult[_index_of(tsrc_example, tsrc_comp, b, u)]
                for p in holders:
                    agg_raw[b, p] = m / len(holders)
        tstyle = ex.target.style.id
        same = [p for p in mine if ref_styles[pair_ref[p]] == tstyle]
        for p in same:
            style_pool[b, p] = 1.0 / len(same)

    out = _Batch(
        refs=_stack(refs, dtype),
        ref_styles=torch.tensor(ref_styles),
        ref_chars=torch.tensor(ref_chars),
        source=_stack([ex.source for ex in batch], dtype),
        target=_stack([ex.target for ex in batch], dtype),
        target_styles=torch.tensor([ex.target.style.id for ex in batch]),
        target_chars=torch.tensor([ex.target.character.id for ex in batch]),
        pair_ref=torch.tensor(pair_ref, dtype=torch.long),
        pair_comp=torch.tensor(pair_comp, dtype=torch.long),
        gen_example=torch.tensor(gen_example, dtype=torch.long),
        gen_comp=torch.tensor(gen_comp, dtype=torch.long),
        agg_raw=agg_raw,
        tsrc_example=torch.tensor(tsrc_example, dtype=torch.long),
        tsrc_comp=torch.tensor(tsrc_comp, dtype=torch.long),
        agg_src=agg_src,
        style_pool=style_pool,
    )
    if all(ex.recon_index is not None for ex in batch):
        recon_agg = torch.zeros(B, P, dtype=dtype)
        for b, ex in enumerate(batch):
            r = int(offsets[b]) + ex.recon_index
            comps = ex.reference_components[ex.recon_index]
            for u in {u.id for u in comps}:
                p = next(p for p in range(P) if pair_ref[p] == r and pair_comp[p] == u)
                recon_agg[b, p] = sum(1 for v in comps if v.id == u)
        out.recon_agg = recon_agg
        out.recon_source = _stack([ex.recon_source for ex in batch], dtype)
        out.recon_target = _stack([ex.references[ex.recon_index] for ex in batch], dtype)
        out.recon_styles = torch.tensor([ex.references[ex.recon_index].style.id for ex in batch])
        out.recon_chars = torch.tensor([ex.references[ex.recon_index].character.id for ex in batch])
    return out


def tsrc_comp_of(tsrc_example, tsrc_comp, b):
    return [u for e, u in zip(tsrc_example, tsrc_comp) if e == b]


def _index_of(tsrc_example, tsrc_comp, b, u):
    for i, (e, v) in enumerate(zip(tsrc_example, tsrc_comp)):
        if e == b and v == u:
            return i
    raise KeyError((b, u))


def _matmul_features(weights: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    return (weights @ feats.flatten(1)).view(weights.shape[0], *feats.shape[1:])


# ---------------------------------------------------------------- trainer

class Trainer:
    """Owns the bundle, optimizers, sampler RNG and loss trace."""

    def __init__(self, manifest: DatasetManifest, table: DecompositionTable, config: TrainConfig,
                 bundle: ModelBundle | None = None, store: GlyphStore | None = None,
                 out_dir: str | Path | None = None):
        if manifest.table_fingerprint != table.fingerprint():
            raise ValueError("manifest was built with a different decomposition table")
        if config.arch.resolution != manifest.resolution:
            raise ValueError(
                f"architecture resolution {config.arch.resolution} != manifest resolution {manifest.resolution}"
            )
        self.manifest = manifest
        self.table = table
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.store = store or GlyphStore(manifest)
        self.bundle = bundle or ModelBundle(
            config.arch, table.n_components, len(manifest.train_styles), len(table),
            table.fingerprint(), phase=1, seed=config.seed,
        )
        if self.bundle.table_fingerprint != table.fingerprint():
            raise ValueError("bundle was trained with a different decomposition table")
        self.sampler = BatchSampler(manifest, table, n_ref=config.n_ref, seed=config.seed,
                                    store=self.store, max_retries=config.max_retries)
        self.opt_g = torch.optim.Adam(self.bundle.generator_parameters(), lr=config.lr_g, betas=config.betas)
        self.opt_d = torch.optim.Adam(self.bundle.discriminator_parameters(), lr=config.lr_d, betas=config.betas)
        self.step_count = 0
        self.history: list[dict] = []

    # ------------------------------------------------------------ forward passes
    def _pair_features(self, batch: _Batch) -> torch.Tensor:
        enc = self.bundle.style_enc
        h = enc.trunk(batch.refs)
        return enc.head(h[batch.pair_ref], batch.pair_comp)

    def _generated_features(self, fake: torch.Tensor, batch: _Batch) -> torch.Tensor:
        enc = self.bundle.style_enc
        return enc.head(enc.trunk(fake)[batch.gen_example], batch.gen_comp)

    def _forward(self, batch: _Batch, phase: int) -> dict:
        b = self.bundle
        f_pairs = self._pair_features(batch)
        f_content = b.content_enc(batch.source)
        out = {"f_pairs": f_pairs}
        if phase == 1:
            f_sc = _matmul_features(batch.agg_raw, f_pairs)
            out["fake"] = b.gen(f_sc, f_content)
            out["cls_feats"], out["cls_labels"] = f_pairs, batch.pair_comp
            out["real"], out["styles"], out["chars"] = batch.target, batch.target_styles, batch.target_chars
            return out

        enc = b.style_enc
        f_src = enc.head(enc.trunk(batch.source)[batch.tsrc_example], batch.tsrc_comp)
        zs_pairs, zu_pairs = b.fact_s(f_pairs), b.fact_u(f_pairs)
        zs_src, zu_src = b.fact_s(f_src), b.fact_u(f_src)
        z_style = _matmul_features(batch.style_pool, zs_pairs)
        f_rec = reconstruct_feature(z_style[batch.tsrc_example], zu_src)
        f_sc = _matmul_features(batch.agg_src, f_rec)
        fake = b.gen(f_sc, f_content)

        src_style = self.manifest.source_style.id
        out["consist_style"] = (torch.cat([zs_pairs, zs_src]),
                                torch.cat([batch.ref_styles[batch.pair_ref],
                                           torch.full((len(zs_src),), src_style, dtype=torch.long)]))
        out["consist_comp"] = (torch.cat([zu_pairs, zu_src]), torch.cat([batch.pair_comp, batch.tsrc_comp]))
        cls_feats, cls_labels = [f_rec], [batch.tsrc_comp]
        reals, styles, chars, fakes = [batch.target], [batch.target_styles], [batch.target_chars], [fake]
        if batch.recon_agg is not None:
            recon = b.gen(_matmul_features(batch.recon_agg, f_pairs), b.content_enc(batch.recon_source))
            fakes.append(recon)
            reals.append(batch.recon_target)
            styles.append(batch.recon_styles)
            chars.append(batch.recon_chars)
            cls_feats.append(f_pairs)
            cls_labels.append(batch.pair_comp)
        out["fake_target"] = fake
        out["fake"] = torch.cat(fakes)
        out["real"], out["styles"], out["chars"] = torch.cat(reals), torch.cat(styles), torch.cat(chars)
        out["cls_feats"], out["cls_labels"] = torch.cat(cls_feats), torch.cat(cls_labels)
        return out

    # ------------------------------------------------------------ one iteration
    def _d_loss(self, out: dict) -> torch.Tensor:
        b = self.bundle
        rs, rc, _ = b.disc(out["real"], out["styles"], out["chars"])
        fs, fc, _ = b.disc(out["fake"].detach(), out["styles"], out["chars"])
        return adv_loss_d((rs, rc), (fs, fc))

    def _g_terms(self, batch: _Batch, out: dict, phase: int) -> dict:
        """Generator-side loss terms (unweighted) plus the auxiliary char CE."""
        b = self.bundle
        fake, real = out["fake"], out["real"]
        styles, chars = out["styles"], out["chars"]
        gs, gc, fake_feats = b.disc(fake, styles, chars)
        with torch.no_grad():
            _, _, real_feats = b.disc(real, styles, chars)
        n = len(batch.target)
        gen_feats = self._generated_features(fake[:n], batch)
        parts = {
            "adv_g": adv_loss_g((gs, gc)),
            "l1": l1_loss(fake, real),
            "feat": feature_matching_loss(real_feats, fake_feats),
            "cls": component_cls_loss(b.comp_cls, out["cls_feats"], out["cls_labels"],
                                      gen_feats, batch.gen_comp, batch_size=n),
        }
        if phase == 2:
            zs, gs_ = out["consist_style"]
            zu, gu = out["consist_comp"]
            parts["consist"] = consistency_loss(zs, gs_, zu, gu, reduction=self.config.consist_reduction)
        char_logits = b.char_cls(torch.cat([batch.refs, batch.target]))
        parts["char_ce"] = F.cross_entropy(char_logits, torch.cat([batch.ref_chars, batch.target_chars]))
        return parts

    def loss_terms(self, batch: list[TrainingExample], phase: int) -> dict:
        """Every loss term for one batch, without updating anything."""
        batch = collate(batch, self.bundle.dtype)
        out = self._forward(batch, phase)
        return dict(self._g_terms(batch, out, phase), adv_d=self._d_loss(out))

    def lr_factor(self, phase: int) -> float:
        """Learning-rate multiplier for the next update of `phase`."""
        cfg = self.config
        if cfg.lr_schedule == "constant":
            return 1.0
        if cfg.end_to_end:
            total, done = cfg.phase1_iters + cfg.phase2_iters, len(self.history)
        else:
            total = cfg.phase1_iters if phase == 1 else cfg.phase2_iters
            done = sum(1 for r in self.history if r["phase"] == phase)
        frac = min(done / max(total, 1), 1.0)
        return cfg.lr_min_ratio + (1.0 - cfg.lr_min_ratio) * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self, phase: int) -> dict:
        cfg = self.config
        b = self.bundle
        b.train()
        if cfg.lr_schedule != "constant":
            f = self.lr_factor(phase)
            for opt, lr in ((self.opt_g, cfg.lr_g), (self.opt_d, cfg.lr_d)):
                for group in opt.param_groups:
                    group["lr"] = lr * f
        batch = collate(self.sampler.batch(phase, cfg.batch_size), b.dtype)
        out = self._forward(batch, phase)

        d_loss = self._d_loss(out)
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(b.discriminator_parameters(), cfg.grad_clip)
        self.opt_d.step()

        # generator side sees the updated discriminator
        parts = self._g_terms(batch, out, phase)
        char_ce = parts.pop("char_ce")
        parts["adv_d"] = d_loss.detach()
        scaled = dict(parts, adv_g=cfg.adv_scale * parts["adv_g"])
        g_loss, _ = total_loss(scaled, cfg.weights, phase)
        g_loss = g_loss + cfg.char_cls_weight * char_ce

        record = {k: float(v.detach()) for k, v in parts.items()}
        record.update(char_ce=float(char_ce.detach()), g_total=float(g_loss.detach()), iteration=self.step_count + 1, phase=phase)
        bad = [k for k, v in record.items() if isinstance(v, float) and not math.isfinite(v)]
        if bad:
            self._diagnostic_dump(record)
            raise TrainingDivergedError(f"non-finite loss terms {bad} at iteration {self.step_count + 1}")

        self.opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        if cfg.grad_clip:
            norm = nn.utils.clip_grad_norm_(b.generator_parameters(), cfg.grad_clip)
            record["g_grad_norm"] = float(norm)
        self.opt_g.step()
        self.step_count += 1
        self.history.append(record)
        return record

    def run(self, phase: int, iterations: int) -> ModelBundle:
        if phase == 2 and self.bundle.phase != 1 and not self.config.end_to_end:
            raise ValueError("phase-2 training expects a phase-1 bundle")
        log_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_fh = (self.out_dir / "metrics.jsonl").open("a", encoding="utf-8")
        try:
            for _ in range(iterations):
                rec = self.step(phase)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                if self.config.log_every and rec["iteration"] % self.config.log_every == 0:
                    log.info("phase %d it %d: %s", phase, rec["iteration"],
                             " ".join(f"{k}={v:.4f}" for k, v in rec.items() if isinstance(v, float)))
                every = self.config.checkpoint_every
                if every and self.out_dir is not None and rec["iteration"] % every == 0:
                    self.save(self.out_dir / f"phase{phase}_it{rec['iteration']:07d}.pt")
        finally:
            if log_fh is not None:
                log_fh.close()
        self.bundle.phase = phase
        self.bundle.eval()
        self.bundle.history = self.history
        return self.bundle

    # ------------------------------------------------------------ persistence
    def state(self) -> dict:
        return {
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "sampler": self.sampler.get_state(),
            "step": self.step_count,
            "history": self.history,
            "config": self.config.to_dict(),
            "torch_rng": torch.get_rng_state(),
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(self.bundle, path, extra={"trainer": self.state()})

    @classmethod
    def resume(cls, path: str | Path, manifest: DatasetManifest, table: DecompositionTable,
               config: TrainConfig | None = None, **kw) -> "Trainer":
        bundle, extra = load_checkpoint(path, table)
        state = extra.get("trainer")
        if state is None:
            raise ValueError(f"{path} holds no trainer state")
        config = config or TrainConfig(**state["config"])
        trainer = cls(manifest, table, config, bundle=bundle, **kw)
        trainer.opt_g.load_state_dict(state["opt_g"])
        trainer.opt_d.load_state_dict(state["opt_d"])
        trainer.sampler.set_state(state["sampler"])
        trainer.step_count = state["step"]
        trainer.history = list(state["history"])
        torch.set_rng_state(state["torch_rng"])
        return trainer

    def _diagnostic_dump(self, record: dict) -> None:
        if self.out_dir is None:
            return
        path = self.out_dir / f"diverged_it{record['iteration']:07d}.pt"
        self.save(path)
        log.error("non-finite loss, diagnostic checkpoint written to %s", path)


# ---------------------------------------------------------------- functional entry points

def train_phase1(manifest, table, config: TrainConfig, out_dir=None, store=None) -> ModelBundle:
    trainer = Trainer(manifest, table, config, out_dir=out_dir, store=store)
    bundle = trainer.run(1, config.phase1_iters)
    if out_dir is not None:
        trainer.save(Path(out_dir) / "phase1.pt")
    return bundle


def train_phase2(bundle: ModelBundle, manifest, table, config: TrainConfig, out_dir=None,
                 store=None, trainer: Trainer | None = None) -> ModelBundle:
    if bundle.phase != 1:
        raise ValueError(f"train_phase2 needs a phase-1 bundle, got phase {bundle.phase}")
    if trainer is None:
        trainer = Trainer(manifest, table, config, bundle=bundle, out_dir=out_dir, store=store)
        trainer.history = list(getattr(bundle, "history", []))
        trainer.step_count = len(trainer.history)
    bundle = trainer.run(2, config.phase2_iters)
    if out_dir is not None:
        trainer.save(Path(out_dir) / "phase2.pt")
    return bundle


def train_both(manifest, table, config: TrainConfig, out_dir=None, store=None) -> ModelBundle:
    trainer = Trainer(manifest, table, config, out_dir=out_dir, store=store)
    if config.end_to_end:
        bundle = trainer.run(2, config.phase1_iters + config.phase2_iters)
    else:
        trainer.run(1, config.phase1_iters)
        if out_dir is not None:
            trainer.save(Path(out_dir) / "phase1.pt")
        bundle = trainer.run(2, config.phase2_iters)
    if out_dir is not None:
        trainer.save(Path(out_dir) / "final.pt")
    return bundle
