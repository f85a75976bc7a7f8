"""Mini-batch construction for the two training phases.

Phase 1 draws one style per example and picks references from that style
whose components cover the target's components.  Phase 2 draws reference
styles independently, takes the target style from one of the references
and drops the coverage requirement; one reference per example is flagged
for self-reconstruction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .decomposition import CharacterId, ComponentId, DecompositionTable
from .glyphset import DatasetManifest, GlyphImage, GlyphStore, StyleId

log = logging.getLogger(__name__)


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass
class TrainingExample:
    references: list[GlyphImage]
    reference_components: list[list[ComponentId]]
    source: GlyphImage
    target: GlyphImage
    target_components: list[ComponentId]
    phase: int = 1
    recon_index: int | None = None
    recon_source: GlyphImage | None = None

    @property
    def reference_styles(self) -> list[StyleId]:
        return [r.style for r in self.references]


@dataclass
class _StylePool:
    chars: list[CharacterId]
    comps: dict[CharacterId, frozenset]
    by_comp: dict[ComponentId, list[CharacterId]]
    coverable: list[CharacterId] | None = None
    rejected: set = field(default_factory=set)


class BatchSampler:
    """Stateful sampler owning its RNG; one per worker."""

    def __init__(self, manifest: DatasetManifest, table: DecompositionTable, n_ref: int = 3,
                 seed: int = 0, store: GlyphStore | None = None, max_retries: int = 50,
                 greedy_after: int = 40):
        if n_ref < 1:
            raise ValueError("n_ref must be >= 1")
        if not manifest.train_styles:
            raise ValueError("manifest has no training styles")
        self.manifest = manifest
        self.table = table
        self.n_ref = n_ref
        self.max_retries = max_retries
        self.greedy_after = greedy_after
        self.rng = np.random.default_rng(seed)
        self.store = store or GlyphStore(manifest)
        self.styles = manifest.train_styles
        self.source_style = manifest.source_style
        self._pools: dict[str, _StylePool] = {}

    # RNG state round-trips through checkpoints
    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def _pool(self, style: StyleId) -> _StylePool:
        if style.name not in self._pools:
            chars = [self.table.character(c) for c in self.manifest.available_chars(style, self.manifest.seen)]
            comps = {c: frozenset(self.table.entries[c]) for c in chars}
            by_comp: dict[ComponentId, list[CharacterId]] = {}
            for c in chars:
                for u in sorted(comps[c]):
                    by_comp.setdefault(u, []).append(c)
            self._pools[style.name] = _StylePool(chars, comps, by_comp)
        return self._pools[style.name]

    def _coverable(self, pool: _StylePool) -> list[CharacterId]:
        if pool.coverable is None:
            ok = []
            for t in pool.chars:
                if len(pool.chars) - 1 < self.n_ref:
                    break
                if self._greedy_cover(pool, t, None) is not None:
                    ok.append(t)
            pool.coverable = ok
        return [t for t in pool.coverable if t not in pool.rejected]

    def _greedy_cover(self, pool: _StylePool, target: CharacterId, rng) -> list[CharacterId] | None:
        """Cover the target's components with at most n_ref other characters.

        With `rng=None` the choice is deterministic (largest gain, lowest id).
        """
        need = set(pool.comps[target])
        chosen: list[CharacterId] = []
        while need:
            if rng is None:
                best = max(
                    (c for c in pool.chars if c != target and c not in chosen),
                    key=lambda c: (len(pool.comps[c] & need), -c.id),
                    default=None,
                )
                if best is None or not pool.comps[best] & need:
                    return None
            else:
                u = sorted(need)[int(rng.integers(len(need)))]
                options = [c for c in pool.by_comp.get(u, ()) if c != target and c not in chosen]
                if not options:
                    return None
                best = options[int(rng.integers(len(options)))]
            chosen.append(best)
            need -= pool.comps[best]
            if len(chosen) > self.n_ref:
                return None
        return chosen

    def _draw_references(self, pool: _StylePool, target: CharacterId) -> list[CharacterId] | None:
        others = [c for c in pool.chars if c != target]
        need = pool.comps[target]
        for attempt in range(self.max_retries):
            if attempt < self.greedy_after:
                pick = self.rng.choice(len(others), size=self.n_ref, replace=False)
                refs = [others[i] for i in pick]
                covered = frozenset().union(*(pool.comps[c] for c in refs))
                if need <= covered:
                    return refs
                continue
            refs = self._greedy_cover(pool, target, self.rng)
            if refs is None:
                continue
            rest = [c for c in others if c not in refs]
            n_fill = self.n_ref - len(refs)
            if n_fill:
                refs += [rest[i] for i in self.rng.choice(len(rest), size=n_fill, replace=False)]
            return [refs[i] for i in self.rng.permutation(len(refs))]
        return None

    def _glyph(self, style, char: CharacterId) -> GlyphImage:
        return self.store.glyph(style, char.codepoint, self.table)

    def _example(self, refs, ref_style, target, target_style, phase, recon_index=None) -> TrainingExample:
        ref_styles = ref_style if isinstance(ref_style, list) else [ref_style] * len(refs)
        ex = TrainingExample(
            references=[self._glyph(s, c) for s, c in zip(ref_styles, refs)],
            reference_components=[list(self.table.entries[c]) for c in refs],
            source=self._glyph(self.source_style, target),
            target=self._glyph(target_style, target),
            target_components=list(self.table.entries[target]),
            phase=phase,
        )
        if recon_index is not None:
            ex.recon_index = recon_index
            ex.recon_source = self._glyph(self.source_style, refs[recon_index])
        return ex

    def phase1_batch(self, batch_size: int) -> list[TrainingExample]:
        batch = []
        while len(batch) < batch_size:
            batch.append(self._phase1_example())
        return batch

    def _phase1_example(self) -> TrainingExample:
        exhausted: set[str] = set()
        while len(exhausted) < len(self.styles):
            style = self.styles[int(self.rng.integers(len(self.styles)))]
            if style.name in exhausted:
                continue
            pool = self._pool(style)
            targets = self._coverable(pool)
            if not targets:
                exhausted.add(style.name)
                continue
            target = targets[int(self.rng.integers(len(targets)))]
            refs = self._draw_references(pool, target)
            if refs is None:
                pool.rejected.add(target)
                continue
            return self._example(refs, style, target, style, phase=1)
        raise SamplingExhaustedError(
            f"no coverable target with n_ref={self.n_ref} in styles: {', '.join(sorted(exhausted))}"
        )

    def phase2_batch(self, batch_size: int) -> list[TrainingExample]:
        if len(self.styles) < 2:
            log.warning("phase-2 sampling needs >= 2 training styles; falling back to phase-1 batches")
            return self.phase1_batch(batch_size)
        return [self._phase2_example() for _ in range(batch_size)]

    def _phase2_example(self) -> TrainingExample:
        for _ in range(self.max_retries):
            ref_styles = [self.styles[int(i)] for i in self.rng.integers(len(self.styles), size=self.n_ref)]
            target_style = ref_styles[int(self.rng.integers(self.n_ref))]
            refs: list[CharacterId] = []
            for st in ref_styles:
                options = [c for c in self._pool(st).chars if c not in refs]
                if not options:
                    break
                refs.append(options[int(self.rng.integers(len(options)))])
            if len(refs) < self.n_ref:
                continue
            targets = [c for c in self._pool(target_style).chars if c not in refs]
            if not targets:
                continue
            target = targets[int(self.rng.integers(len(targets)))]
            recon = int(self.rng.integers(self.n_ref))
            return self._example(refs, ref_styles, target, target_style, phase=2, recon_index=recon)
        raise SamplingExhaustedError("could not assemble a phase-2 example")

    def batch(self, phase: int, batch_size: int) -> list[TrainingExample]:
        return self.phase1_batch(batch_size) if phase == 1 else self.phase2_batch(batch_size)


def sample_phase1_batch(manifest, table, n_ref, batch_size, rng, store=None, **kw) -> list[TrainingExample]:
    """Functional form; `rng` is a seed or a numpy Generator (consumed in place)."""
    sampler = _with_rng(manifest, table, n_ref, rng, store, **kw)
    return sampler.phase1_batch(batch_size)


def sample_phase2_batch(manifest, table, n_ref, batch_size, rng, store=None, **kw) -> list[TrainingExample]:
    sampler = _with_rng(manifest, table, n_ref, rng, store, **kw)
    return sampler.phase2_batch(batch_size)


def _with_rng(manifest, table, n_ref, rng, store, **kw) -> BatchSampler:
    sampler = BatchSampler(manifest, table, n_ref=n_ref, store=store, **kw)
    if isinstance(rng, np.random.Generator):
        sampler.rng = rng
    else:
        sampler.rng = np.random.default_rng(rng)
    return sampler
