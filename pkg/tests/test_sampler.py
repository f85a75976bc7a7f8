import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lffont.sampler import BatchSampler, SamplingExhaustedError, sample_phase1_batch, sample_phase2_batch
from conftest import FIXTURE, StubStore, fixture_manifest


def covered(ref_chars, target):
    """Independent coverage oracle straight from the raw mapping."""
    have = set()
    for c in ref_chars:
        have |= set(FIXTURE[c])
    return set(FIXTURE[target]) <= have


def chars_of(glyphs):
    return [chr(g.character.codepoint) for g in glyphs]


def test_fixture_valid_pairs_by_brute_force(fixture_table):
    man = fixture_manifest(fixture_table)
    valid = {frozenset(p) for p in itertools.combinations("ABD", 2) if covered(p, "C")}
    assert valid == {frozenset("AB"), frozenset("AD")}
    sampler = BatchSampler(man, fixture_table, n_ref=2, seed=0, store=StubStore())
    seen = set()
    for _ in range(300):
        ex = sampler.phase1_batch(1)[0]
        if chr(ex.target.character.codepoint) == "C":
            seen.add(frozenset(chars_of(ex.references)))
    assert seen and seen <= valid


def test_maximal_reference_set(fixture_table):
    # n_ref = |chars| - 1: a target is usable iff all the others cover it
    man = fixture_manifest(fixture_table)
    sampler = BatchSampler(man, fixture_table, n_ref=3, seed=1, store=StubStore())
    expect = {t for t in "ABCD" if covered([c for c in "ABCD" if c != t], t)}
    targets = {chr(ex.target.character.codepoint) for ex in sampler.phase1_batch(200)}
    assert targets == expect


def test_phase1_audit(tiny_corpus):
    manifest, table = tiny_corpus
    sampler = BatchSampler(manifest, table, n_ref=3, seed=0, store=StubStore(32))
    for ex in sampler.phase1_batch(300):
        have = set().union(*(set(table.entries[table.character(g.character.codepoint)]) for g in ex.references))
        assert set(table.entries[table.character(ex.target.character.codepoint)]) <= have
        assert {g.style for g in ex.references} == {ex.target.style}
        assert all(g.character != ex.target.character for g in ex.references)


def test_phase2_invariants(tiny_corpus):
    manifest, table = tiny_corpus
    sampler = BatchSampler(manifest, table, n_ref=8, seed=0, store=StubStore(32))
    batch = sampler.phase2_batch(64)
    assert any(len({g.style for g in ex.references}) > 1 for ex in batch)
    for ex in batch:
        assert ex.target.style in ex.reference_styles
        assert 0 <= ex.recon_index < len(ex.references)
        assert ex.recon_source.character == ex.references[ex.recon_index].character
        assert all((g.style, g.character) != (ex.target.style, ex.target.character) for g in ex.references)
        assert ex.source.style == manifest.source_style


def test_determinism(tiny_corpus):
    manifest, table = tiny_corpus

    def trace(seed):
        s = BatchSampler(manifest, table, n_ref=3, seed=seed, store=StubStore(32))
        out = []
        for phase in (1, 2, 1):
            for ex in s.batch(phase, 4):
                out.append((ex.target.style.name, ex.target.character.codepoint,
                            tuple((g.style.name, g.character.codepoint) for g in ex.references)))
        return out

    assert trace(5) == trace(5)
    assert trace(5) != trace(6)


def test_state_round_trip(tiny_corpus):
    manifest, table = tiny_corpus
    a = BatchSampler(manifest, table, seed=2, store=StubStore(32))
    a.phase1_batch(3)
    b = BatchSampler(manifest, table, seed=99, store=StubStore(32))
    b.set_state(a.get_state())
    key = lambda batch: [(e.target.character.codepoint, e.target.style.name) for e in batch]
    assert key(a.phase2_batch(5)) == key(b.phase2_batch(5))


def test_functional_forms_consume_generator(tiny_corpus):
    manifest, table = tiny_corpus
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state["state"]["state"]
    sample_phase1_batch(manifest, table, 3, 2, rng, store=StubStore(32))
    assert rng.bit_generator.state["state"]["state"] != before
    again = sample_phase1_batch(manifest, table, 3, 2, 7, store=StubStore(32))
    assert [e.target.character for e in again] == [
        e.target.character for e in sample_phase1_batch(manifest, table, 3, 2, 7, store=StubStore(32))]
    assert len(sample_phase2_batch(manifest, table, 3, 4, 0, store=StubStore(32))) == 4


def test_exhausted_names_style(fixture_table):
    # A = {p,q} and D = {r} share nothing, so neither can cover the other
    table = fixture_table
    man = fixture_manifest(table, chars="AD")
    sampler = BatchSampler(man, table, n_ref=1, seed=0, store=StubStore())
    with pytest.raises(SamplingExhaustedError, match="s0"):
        sampler.phase1_batch(1)


def test_phase2_single_style_falls_back(fixture_table, caplog):
    man = fixture_manifest(fixture_table)
    sampler = BatchSampler(man, fixture_table, n_ref=2, seed=0, store=StubStore())
    with caplog.at_level(logging.WARNING):
        batch = sampler.phase2_batch(3)
    assert "falling back" in caplog.text
    assert all(ex.phase == 1 for ex in batch)


def test_bad_arguments(fixture_table):
    with pytest.raises(ValueError):
        BatchSampler(fixture_manifest(fixture_table), fixture_table, n_ref=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_phase1_coverage_property(seed, n_ref):
    from lffont.decomposition import table_from_mapping
    table = table_from_mapping(FIXTURE)
    man = fixture_manifest(table, n_styles=2)
    sampler = BatchSampler(man, table, n_ref=n_ref, seed=seed, store=StubStore())
    for ex in sampler.phase1_batch(5):
        refs = chars_of(ex.references)
        assert len(refs) == n_ref == len(set(refs))
        assert covered(refs, chr(ex.target.character.codepoint))
