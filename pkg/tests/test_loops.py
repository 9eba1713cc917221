import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkburger import _loopkern as K
from fkburger.loops import (VARIANTS, CensoredError, LoopBatch, NotAnFError, StreamPast, biased_weights,
                            compare_size_laws, find_envelope, loop_area, loop_length, loop_stats,
                            loop_tail_fits, reduced_walk, sample_biased_loop, sample_biased_loops,
                            sample_loops, sample_typical_loop, size_histogram)
from fkburger.maps import build_map, extract_loops, interior_area_oracle, loop_of_f
from fkburger.params import ModelParams
from fkburger.words import Word, match_indices, match_kernel, reduce, sample_word


def _envelopes(word, limit=None):
    out = []
    for i in np.flatnonzero(word.symbols == 4)[:limit]:
        try:
            out.append(find_envelope(word, int(i) - word.origin))
        except CensoredError:
            pass
    return out


def _walk_all(env):
    yield env
    for ch in env.children:
        yield from _walk_all(ch)


# ---------------------------------------------------------------- examples

def test_envelope_examples():
    e = find_envelope("cF", 1)
    assert e.size == 2 and e.children == () and e.reduced_boundary == 0
    e = find_envelope("chHF", 3)
    assert e.size == 4 and e.children == () and e.loop_type == "cF"
    e = find_envelope("ccFF", 3)
    assert e.size == 4 and len(e.children) == 1 and e.children[0].size == 2


def test_envelope_errors():
    with pytest.raises(NotAnFError):
        find_envelope("cH", 1)
    with pytest.raises(CensoredError):
        find_envelope("HF", 1)
    with pytest.raises(CensoredError) as exc:
        find_envelope("c" + "hH" * 50 + "F", 101, budget=10)
    assert exc.value.lower_bound is not None


def test_reduced_walk_examples():
    t = reduced_walk(find_envelope("cF", 1))
    assert t.tau == 1 and t.terminating == "c" and t.path == ((-1, 0),)
    t = reduced_walk(find_envelope("chHF", 3))
    assert list(zip(t.coords, t.increments)) == [("h", 1), ("h", -1), ("c", -1)] and t.tau == 3
    t = reduced_walk(find_envelope("ccFF", 3))
    assert t.tau == 2 and t.increments == (0, -1) and t.consumed == (2, 1)


def test_length_examples():
    assert loop_length(find_envelope("cF", 1)) == 1
    assert loop_length(find_envelope("chHF", 3)) == 3
    assert loop_length(find_envelope("hcFF", 3)) == 2


def test_area_examples_follow_flood_fill():
    # values are the flood-fill oracle's, see test_maps for the oracle itself
    assert loop_area(find_envelope("cF", 1)) == 1
    assert loop_area(find_envelope("hcFF", 3)) == 3
    assert loop_area(find_envelope("ccFF", 3)) == 2
    m = build_map("hcFF")
    ov = extract_loops(m)
    assert interior_area_oracle(m, ov, loop_of_f(m, ov, 3)) == 3


def test_boundary_kind_matches_loop_type():
    w = sample_word(ModelParams(1 / 3), 20000, seed=2)
    for env in _envelopes(w, 300):
        for e in _walk_all(env):
            inner = str(reduce(str(e)[1:-1]))
            assert set(inner) <= ({"C"} if e.loop_type == "hF" else {"H"})
            assert len(inner) == e.reduced_boundary


# ---------------------------------------------------------------- invariants

def test_envelope_invariants_on_random_words():
    prm = ModelParams(1 / 3)
    n_env = 0
    for seed in range(5):
        w = sample_word(prm, 20000, seed=seed)
        for env in _envelopes(w):
            n_env += 1
            t = reduced_walk(env)
            assert sum(t.consumed) == env.size - 1
            assert all(min(c, h) >= 0 for c, h in t.path[:-1])
            assert min(t.path[-1]) < 0
            assert t.tau == len(env.children) + env.size - sum(ch.size for ch in env.children) - 1
            s = loop_stats(env)
            assert 1 <= s.length <= s.area <= s.envelope_size
            assert abs(t.consumed_on(t.terminating) - s.area) <= t.tau
            prev = env.start
            for ch in env.children:
                assert prev < ch.start and ch.end < env.end
                assert w.at(ch.end) == "F"
                prev = ch.end
    assert n_env > 1000


def test_nesting_of_envelopes():
    w = sample_word(ModelParams(1 / 3), 10**5, seed=9)
    m = match_indices(w)
    fpos = np.flatnonzero(w.symbols == 4)
    checked = 0
    for i in fpos:
        j = m.phi(int(i))
        if j is None:
            continue
        for k in fpos[(fpos > j) & (fpos < i)]:
            jk = m.phi(int(k))
            assert jk is not None and j < jk < k < i
            checked += 1
    assert checked > 1000


def test_kernel_matches_reference_exploration():
    prm = ModelParams(1 / 3)
    out = np.zeros(K.NSTAT, np.int64)
    frames = np.zeros((64, 3), np.int64)
    for seed in range(3):
        w = sample_word(prm, 20000, seed=100 + seed)
        for env in _envelopes(w):
            f = env.end
            rev = np.ascontiguousarray(w.symbols[:f][::-1])
            K.explore(rev, 0, len(rev), 10**9, out, frames)
            assert out[K.S_STATUS] == K.DONE
            assert out[K.S_SIZE] == env.size
            assert out[K.S_TAU] == loop_length(env)
            assert out[K.S_AREA] == loop_area(env)
            assert out[K.S_M] == len(env.children)


def test_stream_past_is_lazy_and_stable():
    past = StreamPast(ModelParams(1 / 3), seed=1)
    a = past.window(-10, 0).copy()
    past.window(-1000, 0)
    assert np.array_equal(past.window(-10, 0), a)


# ---------------------------------------------------------------- samplers

def test_no_f_at_p0():
    s = sample_typical_loop(ModelParams(0.0), "condition-X0-is-F", seed=0)
    assert s.no_f


@pytest.mark.parametrize("variant", VARIANTS)
def test_samplers_run_and_respect_invariants(variant):
    b = sample_loops(ModelParams(1 / 3), variant, 2000, seed=1)
    ok = b.ok
    assert ok.mean() > 0.99
    assert np.all(b.length[ok] >= 1)
    assert np.all(b.length[ok] <= b.area[ok]) and np.all(b.area[ok] <= b.size[ok])


def test_sampler_worker_independence():
    prm = ModelParams(1 / 3)
    a = sample_loops(prm, "first-F-left-of-0", 3000, seed=5, per_replica=1000, workers=1)
    b = sample_loops(prm, "first-F-left-of-0", 3000, seed=5, per_replica=1000, workers=2)
    assert np.array_equal(a.size, b.size) and np.array_equal(a.area, b.area)


def test_unknown_variant():
    with pytest.raises(ValueError):
        sample_loops(ModelParams(1 / 3), "nope", 10, seed=0)


def test_censoring_is_reported():
    b = sample_loops(ModelParams(1 / 3), "condition-X0-is-F", 5000, seed=3, budget=20)
    assert b.censored.any()
    fits = loop_tail_fits(sample_loops(ModelParams(1 / 3), "condition-X0-is-F", 20000, seed=3, budget=2000),
                          window=(5, 50), area_window=(5, 50), budget=2000)
    assert "length_half_budget" in fits
    assert any("censored" in w for w in fits["length"].warnings)


def test_variants_1_and_3_agree():
    prm = ModelParams(1 / 3)
    a = sample_loops(prm, "first-F-left-of-0", 10**5, seed=21)
    b = sample_loops(prm, "condition-X0-is-F", 10**5, seed=22)
    assert compare_size_laws(a, b)[2] > 1e-3


def test_variant_4_agrees_with_3():
    prm = ModelParams(1 / 3)
    a = sample_loops(prm, "condition-match-of-0-is-F", 10**5, seed=23)
    b = sample_loops(prm, "condition-X0-is-F", 10**5, seed=24)
    assert compare_size_laws(a, b)[2] > 1e-3


def test_first_eaten_kernel_matches_definition():
    # first production at or after 0 whose partner is an F, read off the full matching
    prm = ModelParams(1 / 3)
    rng = np.random.default_rng(8)
    res = np.zeros((1, K.NSTAT), np.int64)
    checked = 0
    for _ in range(400):
        sym = rng.choice(5, size=3000, p=prm.probabilities()).astype(np.uint8)
        par = match_kernel(sym)
        want = None
        for j in range(len(sym)):
            if sym[j] <= 1 and par[j] < 0:
                break
            if sym[j] <= 1 and sym[par[j]] == 4:
                want = par[j] - j + 1
                break
        res[:] = 0
        done, _ = K.run_first_eaten(sym, 0, len(sym), 10**6, 1, res)
        if want is None:
            continue
        assert done == 1 and res[0, K.S_STATUS] == K.DONE and res[0, K.S_SIZE] == want
        checked += 1
    assert checked > 300


def test_biased_weights_example():
    assert np.allclose(biased_weights([1, 1, 2]), [0.25, 0.25, 0.5])


def test_biased_loops_shift_to_longer():
    prm = ModelParams(1 / 3)
    base = sample_loops(prm, "condition-X0-is-F", 20000, seed=4)
    b = sample_biased_loops(prm, 20000, seed=4)
    assert b.length.mean() > base.length[base.ok].mean()
    assert sample_biased_loop(prm, seed=1, n_base=200).length >= 1


def test_size_histogram_classes():
    h = size_histogram([1, 2, 2, 40, 33])
    assert h[0] == 1 and h[1] == 2 and h[-1] == 2 and len(h) == 33


def test_csv_columns():
    b = sample_loops(ModelParams(1 / 3), "condition-X0-is-F", 5, seed=0)
    text = b.csv_text(["x=1"])
    lines = text.splitlines()
    assert lines[0] == "# x=1"
    assert lines[1] == "seed,variant,p,loop_type,length,area,envelope_size,censored"
    assert len(lines) == 7
