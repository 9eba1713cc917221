import itertools
import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from fkburger.maps import (AttemptsExhausted, MapFormatError, build_map, canonical_form, check_word, encode_map,
                           export_map, extract_loops, import_map, interior_area_oracle, loop_of_f, root_loop,
                           sample_balanced_word, to_dict, to_dot, verify_exhaustive)
from fkburger.loops import find_envelope, loop_area, loop_length
from fkburger.params import ModelParams
from fkburger.words import NotBalancedError, Word, is_balanced, sample_word


def _balanced(n):
    for t in itertools.product("hcHCF", repeat=n):
        s = "".join(t)
        if is_balanced(s):
            yield s


def test_hH_map():
    m = build_map("hH")
    c = m.counts()
    assert c["primal_edges"] == 1 and c["primal_vertices"] == 2 and c["triangles"] == 2
    assert m.euler_characteristic() == 2
    ov = extract_loops(m)
    assert len(ov.loops) == 1 and ov.lengths() == [2]
    assert interior_area_oracle(m, ov, root_loop(m, ov)) == 0


def test_cF_is_flipped_cC():
    a, b = build_map("cC"), build_map("cF")
    assert a.counts()["dual_edges"] == 1 and b.counts()["primal_edges"] == 1
    assert b.flipped.all() and not a.flipped.any()


def test_figure_prefix_word():
    # the three-symbol prefix c h c completed by its orders
    m = build_map("chcCHC")
    c = m.counts()
    assert c["primal_vertices"] == 2 and c["dual_vertices"] == 3
    assert c["primal_edges"] == 1 and c["dual_edges"] == 2
    assert str(encode_map(m)) == "chcCHC"


def test_loop_counts():
    assert len(extract_loops(build_map("cFhH")).loops) == 2


def test_not_balanced():
    with pytest.raises(NotBalancedError):
        build_map("cH")


def test_hcFF_area_from_oracle():
    m = build_map("hcFF")
    ov = extract_loops(m)
    lid = loop_of_f(m, ov, 3)
    assert interior_area_oracle(m, ov, lid) == loop_area(find_envelope("hcFF", 3)) == 3


def test_json_roundtrip_and_schema():
    m = build_map("hH")
    d = json.loads(export_map(m))
    assert d["schema"] == 1
    assert sum(e["class"] == "primal" for e in d["edges"]) == 1
    assert canonical_form(import_map(export_map(m))) == canonical_form(m)


def test_json_schema_rejected():
    d = to_dict(build_map("hH"))
    d["schema"] = 99
    with pytest.raises(MapFormatError):
        import_map(d)


def test_export_path_error(tmp_path):
    with pytest.raises(OSError) as exc:
        export_map(build_map("hH"), path=tmp_path / "missing" / "x.json")
    assert "missing" in str(exc.value)


def test_dot_loop_colours():
    m = build_map("cFhH")
    dot = to_dot(m)
    colours = set(re.findall(r'color="([^"]+)"', dot))
    assert len(colours) == 2


@pytest.mark.parametrize("n", [2, 4, 6, 8, 10])
def test_exhaustive_small(n):
    r = verify_exhaustive(n)
    assert r["failures"] == {} and r["words"] > 0


def test_exhaustive_count_length_4():
    assert verify_exhaustive(4)["words"] == sum(1 for _ in _balanced(4))


def test_fast_path_equals_oracle_small_words():
    for n in (2, 4, 6):
        for s in _balanced(n):
            m = build_map(s)
            ov = extract_loops(m)
            assert len(ov.loops) == s.count("F") + 1
            assert str(encode_map(m)) == s
            for i, ch in enumerate(s):
                if ch == "F":
                    lid = loop_of_f(m, ov, i)
                    if lid == root_loop(m, ov):
                        continue
                    env = find_envelope(s, i)
                    assert ov.lengths()[lid] == loop_length(env)
                    assert interior_area_oracle(m, ov, lid) == loop_area(env)


def test_random_roundtrips():
    prm = ModelParams(1 / 3)
    rng = np.random.default_rng(0)
    for k in range(10**4):
        n = int(rng.integers(1, 101))
        w = sample_balanced_word(prm, 2 * n, seed=k) if n <= 6 else None
        if w is None:
            # long words: balance a random prefix by appending its reduced inverse
            w = _complete(sample_word(prm, n, seed=k))
        assert check_word(w) == "ok"


def _complete(w):
    """Balanced word from an arbitrary one: drop the orders that found no burger
    (they never touched the stack) and close the leftover burgers in stack order."""
    from fkburger.words import match_kernel
    partner = match_kernel(w.symbols)
    keep = (partner >= 0) | (w.symbols < 2)
    sym = w.symbols[keep]
    left = sym[match_kernel(sym) < 0]
    return Word(np.concatenate([sym, (left[::-1] + 2).astype(np.uint8)]))


def test_balanced_sampler_law_p0():
    counts = {"hH": 0, "cC": 0}
    for s in range(2000):
        counts[str(sample_balanced_word(ModelParams(0.0), 2, seed=s))] += 1
    assert chisquare(list(counts.values())).pvalue > 1e-3


def test_balanced_sampler_law_length_4():
    prm = ModelParams(1 / 3)
    pr = dict(zip("hcHCF", prm.probabilities()))
    words = list(_balanced(4))
    wt = np.array([np.prod([pr[ch] for ch in s]) for s in words])
    idx = {s: k for k, s in enumerate(words)}
    obs = np.zeros(len(words))
    for s in range(20000):
        obs[idx[str(sample_balanced_word(prm, 4, seed=s))]] += 1
    assert chisquare(obs, wt / wt.sum() * obs.sum()).pvalue > 1e-3


def test_balanced_sampler_attempts():
    w, k = sample_balanced_word(ModelParams(1 / 3), 8, seed=3, return_attempts=True)
    assert is_balanced(w) and k >= 1
    with pytest.raises(AttemptsExhausted):
        sample_balanced_word(ModelParams(1 / 3), 200, seed=3, max_attempts=2)


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_map_invariants(n, seed):
    w = sample_balanced_word(ModelParams(1 / 3), 2 * n, seed=seed) if n <= 6 else \
        _complete(sample_word(ModelParams(1 / 3), 2 * n, seed=seed))
    m = build_map(w)
    m.validate()
    assert m.euler_characteristic() == 2
    assert np.all(m.twin[m.twin] == np.arange(len(m.twin)))
    assert np.all(m.twin != np.arange(len(m.twin)))
    ov = extract_loops(m)
    assert len(ov.loops) == w.count("F") + 1
    assert sorted(t for lp in ov.loops for t in lp) == list(range(len(w)))
    assert encode_map(m) == Word(w.symbols)
