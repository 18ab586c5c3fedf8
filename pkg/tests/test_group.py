import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatcyl.group import (
    ConfigError,
    Word,
    WordOverflowError,
    evaluate_batch,
    evaluate_word,
    format_word,
    parse_group_config,
    parse_word,
    parse_word_pairs,
    format_word_pairs,
    pingpong_gap,
    reduce_word,
    same_element,
    serialize_group_config,
)

from conftest import complex_spec, config_doc, real_spec

CPLX = {"kind": "complex-special-linear-2", "dimension": 2, "projectivized": False}
REALF = {"kind": "real-special-linear", "dimension": 2, "projectivized": False}


def test_parabolic_generator_is_accepted():
    gens = [[[[[2, 0], [0, 0]], [[0, 0], [0.5, 0]]]], [[[[1, 0], [1, 0]], [[0, 0], [1, 0]]]]]
    spec = parse_group_config(config_doc([CPLX], gens))
    assert spec.k == 2 and spec.rank == 1
    assert spec.generators[1][0][0, 1] == 1


def test_determinant_two_is_rejected_with_value():
    gens = [[[[2, 0], [0, 1]]], [[[1, 0], [0, 1]]]]
    with pytest.raises(ConfigError, match=r"determinant 2\b"):
        parse_group_config(config_doc([REALF], gens))


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"generators": []}, "$.factors"),
        ({"factors": [REALF]}, "$.generators"),
        ({"factors": [{"kind": "quaternionic"}], "generators": []}, "$.factors[0].kind"),
        ({"factors": [REALF], "generators": [[[[1, 0], [0]]], [[[1, 0], [0, 1]]]]}, "$.generators[0][0]"),
        ({"factors": [CPLX], "generators": [[[[1, 0], [0, "x"]]], [[[1, 0], [0, 1]]]]}, "$.generators[0][0]"),
        ({"factors": [REALF], "generators": [[[[1, 0], [0, 1]]], [[[1, 0], [0, 1]]]], "tolerance": -1}, "$.tolerance"),
    ],
)
def test_schema_errors_name_the_path(doc, path):
    with pytest.raises(ConfigError) as exc:
        parse_group_config(json.dumps(doc))
    assert path in str(exc.value)


def test_complex_factor_must_be_2x2():
    doc = {"factors": [{"kind": "complex-special-linear-2", "dimension": 3}], "generators": []}
    with pytest.raises(ConfigError, match=r"\$\.factors\[0\]"):
        parse_group_config(json.dumps(doc))


def test_decimal_entries_parse_to_nearest_double():
    text = config_doc([REALF], [[[[0.1, 0], [0, 10]]], [[[1, 0], [0, 1]]]], tolerance=1e-6)
    spec = parse_group_config(text)
    assert spec.generators[0][0][0, 0] == 0.1


def test_a3_config_is_two_factor_two_generator(a3):
    assert len(a3.factors) == 2 and a3.k == 2
    assert all(f.is_complex for f in a3.factors)
    assert a3.metadata["zariski_dense"] and a3.metadata["anosov"]
    # ping-pong: the isometric circles of all four letters are disjoint on both factors
    assert pingpong_gap(a3, 0) > 0 and pingpong_gap(a3, 1) > 0


def test_a3_second_factor_is_not_a_conjugate_copy(a3):
    # equal traces for every word would be forced by conjugacy; check a few
    for w in ["a", "b", "a b", "a b'", "a a b"]:
        g = evaluate_word(a3, parse_word(w))
        t1, t2 = np.trace(g[0]), np.trace(g[1])
        if abs(abs(t1) - abs(t2)) > 1e-3:
            return
    pytest.fail("traces agree on all sampled words")


def test_roundtrip_serialize(a3, sl3):
    for spec in (a3, sl3):
        again = parse_group_config(serialize_group_config(spec))
        assert again == spec


def test_reduce_examples():
    a, a_, b, b_ = 0, 1, 2, 3
    assert reduce_word([a, a_]).codes == ()
    assert reduce_word([a, b, b_, a]).codes == (a, a)
    assert reduce_word([a, b, a_, a, b_, a_]).codes == ()


def _scan_oracle(codes):
    codes = list(codes)
    changed = True
    while changed:
        changed = False
        for i in range(len(codes) - 1):
            if codes[i] ^ 1 == codes[i + 1]:
                del codes[i:i + 2]
                changed = True
                break
    return tuple(codes)


letters = st.lists(st.integers(0, 5), min_size=0, max_size=20)


@given(letters)
def test_reduce_matches_scan_oracle(codes):
    w = reduce_word(codes)
    assert w.codes == _scan_oracle(codes)
    assert reduce_word(w.codes) == w
    assert len(w) % 2 == len(codes) % 2


def test_word_text_roundtrip():
    codes = parse_word("a b' c")
    assert codes == (0, 3, 4)
    assert format_word(codes) == "a b' c"
    assert parse_word("ab'c") == codes
    assert parse_word_pairs(format_word_pairs(codes)) == codes
    assert Word.from_letters([(0, 1), (1, -1)]).codes == (0, 3)


def test_evaluate_examples():
    spec = complex_spec([np.diag([2, 0.5]), [[1, 1], [0, 1]]])
    assert np.allclose(evaluate_word(spec, ())[0], np.eye(2))
    assert np.allclose(evaluate_word(spec, (0,))[0], np.diag([2, 0.5]))
    assert np.allclose(evaluate_word(spec, (0, 0))[0], np.diag([4, 0.25]))


def test_overflow_advises_shorter_words():
    spec = real_spec([np.diag([1e30, 1e-30]), np.eye(2)], 2)
    with pytest.raises(WordOverflowError, match="shorter"):
        evaluate_word(spec, (0,) * 20)


def _random_reduced(rng, k, n):
    out = []
    while len(out) < n:
        c = int(rng.integers(2 * k))
        if out and out[-1] ^ 1 == c:
            continue
        out.append(c)
    return tuple(out)


@pytest.mark.parametrize("which", ["real_sl2", "sl3", "a3"])
def test_inverse_and_homomorphism(which, request):
    spec = request.getfixturevalue(which)
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(1, 13))
        w = Word(_random_reduced(rng, spec.k, n))
        ident = evaluate_word(spec, (w * w.inverse()).codes)
        gw, gi = evaluate_word(spec, w), evaluate_word(spec, w.inverse())
        prod = tuple(a @ b for a, b in zip(gw, gi))
        eye = tuple(np.eye(f.dimension) for f in spec.factors)
        assert same_element(spec, ident, eye)
        # the unreduced product loses digits in proportion to the condition number
        cond = max(np.linalg.norm(a) * np.linalg.norm(b) for a, b in zip(gw, gi))
        assert same_element(spec, prod, eye, tol=1e-14 * cond)
        u = Word(_random_reduced(rng, spec.k, 6))
        v = Word(_random_reduced(rng, spec.k, 6))
        if u.codes[-1] ^ 1 == v.codes[0]:
            continue
        lhs = evaluate_word(spec, (u * v).codes)
        rhs = tuple(a @ b for a, b in zip(evaluate_word(spec, u), evaluate_word(spec, v)))
        assert same_element(spec, lhs, rhs, tol=1e-9)


def test_batch_matches_single(a3):
    rng = np.random.default_rng(2)
    words = np.array([_random_reduced(rng, 2, 7) for _ in range(25)], dtype=np.int8)
    stacks = evaluate_batch(a3, words)
    for i, w in enumerate(words):
        single = evaluate_word(a3, tuple(int(c) for c in w))
        for f in range(2):
            assert np.allclose(stacks[f][i], single[f], rtol=1e-12, atol=1e-12)


def test_projectivized_compares_up_to_sign():
    spec = complex_spec([np.diag([2, 0.5]), [[1, 1], [0, 1]]], projectivized=True)
    g = (np.diag([2, 0.5]).astype(complex),)
    assert same_element(spec, g, (-g[0],))
    plain = complex_spec([np.diag([2, 0.5]), [[1, 1], [0, 1]]])
    assert not same_element(plain, g, (-g[0],))
