"""BPE learn/apply against an independent brute-force reference."""

import string

import pytest

from mmt_micro.data.bpe import (
    BpeModel,
    apply_bpe,
    learn_bpe,
    load_bpe,
    remove_bpe,
    save_bpe,
)
from mmt_micro.errors import ConfigError, FormatError
from mmt_micro.tensor import Rng

def ref_symbolize(word):
    chars = list(word)
    chars[-1] += "</w>"
    return chars


def ref_merge(symbols, pair):
    # recursive left-to-right definition, deliberately different from the
    # implementation's iterative scan
    if len(symbols) < 2:
        return list(symbols)
    if (symbols[0], symbols[1]) == pair:
        return [symbols[0] + symbols[1]] + ref_merge(symbols[2:], pair)
    return [symbols[0]] + ref_merge(symbols[1:], pair)


def ref_learn(corpora, n_merges):
    # one entry per word occurrence, recounted from scratch every round
    occurrences = [ref_symbolize(w) for corpus in corpora for sent in corpus for w in sent]
    merges = []
    for _ in range(n_merges):
        counts = {}
        for word in occurrences:
            for i in range(len(word) - 1):
                pair = (word[i], word[i + 1])
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        occurrences = [ref_merge(word, best) for word in occurrences]
    return merges


def ref_apply(merges, tokens):
    out = []
    for token in tokens:
        symbols = ref_symbolize(token)
        for pair in merges:
            symbols = ref_merge(symbols, pair)
        pieces = [s + "@@" for s in symbols[:-1]] + [symbols[-1][: -len("</w>")]]
        out.extend(pieces)
    return out


def random_corpus(rng, max_words=50):
    n_words = int(rng.integers(3, max_words + 1))
    words = []
    for _ in range(n_words):
        length = int(rng.integers(1, 8))
        words.append("".join(rng.choice(list("abcde"), size=length)))
    # chunk words into sentences of <= 6 tokens
    sents = [words[i : i + 6] for i in range(0, len(words), 6)]
    return [s for s in sents if s]


def test_first_merge_on_hand_counted_corpus():
    # "aaab aab": pair (a, a) occurs 3 times, more than any other
    model = learn_bpe([[["aaab", "aab"]]], 1)
    assert model.merges == [("a", "a")]


def test_merge_budget_exhaustion_stops_early():
    model = learn_bpe([[["ab", "ab"]]], 50)
    assert model.merge_count < 50
    # once every word is a single symbol there is nothing left to merge
    assert apply_bpe(model, ["ab"]) == ["ab"]


def test_empty_merge_list_gives_character_segmentation():
    model = BpeModel(merges=[])
    assert apply_bpe(model, ["cab"]) == ["c@@", "a@@", "b"]


def test_apply_then_remove_is_identity():
    rng = Rng(100)
    for _ in range(10):
        corpus = random_corpus(rng)
        model = learn_bpe([corpus], 15)
        for sent in corpus:
            assert remove_bpe(apply_bpe(model, sent)) == sent


def test_learned_merges_match_reference_on_micro_corpora():
    rng = Rng(200)
    for trial in range(20):
        corpus_a = random_corpus(rng, max_words=25)
        corpus_b = random_corpus(rng, max_words=25)
        n_merges = int(rng.integers(1, 31))
        model = learn_bpe([corpus_a, corpus_b], n_merges)
        expected = ref_learn([corpus_a, corpus_b], n_merges)
        assert model.merges == expected, f"trial {trial}"


def test_segmentation_matches_reference():
    rng = Rng(300)
    for trial in range(20):
        corpus = random_corpus(rng)
        n_merges = int(rng.integers(1, 31))
        model = learn_bpe([corpus], n_merges)
        probe = random_corpus(rng, max_words=10)
        for sent in probe:
            assert apply_bpe(model, sent) == ref_apply(model.merges, sent), f"trial {trial}"


def test_joint_learning_shares_one_merge_table():
    src = [["abc", "abd"], ["abe"]]
    tgt = [["abf", "abg"]]
    model = learn_bpe([src, tgt], 5)
    # the joint pair (a, b) merges identically on both sides
    assert ("a", "b") in model.merges
    assert apply_bpe(model, ["abc"])[0].startswith("ab")
    assert apply_bpe(model, ["abf"])[0].startswith("ab")


def test_invalid_merge_count():
    with pytest.raises(ConfigError):
        learn_bpe([[["ab"]]], 0)


def test_model_file_roundtrip(tmp_path):
    model = learn_bpe([[["abab", "abab", "cd"]]], 8)
    path = tmp_path / "codes.bpe"
    save_bpe(model, path)
    reloaded = load_bpe(path)
    assert reloaded.merges == model.merges
    save_bpe(reloaded, tmp_path / "codes2.bpe")
    assert (tmp_path / "codes.bpe").read_bytes() == (tmp_path / "codes2.bpe").read_bytes()


def test_model_file_header_checked(tmp_path):
    path = tmp_path / "bad.bpe"
    path.write_text("bpe v2 1\na b\n")
    with pytest.raises(FormatError):
        load_bpe(path)
    path.write_text("bpe v1 3\na b\n")
    with pytest.raises(FormatError):
        load_bpe(path)
