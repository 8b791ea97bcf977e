import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biatt_hatexplain import data as D
from conftest import make_raw


def _hatexplain_entry(post_id, tokens, labels, targets, rationales):
    return {
        "post_id": post_id,
        "annotators": [{"label": l, "annotator_id": i, "target": t} for i, (l, t) in enumerate(zip(labels, targets))],
        "rationales": rationales,
        "post_tokens": tokens,
    }


# ---------------------------------------------------------------- parse_dataset


def test_parse_two_well_formed_posts(tmp_path):
    blob = {
        "1": _hatexplain_entry("1", ["a", "b"], ["normal"] * 3, [["None"]] * 3, []),
        "2": _hatexplain_entry("2", ["x", "y", "z"], ["hatespeech", "hatespeech", "offensive"],
                               [["Islam"], ["Islam"], ["None"]], [[0, 1, 1], [0, 1, 0]]),
    }
    path = tmp_path / "d.json"
    path.write_text(json.dumps(blob))
    posts, rejected = D.parse_dataset(path)
    assert [p.post_id for p in posts] == ["1", "2"] and rejected == []
    # the dataset's "None" target placeholder is not a community
    assert posts[0].annotators[0].targets == ()
    assert posts[1].rationales == ((0, 1, 1), (0, 1, 0))


def test_parse_rejects_rationale_length_mismatch(tmp_path):
    blob = {
        "ok": _hatexplain_entry("ok", ["a"], ["normal"] * 3, [[]] * 3, []),
        "bad": _hatexplain_entry("bad", ["a", "b"], ["offensive"] * 3, [[]] * 3, [[1, 0, 0]]),
        "broken": {"post_id": "broken"},
    }
    path = tmp_path / "d.json"
    path.write_text(json.dumps(blob))
    posts, rejected = D.parse_dataset(path)
    assert [p.post_id for p in posts] == ["ok"]
    assert sorted(pid for pid, _ in rejected) == ["bad", "broken"]
    assert "rationale length" in dict(rejected)["bad"]


def test_parse_errors(tmp_path):
    with pytest.raises(OSError):
        D.parse_dataset(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    with pytest.raises(D.DatasetFormatError):
        D.parse_dataset(bad)


def test_raw_round_trip_through_file(tmp_path, corpus):
    path = tmp_path / "raw.json"
    D.write_dataset(corpus["raw"], path)
    again, rejected = D.parse_dataset(path)
    assert rejected == []
    assert again == list(corpus["raw"])
    assert D.resolve_posts(again)[0] == D.resolve_posts(corpus["raw"])[0]


def test_resolved_post_round_trip(tmp_path, corpus):
    path = tmp_path / "processed.jsonl"
    D.write_processed(corpus["posts"], path)
    assert D.read_processed(path) == corpus["posts"]


# ---------------------------------------------------------------- resolution


@pytest.mark.parametrize("labels, expected", [
    (["hatespeech", "hatespeech", "normal"], "Hateful"),
    (["hatespeech", "offensive", "normal"], D.UNDECIDED),
    (["offensive", "offensive", "offensive"], "Offensive"),
])
def test_resolve_label_examples(labels, expected):
    assert D.resolve_label(labels) == expected


def test_resolve_label_two_of_three_exhaustive():
    raw = {"Hateful": "hatespeech", "Offensive": "offensive", "Normal": "normal"}
    for x, y in itertools.permutations(D.LABELS, 2):
        for order in set(itertools.permutations([raw[x], raw[x], raw[y]])):
            assert D.resolve_label(list(order)) == x


def test_resolve_label_needs_input():
    with pytest.raises(ValueError):
        D.resolve_label([])


@pytest.mark.parametrize("targets, expected", [
    ([{"Islam"}, {"Islam"}, set()], {"Islam"}),
    ([{"Women", "African"}, {"Women"}, {"African"}], {"Women", "African"}),
    ([{"A"}, {"B"}, {"C"}], set()),
])
def test_resolve_targets_examples(targets, expected):
    assert D.resolve_targets(targets) == expected


def test_gt_attention_examples():
    assert D.build_gt_attention([], "Normal", 4).tolist() == [0.25, 0.25, 0.25, 0.25]
    # rationales are ignored for Normal posts
    assert D.build_gt_attention([[1, 0, 0, 0]], "Normal", 4).tolist() == [0.25] * 4
    got = D.build_gt_attention([[1, 1, 0], [1, 0, 0], [0, 1, 0]], "Hateful", 3)
    e = np.exp([2 / 3, 2 / 3, 0.0])
    assert np.allclose(got, e / e.sum(), atol=1e-15)
    assert got[0] == got[1] > got[2]
    assert D.build_gt_attention([], "Hateful", 2).tolist() == [0.5, 0.5]


def test_gt_attention_errors():
    with pytest.raises(D.EmptySequenceError):
        D.build_gt_attention([], "Normal", 0)
    with pytest.raises(D.DatasetFormatError):
        D.build_gt_attention([[1, 0]], "Hateful", 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(0, 3), st.sampled_from(D.LABELS), st.integers(0, 2**31 - 1))
def test_gt_attention_is_permutation_equivariant_distribution(length, n_rat, label, seed):
    rng = np.random.default_rng(seed)
    rats = rng.integers(0, 2, size=(n_rat, length))
    perm = rng.permutation(length)
    base = D.build_gt_attention(rats.tolist(), label, length)
    permuted = D.build_gt_attention(rats[:, perm].tolist(), label, length)
    assert np.allclose(permuted, base[perm], atol=1e-15)
    assert np.all(base >= 0) and abs(base.sum() - 1) < 1e-6
    if label == "Normal":
        assert len(set(base.tolist())) == 1 and base[0] == 1.0 / length


def test_resolve_post_truncates_and_drops_undecided():
    raw = make_raw("p", list("abcdef"), ["offensive"] * 3, rationales=[[0, 0, 0, 0, 1, 1]] * 2)
    post = D.resolve_post(raw, max_len=4)
    assert len(post.tokens) == 4 and len(post.gt_attention) == 4
    assert abs(sum(post.gt_attention) - 1) < 1e-12
    # the truncated rationale is all zero, so attention is flat
    assert len(set(post.gt_attention)) == 1
    undecided = make_raw("u", ["a"], ["hatespeech", "offensive", "normal"])
    assert D.resolve_post(undecided) is None
    assert D.resolve_posts([raw, undecided])[1] == ["u"]


def test_majority_rationale():
    assert D.majority_rationale([[1, 1, 0], [1, 0, 0], [0, 1, 1]], "Hateful", 3).tolist() == [True, True, False]
    assert not D.majority_rationale([[1, 1, 1]], "Normal", 3).any()


def test_resolved_corpus_satisfies_invariants(corpus):
    for p in corpus["posts"]:
        g = np.array(p.gt_attention)
        assert np.all(g >= 0) and abs(g.sum() - 1) < 1e-6
        assert len(g) == len(p.tokens) == len(p.token_ids) == len(p.gt_rationale)
        if p.label == "Normal":
            assert np.all(g == 1.0 / len(g))


# ---------------------------------------------------------------- vocabulary and embeddings


def test_build_vocab_examples():
    v1 = D.build_vocab(["a b", "a"], min_freq=1)
    assert v1.itos == ["<pad>", "<unk>", "a", "b"]
    v2 = D.build_vocab(["a b", "a"], min_freq=2)
    assert v2.itos == ["<pad>", "<unk>", "a"]
    assert v2.index("b") == D.UNK_ID and v2.encode(["a", "zzz"]) == (2, 1)
    with pytest.raises(D.ConfigError):
        D.build_vocab(["a"], min_freq=0)


def test_vocab_is_bijective_and_order_independent(corpus):
    vocab = corpus["vocab"]
    assert len(set(vocab.itos)) == len(vocab)
    assert all(vocab.index(t) == i for i, t in enumerate(vocab.itos) if i >= 2)
    shuffled = list(reversed(corpus["posts"]))
    assert D.build_vocab(shuffled).itos == vocab.itos


def test_vocab_save_load_and_hash(tmp_path, corpus):
    path = tmp_path / "vocab.json"
    corpus["vocab"].save(path)
    loaded = D.Vocabulary.load(path)
    assert loaded.itos == corpus["vocab"].itos
    assert loaded.content_hash() == corpus["vocab"].content_hash()
    assert D.build_vocab(["q"]).content_hash() != loaded.content_hash()


def test_load_embeddings(tmp_path):
    vocab = D.build_vocab(["cat dog bird"])
    path = tmp_path / "emb.txt"
    path.write_text("cat 0.5 -1.25 3\nfish 1 2 3\n<pad> 9 9 9\n")
    m1 = D.load_embeddings(path, vocab, 3, seed=4)
    m2 = D.load_embeddings(path, vocab, 3, seed=4)
    assert m1.shape == (len(vocab), 3) and m1.dtype == np.float32
    assert m1[vocab.index("cat")].tolist() == [0.5, -1.25, 3.0]
    assert np.all(m1[D.PAD_ID] == 0)
    assert np.array_equal(m1, m2)
    oov = m1[vocab.index("dog")]
    assert np.all(np.abs(oov) <= 0.05) and np.any(oov != 0)


def test_load_embeddings_reports_bad_line(tmp_path):
    vocab = D.build_vocab(["cat"])
    path = tmp_path / "emb.txt"
    path.write_text("cat 1 2 3\ndog 1 2\n")
    with pytest.raises(D.DatasetFormatError, match=":2:"):
        D.load_embeddings(path, vocab, 3)


# ---------------------------------------------------------------- splits


def _balanced(n):
    labels = [D.LABELS[i % 3] for i in range(n)]
    return [D.ResolvedPost(f"p{i}", ("t",), l, frozenset(), (1.0,), (False,)) for i, l in enumerate(labels)]


def test_split_sizes_and_determinism():
    posts = _balanced(100)
    s1 = D.split_dataset(posts, (0.8, 0.1, 0.1), seed=3)
    s2 = D.split_dataset(posts, (0.8, 0.1, 0.1), seed=3)
    assert s1 == s2
    sizes = [len(s1[k]) for k in ("train", "val", "test")]
    assert sum(sizes) == 100 and abs(sizes[0] - 80) <= 2 and abs(sizes[1] - 10) <= 2 and abs(sizes[2] - 10) <= 2
    assert set(s1["train"]).isdisjoint(s1["val"]) and set(s1["val"]).isdisjoint(s1["test"])
    assert D.split_dataset(posts, (0.8, 0.1, 0.1), seed=4) != s1


def test_split_is_stratified(corpus):
    posts = corpus["posts"]
    splits = D.split_dataset(posts, (0.8, 0.1, 0.1), seed=0)
    by_id = {p.post_id: p for p in posts}
    overall = {l: np.mean([p.label == l for p in posts]) for l in D.LABELS}
    train = [by_id[i] for i in splits["train"]]
    for l in D.LABELS:
        assert abs(np.mean([p.label == l for p in train]) - overall[l]) < 0.02


def test_split_rejects_bad_ratios():
    with pytest.raises(D.ConfigError):
        D.split_dataset(_balanced(9), (0.5, 0.2, 0.2))


def test_stratified_subset(corpus):
    sub = D.stratified_subset(corpus["posts"], 60, seed=1)
    assert abs(len(sub) - 60) <= 2
    assert D.stratified_subset(corpus["posts"], 60, seed=1) == sub
