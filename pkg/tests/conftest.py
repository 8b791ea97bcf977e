import numpy as np
import pytest

from biatt_hatexplain import data as D
from biatt_hatexplain.synthetic import Lexicon, generate_posts


@pytest.fixture(scope="session")
def lexicon():
    return Lexicon()


@pytest.fixture(scope="session")
def corpus(lexicon):
    """A small resolved, encoded synthetic corpus with vocabulary and embeddings."""
    raws = generate_posts(240, seed=11, lexicon=lexicon)
    posts, _ = D.resolve_posts(raws)
    vocab = D.build_vocab(posts)
    posts = D.encode_posts(posts, vocab)
    emb = D.random_embeddings(vocab, 8, seed=0)
    return {"raw": raws, "posts": posts, "vocab": vocab, "embeddings": emb}


def make_raw(post_id, tokens, labels, targets=None, rationales=()):
    targets = targets or [()] * len(labels)
    return D.RawPost(
        post_id=post_id,
        post_tokens=tuple(tokens),
        annotators=tuple(D.Annotation(label=l, targets=tuple(t), annotator_id=i) for i, (l, t) in
                         enumerate(zip(labels, targets))),
        rationales=tuple(tuple(r) for r in rationales),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
