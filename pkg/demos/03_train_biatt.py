# coding: utf-8

# # Training the two attention heads

# A BiGRU encodes the post. The matrix head scores each hidden state with one vector; the BiAtt head runs a second BiGRU over the hidden states first. Both are trained with cross-entropy on the label plus a weighted cross-entropy between attention and the ground truth.

import tempfile
from pathlib import Path

import numpy as np

from biatt_hatexplain import data as D
from biatt_hatexplain.metrics import constant_region_variation
from biatt_hatexplain.synthetic import Lexicon, generate_posts, write_embeddings
from biatt_hatexplain.training import TrainConfig, evaluate_split, train

lex = Lexicon()
posts, _ = D.resolve_posts(generate_posts(900, seed=3, lexicon=lex))
vocab = D.build_vocab(posts)
posts = D.encode_posts(posts, vocab)
splits = D.split_dataset(posts, (0.8, 0.1, 0.1), seed=0)
by_id = {p.post_id: p for p in posts}
train_posts = [by_id[i] for i in splits["train"]]
val_posts = [by_id[i] for i in splits["val"]]


# Word vectors where words of one kind sit near each other, standing in for pretrained embeddings.

emb_path = Path(tempfile.mkdtemp()) / "vectors.txt"
write_embeddings(emb_path, lex, dim=50, seed=0)
emb = D.load_embeddings(emb_path, vocab, 50, seed=0)


# Small settings so this runs in well under a minute.

results = {}
for head in ("matrix", "biatt"):
    cfg = TrainConfig(head=head, hidden_units=32, epochs=5, lam=100.0, seed=0)
    res = train(cfg, train_posts, val_posts, emb)
    results[head] = res
    for row in res.log:
        print(head, row)


# Attention on a Normal validation post should be close to flat. Total variation inside flat regions of the target measures how far it wanders.

for head, res in results.items():
    ev = evaluate_split(res.model, val_posts)
    tv = np.mean([constant_region_variation(a, p.gt_attention) for p, a in zip(val_posts, ev["attention"])])
    print(f"{head:>6s}  macro F1 {ev['macro_f1']:.3f}  attention CE {ev['att_loss']:.3f}  TV {tv:.4f}")
