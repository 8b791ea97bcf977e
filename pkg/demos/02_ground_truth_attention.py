# coding: utf-8

# # From annotator votes to a training target

# Three annotators label each post and toxic labels come with token rationales. A post keeps the majority label; with no majority it is dropped.

from biatt_hatexplain import data as D
from biatt_hatexplain.synthetic import generate_posts

print(D.resolve_label(["hatespeech", "hatespeech", "normal"]))
print(D.resolve_label(["hatespeech", "offensive", "normal"]))


# Rationales are averaged per token and pushed through a softmax. Normal posts get a flat target whatever the annotators marked.

print(D.build_gt_attention([[1, 1, 0], [1, 0, 0], [0, 1, 0]], "Hateful", 3).round(4))
print(D.build_gt_attention([[1, 0, 0, 0]], "Normal", 4))


# # A synthetic corpus

# The real dataset is not bundled. The generator writes posts in the same JSON layout with planted toxic spans and community mentions.

raws = generate_posts(400, seed=1)
posts, undecided = D.resolve_posts(raws)
print(len(raws), "raw posts,", len(posts), "resolved,", len(undecided), "without a majority")

post = next(p for p in posts if p.label == "Hateful")
for tok, a, r in zip(post.tokens, post.gt_attention, post.gt_rationale):
    print(f"{tok:>12s} {a:.3f} {'*' if r else ''}")


# # Vocabulary and splits

vocab = D.build_vocab(posts, min_freq=1)
encoded = D.encode_posts(posts, vocab)
splits = D.split_dataset(encoded, (0.8, 0.1, 0.1), seed=0)
print(len(vocab), "types;", {k: len(v) for k, v in splits.items() if k in ("train", "val", "test")})
