"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints ``PASS criterion N: ...`` or ``FAIL criterion N: ...``; the
lines are repeated in the terminal summary.
"""

import contextlib
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from biatt_hatexplain import cli
from biatt_hatexplain import data as D
from biatt_hatexplain import explainers as X
from biatt_hatexplain import metrics as M
from biatt_hatexplain import synthetic
from biatt_hatexplain import tensor as T
from biatt_hatexplain.experiments import supervision_study
from biatt_hatexplain.models import EncoderConfig, HateXplainModel, ModelConfig, load_checkpoint, pad_batch
from biatt_hatexplain.training import attention_loss, prediction_loss, total_loss
from conftest import ACCEPTANCE_LINES


@contextlib.contextmanager
def criterion(n, text):
    detail = {}
    try:
        yield detail
    except BaseException:
        line = f"FAIL criterion {n}: {text} {detail.get('info', '')}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    line = f"PASS criterion {n}: {text} {detail.get('info', '')}".rstrip()
    print(line)
    ACCEPTANCE_LINES.append(line)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_check():
    with criterion(1, "full BiAtt graph gradients match central differences") as d:
        start = time.perf_counter()
        cfg = ModelConfig(head="biatt", encoder=EncoderConfig(cell="GRU", hidden_units=3, embedding_dim=4),
                          attention_hidden=3, vocab_size=7, seed=3)
        model = HateXplainModel(cfg, dtype=np.float64)
        ids = np.array([[2, 3, 4], [5, 6, 0]])
        mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=bool)
        gt = np.array([[0.2, 0.5, 0.3], [0.6, 0.4, 0.0]])
        labels = np.array([0, 2])

        def loss_fn():
            out = model.forward(ids, mask, training=True, rng=np.random.default_rng(9))
            loss, _ = total_loss(prediction_loss(out.logits, labels), attention_loss(out.attention, gt, mask), 100.0)
            return loss

        errors = T.gradient_check(loss_fn, model.trainable(), step=1e-4)
        elapsed = time.perf_counter() - start
        worst = max(errors, key=errors.get)
        d["info"] = f"(worst {worst} rel err {errors[worst]:.2e}, {elapsed:.1f}s)"
        assert set(errors) == set(model.trainable())
        assert errors[worst] < 1e-3
        assert elapsed < 60


# ---------------------------------------------------------------- 2


def test_criterion_2_shapley_oracle():
    with criterion(2, "exact Shapley equals additive weights and is efficient") as d:
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            w, b = rng.normal(size=6), float(rng.normal())
            fn = lambda m, w=w, b=b: b + np.atleast_2d(m).astype(float) @ w
            exp = X.shap_exact(fn, 6)
            worst = max(worst, np.max(np.abs(exp.token_scores - w)),
                        abs(exp.base_value + exp.token_scores.sum() - fn(np.ones(6))[0]))
        d["info"] = f"(max deviation {worst:.1e} over 50 models)"
        assert worst < 1e-6


# ---------------------------------------------------------------- 3


def test_criterion_3_auroc_oracle():
    with criterion(3, "binary_auroc equals pair counting on 200 instances") as d:
        rng = np.random.default_rng(123)
        checked = 0
        for _ in range(200):
            n = int(rng.integers(2, 51))
            scores = rng.integers(0, 6, size=n) / 5.0  # coarse grid forces ties
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                labels[0] = not labels[0]
            pos, neg = scores[labels], scores[~labels]
            wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
            assert M.binary_auroc(scores, labels) == wins / (len(pos) * len(neg))
            checked += 1
        d["info"] = f"({checked} instances)"


# ---------------------------------------------------------------- 4


@pytest.fixture(scope="module")
def prepared_dataset(tmp_path_factory):
    """The real dataset when ``$BIATT_DATA_ROOT/dataset.json`` exists, else a 20k-post synthetic one."""
    root = os.environ.get(cli.DATA_ROOT_ENV)
    out = tmp_path_factory.mktemp("prepared")
    source = Path(root) / "dataset.json" if root else None
    if source is None or not source.exists():
        source = out / "synthetic.json"
        assert cli.main(["synth", "--out", str(source), "--n-posts", "20000", "--seed", "2024"]) == 0
    assert cli.main(["prepare", "--dataset", str(source), "--out", str(out / "prep"), "--embedding-dim", "4"]) == 0
    return D.read_processed(out / "prep" / "processed.jsonl")


def test_criterion_4_ground_truth_attention(prepared_dataset):
    with criterion(4, "gt attention is uniform on Normal posts and sums to one") as d:
        posts = prepared_dataset
        n_normal = 0
        for p in posts:
            g = np.asarray(p.gt_attention)
            assert len(g) == len(p.tokens)
            assert abs(g.sum() - 1.0) <= 1e-6, p.post_id
            if p.label == "Normal":
                n_normal += 1
                assert np.all(g == 1.0 / len(g)), p.post_id
        d["info"] = f"({len(posts)} posts, {n_normal} Normal)"
        assert n_normal > 0 and len(posts) > n_normal


# ---------------------------------------------------------------- 5 and 6


@pytest.fixture(scope="module")
def study():
    lex = synthetic.Lexicon()
    raws = synthetic.generate_posts(1500, seed=7, lexicon=lex)
    posts, _ = D.resolve_posts(raws)
    splits = D.split_dataset(posts, (0.8, 0.1, 0.1), seed=0)
    by_id = {p.post_id: p for p in posts}
    vocab = D.build_vocab([by_id[i] for i in splits["train"]])
    encoded = {p.post_id: p for p in D.encode_posts(posts, vocab)}
    train = D.stratified_subset([encoded[i] for i in splits["train"]], 500, seed=0)
    val = [encoded[i] for i in splits["val"]]
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "emb.txt"
        synthetic.write_embeddings(path, lex, dim=50, seed=0)
        emb = D.load_embeddings(path, vocab, 50, seed=0)
    start = time.perf_counter()
    rows = supervision_study(train, val, emb, seeds=(0, 1, 2), epochs=5)
    per_run = (time.perf_counter() - start) / len(rows)
    return {(r["seed"], r["run"]): r for r in rows}, per_run


@pytest.mark.slow
def test_criterion_5_supervision_lowers_attention_loss(study):
    rows, per_run = study
    with criterion(5, "lam=100 beats lam=0 on val attention CE for every seed") as d:
        pairs = [(rows[s, "biatt_supervised"]["val_att_ce"], rows[s, "biatt_unsupervised"]["val_att_ce"])
                 for s in range(3)]
        d["info"] = "(" + ", ".join(f"{a:.3f} vs {b:.3f}" for a, b in pairs) + f"; {per_run:.0f}s per run)"
        assert all(a < b for a, b in pairs)
        assert per_run < 15 * 60


@pytest.mark.slow
def test_criterion_6_biatt_attention_is_smoother(study):
    rows, _ = study
    with criterion(6, "BiAtt total variation below matrix in >= 2 of 3 seeds") as d:
        pairs = [(rows[s, "biatt_supervised"]["mean_tv"], rows[s, "matrix_supervised"]["mean_tv"]) for s in range(3)]
        wins = sum(a < b for a, b in pairs)
        d["info"] = f"({wins}/3; " + ", ".join(f"{a:.4f} vs {b:.4f}" for a, b in pairs) + ")"
        assert wins >= 2


# ---------------------------------------------------------------- 7

# records: gt, predicted, class probabilities, communities, gt rationale, selection, token scores
BATTERY = [
    ("Hateful", "Hateful", (0.6, 0.3, 0.1), ["A"], [1, 1, 0, 0], [1, 1, 0, 0], [9, 8, 1, 0]),
    ("Hateful", "Offensive", (0.3, 0.5, 0.2), ["A", "B"], [0, 1, 1, 0], [0, 1, 0, 0], [2, 7, 3, 1]),
    ("Hateful", "Normal", (0.2, 0.2, 0.6), ["B"], [1, 0, 0, 0], [0, 0, 1, 0], [3, 3, 6, 2]),
    ("Hateful", "Hateful", (0.5, 0.4, 0.1), [], [0, 0, 1, 1], [0, 0, 1, 1], [1, 2, 8, 7]),
    ("Offensive", "Offensive", (0.1, 0.7, 0.2), ["A"], [0, 1, 0, 0], [1, 1, 0, 0], [5, 6, 1, 1]),
    ("Offensive", "Offensive", (0.2, 0.6, 0.2), [], [1, 1, 1, 0], [1, 1, 1, 0], [6, 5, 4, 0]),
    ("Offensive", "Hateful", (0.5, 0.3, 0.2), ["B"], [0, 0, 0, 1], [1, 0, 0, 0], [4, 0, 0, 3]),
    ("Offensive", "Normal", (0.1, 0.3, 0.6), ["A"], [1, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1]),
    ("Normal", "Normal", (0.1, 0.1, 0.8), ["A"], [0, 0, 0, 0], [0, 0, 0, 0], [2, 2, 2, 2]),
    ("Normal", "Normal", (0.2, 0.2, 0.6), ["B"], [0, 0, 0, 0], [0, 1, 0, 0], [1, 5, 2, 2]),
    ("Normal", "Offensive", (0.2, 0.5, 0.3), [], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]),
    ("Normal", "Normal", (0.1, 0.2, 0.7), ["A", "B"], [0, 0, 0, 0], [1, 0, 0, 0], [3, 1, 1, 1]),
]

# frozen from an exact-fraction oracle (pair counting for AUCs, threshold sweep for AP)
EXPECTED = {
    "accuracy": 7 / 12,
    "macro_f1": 73 / 126,
    "auroc": 41 / 48,
    "gmb_subgroup": 0.952942514694243,
    "gmb_bpsn": 0.9730823779399236,
    "gmb_bnsp": 0.8225213714093573,
    "iou_f1": 10 / 21,
    "token_f1": 2 / 3,
    "auprc": 60029 / 74360,
    "comprehensiveness": 9 / 80,
    "sufficiency": 1 / 20,
}
EXPECTED_COMMUNITIES = {
    "A": {"subgroup": 1.0, "bpsn": 1.0, "bnsp": 13 / 16},
    "B": {"subgroup": 11 / 12, "bpsn": 19 / 20, "bnsp": 5 / 6},
}


def _rationale_model(gt):
    """Class-0 probability 0.2 + 0.15 per kept rationale token."""
    gt = np.asarray(gt, dtype=float)

    def fn(keep):
        p0 = 0.2 + 0.15 * (np.atleast_2d(keep).astype(float) @ gt)
        return np.stack([p0, (1 - p0) / 2, (1 - p0) / 2], axis=1)

    return fn


def test_criterion_7_metric_battery():
    with criterion(7, "12-record metric battery matches hand-computed values") as d:
        records = []
        for i, (gt, pred, probs, coms, rat, sel, scores) in enumerate(BATTERY):
            fn = _rationale_model(rat)
            records.append(M.PredictionRecord(
                post_id=f"r{i}", class_probs=list(probs), predicted_label=pred, gt_label=gt, communities=coms,
                token_scores=[float(s) for s in scores], gt_rationale=[bool(x) for x in rat],
                gt_attention=[0.25] * 4, selected=[bool(x) for x in sel],
                comprehensiveness=M.comprehensiveness(fn, sel, target=0),
                sufficiency=M.sufficiency(fn, sel, target=0)))
        report = M.evaluate(records)
        got = {k: getattr(report, k) for k in EXPECTED}
        worst = max(abs(got[k] - v) for k, v in EXPECTED.items())
        d["info"] = f"(max deviation {worst:.1e})"
        for k, v in EXPECTED.items():
            assert got[k] == pytest.approx(v, abs=1e-9), k
        for row in report.per_community:
            for k, v in EXPECTED_COMMUNITIES[row["community"]].items():
                assert row[k] == pytest.approx(v, abs=1e-9), (row["community"], k)


# ---------------------------------------------------------------- 8


def test_criterion_8_lime_recovery():
    with criterion(8, "LIME recovers the single influential token at n_samples=500") as d:
        k, n_tokens = 3, 8

        def oracle(masks):
            p = 0.1 + 0.5 * np.atleast_2d(masks)[:, k].astype(float)
            return np.stack([p, 1 - p], axis=1)

        coefs = []
        for seed in range(10):
            exp = X.lime_explain(oracle, n_tokens, target=0, n_samples=500, seed=seed)
            coefs.append(exp.token_scores[k])
            assert int(np.argmax(exp.token_scores)) == k
            assert abs(exp.token_scores[k] - 0.5) < 0.05
        d["info"] = f"(coefficient range {min(coefs):.4f}..{max(coefs):.4f})"


# ---------------------------------------------------------------- 9


def test_criterion_9_reproducibility(tmp_path):
    with criterion(9, "train is byte-reproducible and checkpoints reload bitwise") as d:
        assert cli.main(["synth", "--out", str(tmp_path / "raw.json"), "--n-posts", "300", "--seed", "9",
                         "--embeddings", str(tmp_path / "emb.txt"), "--embedding-dim", "16"]) == 0
        assert cli.main(["prepare", "--dataset", str(tmp_path / "raw.json"), "--embeddings", str(tmp_path / "emb.txt"),
                         "--embedding-dim", "16", "--out", str(tmp_path / "prep")]) == 0
        flags = ["--data", str(tmp_path / "prep"), "--epochs", "2", "--hidden-units", "8", "--seed", "4"]
        for run in ("a", "b"):
            assert cli.main(["train", *flags, "--out", str(tmp_path / run)]) == 0
        csv_a = (tmp_path / "a" / "epochs.csv").read_bytes()
        assert csv_a == (tmp_path / "b" / "epochs.csv").read_bytes()

        prepared = cli.load_prepared(tmp_path / "prep")
        posts = list(prepared.posts.values())[:100]
        assert len(posts) == 100
        ids, mask = pad_batch([p.token_ids for p in posts])
        model_a, _ = load_checkpoint(tmp_path / "a" / "checkpoint")
        model_b, _ = load_checkpoint(tmp_path / "b" / "checkpoint")
        resaved = tmp_path / "resaved"
        from biatt_hatexplain.models import save_checkpoint
        save_checkpoint(model_a, resaved)
        model_c, _ = load_checkpoint(resaved)
        logits = [m.forward(ids, mask).logits.data for m in (model_a, model_b, model_c)]
        assert logits[0].tobytes() == logits[1].tobytes() == logits[2].tobytes()
        d["info"] = f"({len(csv_a.splitlines()) - 1} epochs, logits on {len(posts)} posts)"
