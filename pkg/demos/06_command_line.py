# coding: utf-8

# # The full pipeline from the command line

# Each step is a subcommand and writes a run_manifest.json next to its outputs. Here they are called in-process on a small synthetic corpus.

import json
import tempfile
from pathlib import Path

from biatt_hatexplain.cli import main

work = Path(tempfile.mkdtemp())
print(work)

main(["synth", "--out", str(work / "raw.json"), "--n-posts", "600", "--seed", "0",
      "--embeddings", str(work / "emb.txt"), "--embedding-dim", "16"])
main(["prepare", "--dataset", str(work / "raw.json"), "--embeddings", str(work / "emb.txt"),
      "--embedding-dim", "16", "--out", str(work / "prep")])


# Train both heads briefly.

for head in ("biatt", "matrix"):
    main(["train", "--data", str(work / "prep"), "--out", str(work / head), "--head", head,
          "--hidden-units", "16", "--epochs", "3"])
print((work / "biatt" / "epochs.csv").read_text())


# Evaluate with attention as the explanation and look at the summary row.

main(["eval", "--checkpoint", str(work / "biatt" / "checkpoint"), "--data", str(work / "prep"),
      "--out", str(work / "eval")])
print((work / "eval" / "report.csv").read_text())
print(json.dumps(json.loads((work / "eval" / "report.json").read_text())["per_community"][:2], indent=1))


# Plot attention of both heads against the ground truth for one test post.

test_id = json.loads((work / "prep" / "split.json").read_text())["test"][0]
main(["plot", "--post-id", test_id, "--data", str(work / "prep"), "--out", str(work / "plots"),
      "--checkpoints", f"{work / 'biatt' / 'checkpoint'},{work / 'matrix' / 'checkpoint'}"])
print(sorted(p.name for p in (work / "plots").iterdir()))
