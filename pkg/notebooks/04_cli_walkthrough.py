# %% [markdown]
# # Command line round trip
#
# Write a dataset in the text format, train, evaluate and export the
# motif choices. The same calls work from a shell as `mcn train ...`.

# %%
import json
import tempfile
from pathlib import Path

from mcn.cli import main
from mcn.graph import save_dataset
from mcn.synthetic import two_blobs

root = Path(tempfile.mkdtemp())
d = two_blobs(n_per_class=20, seed=1)
save_dataset(root / "data", d.graph, d.labels, d.splits, d.features)
(root / "run.cfg").write_text("motifs = edge,triangle\nk_max = 2\nmax_epochs = 60\n")

# %%
main(["train", "--data", str(root / "data"), "--config", str(root / "run.cfg"), "--out", str(root / "run"), "--quiet"])
print(json.loads((root / "run" / "report.json").read_text())["test_accuracy"])

# %%
main(["eval", "--data", str(root / "data"), "--checkpoint", str(root / "run" / "checkpoint.mcn")])
main(["export-attention", "--data", str(root / "data"), "--checkpoint", str(root / "run" / "checkpoint.mcn"),
      "--out", str(root / "att"), "--quiet"])
print((root / "att" / "attention.csv").read_text().splitlines()[:5])

# %%
main(["motifs", "--data", str(root / "data"), "--motif", "triangle", "--out", str(root / "motifs"), "--quiet"])
print(sorted(p.name for p in (root / "motifs").iterdir()))
