"""
The two-blob dataset
====================

Each scene holds two discs of different colors; only the caption says
which one is the target.  Files are binary PPM/PGM plus a JSONL manifest.
"""

import tempfile

import numpy as np

from ecmsa.dataio import AugmentConfig, augment, caption_stats, load_manifest, sample_rng, write_synth_dataset

root = tempfile.mkdtemp()
path = write_synth_dataset(root, n_train=12, n_test=4, size=64, seed=0)
recs = load_manifest(path)
print(len(recs), "records;", recs[0].caption, "|", recs[1].caption)

# %%
image, mask = recs[0].load()
print("image", image.shape, "mask foreground fraction %.3f" % mask.mean())

# %%
# Flip, contrast and a 90% crop.  The per-sample stream depends on the
# global seed and the sample id only, so order of loading doesn't matter.

a, m = augment(image, mask, AugmentConfig(), sample_rng(0, recs[0].id), multiple=8)
print("augmented", a.shape, m.shape, "mask values", np.unique(m))

# %%
s = caption_stats(recs)
print(s.to_json())
