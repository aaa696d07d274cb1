"""
Baseline against eCMSA on the two-blob task
===========================================

Each variant trains for 400 steps on the 200-scene synthetic set.  With a
caption the network can tell which disc to keep; without one it can only
hedge, which leaves MaxF-beta near 0.55.  How far above that the attached
model lands varies by seed.  Expect three to four minutes on a laptop CPU.
"""

import tempfile

from ecmsa.dataio import load_manifest, write_synth_dataset
from ecmsa.nets import NetConfig
from ecmsa.text import ToyEncoder
from ecmsa.training import TrainConfig, run_comparison

root = tempfile.mkdtemp()
recs = load_manifest(write_synth_dataset(root, 200, 50, 64, seed=0))

net_cfg = NetConfig(arch="unet", depth=3, base_channels=8, input_size=64, d_text=32)
cfg = TrainConfig(lr0=5e-3, steps=400, batch_size=8, seed=0)

# %%
variants = ["U-Net=", "U-Net+eCMSA=in:1-2", "no-color=in:1-2@no-color"]
result = run_comparison(recs, variants, net_cfg, cfg, ToyEncoder(32), out_dir=root + "/compare")
print(result.table())
print("artifacts under", root + "/compare")
