"""
Scoring saliency maps
=====================

MaxF-beta, MAE, MaxE and S on a blurred-disc prediction, then the same
numbers for a prediction that picked the wrong object.
"""

import numpy as np

from ecmsa.metrics import mae, max_e_m, max_f_beta, pr_curve, s_measure

yy, xx = np.mgrid[0:32, 0:32]
gt = ((yy - 10) ** 2 + (xx - 10) ** 2 <= 36).astype(float)
other = ((yy - 22) ** 2 + (xx - 22) ** 2 <= 36).astype(float)

def soften(m, k=3):
    # box blur so thresholds have something to sweep
    p = np.pad(m, k, mode="edge")
    return np.mean([p[i:i + 32, j:j + 32] for i in range(2 * k + 1) for j in range(2 * k + 1)], axis=0)

# %%
for name, pred in (("right blob", soften(gt)), ("wrong blob", soften(other)), ("perfect", gt)):
    f, _ = max_f_beta(pred, gt)
    print("%-10s  MaxFb %.4f  MAE %.4f  MaxEm %.4f  Sm %.4f" % (name, f, mae(pred, gt), max_e_m(pred, gt),
                                                             s_measure(pred, gt)))

# %%
# Precision rises and recall falls as the threshold climbs.

p, r = pr_curve(soften(gt), gt)
for i in (0, 64, 128, 192, 255):
    print("t=%.3f  P=%.3f  R=%.3f" % (i / 255, p[i], r[i]))
