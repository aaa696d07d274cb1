"""
Captions into the attention block
=================================

Hash-bucket caption vectors, the color-word mask, and one cross-modal
attention block applied to a random feature map.
"""

import numpy as np

from ecmsa.attention import EcmsaConfig, ecmsa_forward, init_params
from ecmsa.rng import Rng
from ecmsa.tensor import Tensor
from ecmsa.text import COLOR_LEXICON, ToyEncoder, mask_words, tokenize

caption = "The red kite above two white gulls"
toks = tokenize(caption)
print(toks)
print(mask_words(toks, COLOR_LEXICON))

# %%
# Masking color words moves the embedding; everything else is untouched.

enc = ToyEncoder(16)
masked = ToyEncoder(16, mask=COLOR_LEXICON)
e, m = enc(caption).values, masked(caption).values
print("cosine(full, no-color) = %.3f" % float(e @ m))

# %%
# One block on an 8-channel 6x6 map.  The output keeps the input's shape;
# every attention row is a distribution over the 36 positions.

p = init_params(8, 16, Rng(3))
v = Tensor(np.random.default_rng(3).normal(size=(8, 6, 6)))
out, acts = ecmsa_forward(v, Tensor(e), p)
print(out.shape, acts.attn.shape, float(np.abs(acts.attn.data.sum(1) - 1).max()))

# %%
# Without the residual the block returns only the attended branch.

bare, _ = ecmsa_forward(v, Tensor(e), p, EcmsaConfig(use_residual=False))
print("residual part recovered:", np.allclose(out.data - bare.data, v.data))
