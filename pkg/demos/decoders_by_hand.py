"""
The three decoders on a toy embedding
=====================================

Two nodes sit two units apart; node 1 is heavier. The gravity decoder
gives different probabilities for the two directions, the inner product
cannot.
"""

import math

import numpy as np

from gravityrank import models

zt = np.array([[0.0, 0.0, 0.0],
               [2.0, 0.0, math.log(2)]])   # last column is the mass
emb = models.split_embedding(zt)

for lam in (0.0, 1.0, 5.0):
    p01 = models.decode_gravity(emb, lam, models.EPS_DIST, 0, 1)
    p10 = models.decode_gravity(emb, lam, models.EPS_DIST, 1, 0)
    print(f"gravity lambda={lam:g}: p(0->1)={p01:.4f}  p(1->0)={p10:.4f}")

z = zt[:, :2]
print(f"inner product: p(0->1)={models.decode_inner(z, 0, 1):.4f}  p(1->0)={models.decode_inner(z, 1, 0):.4f}")

# source-target halves: first half of the source, second half of the target
st = np.array([[1.0, 0.0], [0.0, 1.0]])
print(f"source-target: p(0->1)={models.decode_source_target(st, 0, 1):.4f}  "
      f"p(1->0)={models.decode_source_target(st, 1, 0):.4f}")

# moving node 1 away lowers p(0->1); lambda sets how fast
for dist in (0.5, 1.0, 2.0, 4.0):
    far = models.GravityEmbedding(np.array([[0.0, 0.0], [dist, 0.0]]), emb.masses)
    print(f"distance {dist:>3}: " + "  ".join(
        f"lambda={lam:g} -> {models.decode_gravity(far, lam, models.EPS_DIST, 0, 1):.3f}" for lam in (1, 5)))
