"""
==================================
Gradients and losses on toy inputs
==================================

Every training objective in ``dafec`` is built from the small reverse-mode
``Tensor`` type. This script checks a gradient by hand and shows the
closed-form values the losses take on symmetric inputs.
"""

import math

import numpy as np

from dafec.losses import (
    AnnealSchedule,
    discriminator_loss,
    lambda_at,
    proto_ce_loss,
    similarity_entropy_loss,
)
from dafec.numerics import Tensor, finite_diff_grad

# %%
# A gradient, two ways
# --------------------
# Reverse mode records each operation and walks the record backwards.
# Central differences probe the function one coordinate at a time.

x0 = np.array([[0.3, -1.2], [0.8, 0.1], [-0.5, 0.9], [1.1, 1.4]])
x = Tensor(x0, requires_grad=True)
similarity_entropy_loss(x, tau=2.0).backward()
fd = finite_diff_grad(lambda p: similarity_entropy_loss(Tensor(p), tau=2.0).item(), x0)
print("reverse mode:\n", x.grad)
print("max abs gap to finite differences:", np.abs(x.grad - fd).max())

# %%
# Symmetric inputs
# ----------------
# A query equidistant from N prototypes is a uniform guess, so its
# cross-entropy is ln N. Identical target features give each row a flat
# distribution over the other m - 1 rows. A discriminator stuck at 0.5
# pays ln 2 on each domain.

n = 5
support = [(c, np.eye(n)[c : c + 1]) for c in range(n)]
print("CE", proto_ce_loss(support, np.zeros((1, n)), [0]).item(), "ln N", math.log(n))

m = 6
print("entropy", similarity_entropy_loss(np.ones((m, 3))).item(), "ln(m-1)", math.log(m - 1))

half = np.full(4, 0.5)
print("discriminator", discriminator_loss(half, half).item(), "2 ln 2", 2 * math.log(2))

# %%
# The annealing weight
# --------------------
# The entropy term's weight starts at 0 and rises to 1 over T iterations.

sched = AnnealSchedule(T=100)
for t in (0, 25, 50, 75, 100, 150):
    print(f"t={t:3d}  cosine {lambda_at(sched, t):.3f}  linear {lambda_at(AnnealSchedule(100, 'linear'), t):.3f}")
