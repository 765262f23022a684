"""Build pseudo bitemporal pairs from single-temporal tiles.

Walks through the core trick: a batch of unrelated images is re-paired with
a shuffled copy of itself (no image paired with itself), and the change
target is the xor of the two semantic masks. Saves a contact sheet so you
can eyeball what the change head is asked to predict.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from starcd import (
    SyntheticSceneSpec,
    generate_synthetic,
    make_pseudo_pair_batch,
    sample_derangement,
)

rng = np.random.default_rng(0)

# A derangement is just a permutation with no fixed points.
d = sample_derangement(6, rng)
print("derangement of 6:", d.indices)
assert all(i != p for i, p in enumerate(d.indices))

# Six synthetic tiles with semantic masks stand in for a real inventory.
spec = SyntheticSceneSpec(canvas_size=96, seed=3)
tiles, _ = generate_synthetic(spec, 6, 0)
x = torch.stack([torch.from_numpy(t.image) for t in tiles])
y = torch.stack([torch.from_numpy(t.mask) for t in tiles])

batch = make_pseudo_pair_batch(x, y, rng, label_mode="xor")
print("pairing:", list(enumerate(batch.permutation.indices)))

fig, axes = plt.subplots(3, len(tiles), figsize=(2.2 * len(tiles), 6.8))
for i in range(len(tiles)):
    axes[0, i].imshow(batch.x1[i].permute(1, 2, 0))
    axes[0, i].set_title(f"t1 = tile {i}")
    axes[1, i].imshow(batch.x2[i].permute(1, 2, 0))
    axes[1, i].set_title(f"t2 = tile {batch.permutation.indices[i]}")
    axes[2, i].imshow(batch.y_change[i], cmap="gray")
    axes[2, i].set_title("xor change target")
for ax in axes.ravel():
    ax.axis("off")
fig.tight_layout()
fig.savefig("pseudo_pairs.png", dpi=110)
print("wrote pseudo_pairs.png")
