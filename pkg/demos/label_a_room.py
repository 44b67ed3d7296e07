"""Label one synthetic room from its depth map and compare with the analytic oracle.

Run:  python demos/label_a_room.py [out_dir]

Writes a side-by-side PNG (colour render, generated labels, oracle labels)
per affordance and prints the agreement on decided pixels.
"""

import sys
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from affordance.labeler import AFFORDANCES, build_filter_bank, generate_labels
from affordance.synthetic import agreement_counts, oracle_affordances, render, scene_suite

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% a random room: floor, walls and a few boxes seen from head height
spec = scene_suite(1, seed=7)[0]
r = render(spec)
print("boxes:", ", ".join(b.category for b in spec.boxes))

# %% depth -> point cloud -> voxel grid -> pose filters -> per-pixel labels
maps, info = generate_labels(r.depth)
g = info["grid"]
print(f"grid {g['dims']} at {g['voxel_size']} m, {g['fill_conflicts']} fill conflicts")

# %% the oracle classifies voxels from the exact scene description
oracle = oracle_affordances(spec, build_filter_bank(), stride=2)

# labels -1/0/1 shown as grey/black/white
shown = lambda lab: np.choose(lab + 1, [0.5, 0.0, 1.0])  # noqa: E731
for a in AFFORDANCES:
    n, k = agreement_counts(maps[a], oracle)
    print(f"{a:16s} agreement {k}/{n} = {k / max(n, 1):.3f}")
    fig, ax = plt.subplots(1, 3, figsize=(9, 2.6))
    for axis, img, title in zip(ax, [r.rgb, shown(maps[a].labels), shown(oracle.maps[a].labels)],
                                ["render", "generated", "oracle"]):
        axis.imshow(img, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        axis.set_title(title)
        axis.axis("off")
    fig.suptitle(a)
    fig.tight_layout()
    fig.savefig(out / f"labels_{a}.png", dpi=100)
    plt.close(fig)
print("figures in", out)
