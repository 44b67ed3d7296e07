"""Train both direct predictors on synthetic renders and compare their AP.

Run:  python demos/predict_from_images.py [n_train] [n_test]

Labels come from depth; the predictors only ever see the colour image.
Defaults (60 / 20 scenes) finish in a few minutes on one core; the
acceptance suite uses 200 / 50.
"""

import sys
import time

from affordance import evaluation as ev
from affordance import grid_predictor as gp
from affordance import midlevel as ml
from affordance.labeler import generate_labels
from affordance.synthetic import render, scene_suite

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 60
n_test = int(sys.argv[2]) if len(sys.argv) > 2 else 20


def dataset(n, seed):
    rows = []
    for spec in scene_suite(n, seed):
        r = render(spec)
        rows.append((r.rgb, generate_labels(r.depth)[0]))
    return rows


t0 = time.perf_counter()
train, test = dataset(n_train, 100), dataset(n_test, 200)
print(f"labelled {n_train + n_test} scenes in {time.perf_counter() - t0:.0f} s")

# %% grid of logistic predictions, one linear map shared by every cell
names = ["standing", "sitting_upright"]
model = gp.train(gp.GridModel.zeros(names, gp.SYNTH_FEATURES), [im for im, _ in train],
                 [maps for _, maps in train], gp.TrainConfig())
print("grid training loss by epoch:", " ".join(f"{row['standing']:.3f}" for row in model.log[::5]))
for a in names:
    preds = [gp.predict(model, im, a).scores for im, _ in test]
    print(f"grid      {a:16s} AP {ev.average_precision(preds, [m[a] for _, m in test]):.3f}")

# %% mid-level elements: detectors that paste a canonical label form where they fire
bank = ml.train_elements([im for im, _ in train], [m["standing"] for _, m in train], "standing",
                         ml.SYNTH_MIDLEVEL)
preds = [ml.infer(im, bank).scores for im, _ in test]
print(f"midlevel  standing         AP {ev.average_precision(preds, [m['standing'] for _, m in test]):.3f}"
      f"  ({len(bank)} elements)")
print(f"total {time.perf_counter() - t0:.0f} s")
