# Watching the class posterior follow a mid-interaction switch
#
# A switching demo starts as one class and blends into another at its
# midpoint. The generator records where the switch happens, so we can compare
# the frame at which the posterior changes its mind with the ground truth.

# %%

import numpy as np

from bbip import SyntheticConfig, generate_synthetic, train
from bbip.evaluation import switch_frame

model = train(generate_synthetic(SyntheticConfig(classes=2, per_class=15), seed=11).by_class())

config = SyntheticConfig(classes=2, per_class=0, switch_count=4, switch_at=0.5, blend_width=0.1)
switching = generate_synthetic(config, seed=5)

# %%

for k, (demo, truth) in enumerate(zip(switching.demos, switching.truth)):
    outputs = model.session(seed=k).run(demo.frames())
    trace = np.vstack([o.class_posterior for o in outputs])
    src, tgt = model.classes.index(truth["source"]), model.classes.index(truth["target"])
    crossing = switch_frame(trace, src, tgt)
    print(f"{truth['label']:28s} switch at {truth['switch_index']:3d}, posterior crosses at {crossing}")

# %% [markdown]
# Optional session settings trade responsiveness for stability: a smoothing
# half life filters the per-frame posterior, and the cumulative mode scores
# each class on the whole history seen so far.

# %%

demo, truth = switching.demos[0], switching.truth[0]
for opts in ({}, {"smoothing_half_life": 5.0}, {"cumulative": True}):
    trace = np.vstack([o.class_posterior for o in model.session(seed=0, **opts).run(demo.frames())])
    f = switch_frame(trace, model.classes.index(truth["source"]), model.classes.index(truth["target"]))
    print(opts or "per-frame", "->", f)
