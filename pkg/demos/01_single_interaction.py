# Training a blended model and following one interaction frame by frame
#
# We generate a small synthetic corpus of three interaction classes, train a
# model with one sub-ensemble per class, then stream one held-out interaction
# through an inference session and watch the class posterior and phase.

# %%

import numpy as np

from bbip import SyntheticConfig, generate_synthetic, train

train_corpus = generate_synthetic(SyntheticConfig(classes=3, per_class=10), seed=0)
model = train(train_corpus.by_class())
print("classes:", model.classes)
print("ensemble sizes:", model.ensemble_sizes)

# %% [markdown]
# Each demo has four DoFs. The first two are observed (the partner), the last
# two are controlled (the robot). The session sees only the observed values.

# %%

test_corpus = generate_synthetic(SyntheticConfig(classes=3, per_class=1), seed=1)
demo = test_corpus.demos[1]
print("true class:", demo.class_label, "samples:", demo.sample_count)

session = model.session(seed=0)
outputs = session.run(demo.frames())

for out in outputs[::15]:
    phase = float(np.dot(out.class_posterior, out.phases))
    print(f"frame {out.frame_index:3d}  posterior {np.round(out.class_posterior, 3)}  phase {phase:.3f}")

# %% [markdown]
# The response is the posterior mixture of each class's predicted controlled
# DoFs. Compare it against what the demonstrator actually did.

# %%

predicted = np.column_stack([o.response for o in outputs])
truth = demo.controlled[:, : predicted.shape[1]]
print("response MSE:", float(np.mean((predicted - truth) ** 2)))
