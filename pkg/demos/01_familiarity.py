"""How random network distillation separates familiar tasks from novel ones.

A frozen random network maps each embedding to a 128-d code; a second
network learns to imitate it, but only on the tasks it is shown. The gap
between the two codes is small where the imitator has practised and large
elsewhere.

Run: python3 demos/01_familiarity.py
"""

import numpy as np

from cure.data import Dataset, TaskRecord
from cure.nn import make_rng
from cure.rnd import rnd_init, rnd_score_batch, rnd_train

rng = make_rng(0)
dim = 8

# known tasks: a tight cloud around the origin
known = rng.normal(0.0, 0.1, size=(300, dim))
records = [TaskRecord(f"k{i:03d}", known[i], 0, 1, "train" if i < 200 else "test") for i in range(300)]
data = Dataset(records)

model = rnd_init(dim, seed=0)
print("before training, mean gap on known tasks:", rnd_score_batch(model, known[:200]).mean().round(3))

result = rnd_train(model, data, epochs=100, batch_size=64)
trained = result.model
print("training loss, first and last epoch:", round(result.history[0], 4), round(result.history[-1], 6))

# held-out points from the same cloud vs. points far away
held_out = data.split("test").embeddings()
far = rng.normal(size=(100, dim))
far = 10 * far / np.linalg.norm(far, axis=1, keepdims=True)

a_in = rnd_score_batch(trained, held_out)
a_out = rnd_score_batch(trained, far)
print(f"held-out familiar tasks: mean a_sim = {a_in.mean():.3f}")
print(f"far-away novel tasks:    mean a_sim = {a_out.mean():.3f}  ({a_out.mean() / a_in.mean():.0f}x larger)")

# the target network never moves
assert trained.target.tobytes() == model.target.tobytes()
print("target network untouched by training: yes")
