# Ordered blobs: labels depend on where the other blobs are.
import numpy as np

from pamlattice.toy import BlobTask, evaluate, init_toy_model, train_toy

task = BlobTask()
x, y = task.sample(np.random.default_rng(0))
print("intensity", "".join("#" if v else "." for v in x[:, 0]))
print("labels   ", "".join(str(v) if v else "." for v in y))

m0 = init_toy_model(task, seed=0)
for arm in ("pam", "local"):
    model, trace = train_toy(task, m0, steps=500, seed=0, arm=arm)
    losses = [t["loss"] for t in trace]
    print(f"{arm:5s}  loss {losses[0]:.3f} -> {losses[-1]:.3f}   held-out blob accuracy {evaluate(model, task, arm):.3f}")
# a local model sees only intensity and position, so it can at best guess
# the rank from the absolute position; attention lets a cell look at the others
