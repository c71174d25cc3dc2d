"""Ordered-blobs: a toy task that needs non-local context.

A grid holds K identical blobs; every blob cell must be labelled with the
blob's rank along axis 0 (background is class 0, blob k is class k + 1).
Each cell sees only its intensity and its own coordinate, and the blob group
sits at a random offset, so the rank is decided by where the *other* blobs
are. Both arms share a linear head over [block output, input]; the local arm
replaces the attention block by the identity on descriptors.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .pam import PamParams, init_params, pam_backward, pam_forward


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class BlobTask:
    length: int = 32
    n_blobs: int = 3
    width: int = 3
    max_gap: int = 5
    ndim: int = 1

    @property
    def n_classes(self) -> int:
        return self.n_blobs + 1

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.length,) * self.ndim

    @property
    def pitch(self) -> float:
        """Mean distance between consecutive blob starts; the coordinate unit."""
        return self.width + (self.max_gap + 1) / 2

    @property
    def spacing(self) -> np.ndarray:
        return np.full(self.ndim, 1.0 / self.pitch)

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """One grid: input (*dims, 2) = [intensity, axis-0 coordinate], labels (*dims,)."""
        L, K, w = self.length, self.n_blobs, self.width
        gaps = rng.integers(1, self.max_gap + 1, size=K - 1)
        span = K * w + gaps.sum()
        if span > L:
            raise ValueError("grid too short for the blobs")
        start = rng.integers(0, L - span + 1)
        labels = np.zeros(self.dims, dtype=np.int64)
        pos = start
        for k in range(K):
            if self.ndim == 1:
                labels[pos : pos + w] = k + 1
            else:
                col = rng.integers(0, L - w + 1)
                labels[pos : pos + w, col : col + w] = k + 1
            pos += w + (gaps[k] if k < K - 1 else 0)
        coord = np.broadcast_to(
            ((np.arange(L) - (L - 1) / 2) / self.pitch).reshape((L,) + (1,) * (self.ndim - 1)), self.dims
        )
        x = np.stack([(labels > 0).astype(np.float64), coord], axis=-1)
        return x, labels


@dataclass
class ToyModel:
    pam: PamParams
    H: np.ndarray  # (classes, V + C)
    h: np.ndarray  # (classes,)


def init_toy_model(task: BlobTask = BlobTask(), n_features: int = 8, n_descriptors: int = 4,
                   seed: int = 0, bandwidth: float = 1.0) -> ToyModel:
    channels = 2
    pam = init_params(channels, task.ndim, n_features, n_descriptors, seed=seed,
                      concat_input=True, bandwidth=bandwidth)
    rng = np.random.default_rng([seed, 1])
    fan_in = n_descriptors + channels
    lim = fan_in**-0.5
    return ToyModel(pam, rng.uniform(-lim, lim, (task.n_classes, fan_in)),
                    rng.uniform(-lim, lim, task.n_classes))


def _softmax_ce(logits, labels, weights):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.sum(weights * np.log(p[np.arange(n), labels] + 1e-300))
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits * weights[:, None], p.argmax(axis=1)


def _class_weights(labels):
    # blob cells and background cells carry equal total weight
    blob = labels > 0
    w = np.where(blob, 0.5 / max(blob.sum(), 1), 0.5 / max((~blob).sum(), 1))
    return w


def model_step(model: ToyModel, x, labels, task: BlobTask, arm: str = "pam", grads: bool = True):
    """Loss, blob-cell accuracy and (optionally) gradients on one grid."""
    labels = labels.ravel()
    if arm == "pam":
        z, cache = pam_forward(x, model.pam, task.spacing)
        z = z.reshape(len(labels), -1)
    elif arm == "local":
        xf = x.reshape(len(labels), -1)
        z = np.concatenate([xf @ model.pam.W_v.T + model.pam.b_v, xf], axis=1)
    else:
        raise ValueError(f"unknown arm {arm!r}")
    logits = z @ model.H.T + model.h
    loss, dlogits, pred = _softmax_ce(logits, labels, _class_weights(labels))
    blob = labels > 0
    acc = float(np.mean(pred[blob] == labels[blob]))
    if not grads:
        return loss, acc, None
    dz = dlogits @ model.H
    g = {"H": dlogits.T @ z, "h": dlogits.sum(axis=0)}
    if arm == "pam":
        g.update(pam_backward(cache, model.pam, dz))
    else:
        V = model.pam.W_v.shape[0]
        g.update(W_f=np.zeros_like(model.pam.W_f), b_f=np.zeros_like(model.pam.b_f),
                 W_v=dz[:, :V].T @ xf, b_v=dz[:, :V].sum(axis=0))
    return loss, acc, g


def evaluate(model: ToyModel, task: BlobTask, arm: str = "pam", n_grids: int = 64, seed: int = 12345) -> float:
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(n_grids):
        x, y = task.sample(rng)
        accs.append(model_step(model, x, y, task, arm, grads=False)[1])
    return float(np.mean(accs))


def train_toy(task: BlobTask, model0: ToyModel, steps: int = 500, lr: float = 1.0, seed: int = 0,
              arm: str = "pam", batch: int = 4) -> tuple[ToyModel, list[dict]]:
    """Plain gradient descent on fresh batches of grids.

    Returns the trained model and a per-step trace of loss and blob accuracy,
    both measured before the step's update on a fixed probe set of ``batch``
    grids (so the trace is flat when nothing changes).
    """
    rng = np.random.default_rng(seed)
    probe_rng = np.random.default_rng([seed, 2])
    probe = [task.sample(probe_rng) for _ in range(batch)]
    model = model0
    trace = []
    for step in range(steps):
        total = None
        try:
            probe_metrics = [model_step(model, x, y, task, arm, grads=False)[:2] for x, y in probe]
            loss_sum = 0.0
            for _ in range(batch):
                x, y = task.sample(rng)
                loss, _, g = model_step(model, x, y, task, arm)
                loss_sum += loss
                total = g if total is None else {k: total[k] + g[k] for k in total}
        except ValueError as exc:
            raise TrainingDiverged(step) from exc
        if not np.isfinite(loss_sum):
            raise TrainingDiverged(step)
        p_loss, p_acc = np.mean(probe_metrics, axis=0)
        trace.append({"step": step, "loss": float(p_loss), "accuracy": float(p_acc)})
        if lr != 0.0:
            pam = model.pam
            pam = replace(pam, **{k: getattr(pam, k) - lr * total[k] / batch for k in pam.arrays})
            model = ToyModel(pam, model.H - lr * total["H"] / batch, model.h - lr * total["h"] / batch)
    return model, trace
