"""Frozen-state probes: a linear read-out of the hidden latent and a cluster separation score."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest
from sklearn.metrics import silhouette_score

from ..camosim import CHANCE, Dataset
from ..numerics import AdamW, Parameter, T, no_grad
from .config import RunConfig
from .data import prepare
from .model import Model

log = logging.getLogger(__name__)


def parameter_hash(model) -> str:
    digest = hashlib.sha256()
    for name, p in model.named_parameters():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def decision_states(model: Model, ds: Dataset, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frozen ``h`` at decision frames with their latent labels and episode ids.

    Spatial and episodic: the first acting frame, labelled by the hidden slot.
    Sequential: every frame, labelled by its phase id (stage and sub-phase).
    """
    feats, labels, groups = [], [], []
    with no_grad():
        for k, ep in enumerate(prepare(ds, cfg)):
            e = ep.episode
            h, _ = model.encode(e.front[None], e.hand[None],
                                type(ep.geometry)(*(a[None] for a in (ep.geometry.desc_front, ep.geometry.desc_hand,
                                                                      ep.geometry.epi_fh, ep.geometry.epi_hf))),
                                e.proprio[None], e.phase[None].astype(np.int64))
            h = h.data[0]
            if ds.task == "sequential":
                idx = np.arange(len(e))
                lab = e.phase.astype(np.int64)
            else:
                idx = np.flatnonzero(e.psi == 1)[:1]
                lab = e.latent[idx].astype(np.int64)
            feats.append(h[idx])
            labels.append(lab)
            groups.append(np.full(len(idx), k))
    return np.concatenate(feats), np.concatenate(labels), np.concatenate(groups)


@dataclass
class ProbeResult:
    correct: int
    total: int
    chance: float
    p_value: float
    train_accuracy: float
    skipped: str | None = None

    @property
    def csr(self) -> float | None:
        return self.correct / self.total if self.total else None

    @property
    def above_chance(self) -> bool:
        return self.skipped is None and self.p_value < 0.05


def fit_linear_probe(x_train, y_train, x_test, y_test, n_classes: int, chance: float,
                     steps: int = 200, lr: float = 0.05, seed: int = 0) -> ProbeResult:
    """Multinomial logistic regression on standardized features, full-batch AdamW."""
    if len(np.unique(y_train)) < 2:
        log.warning("probe skipped: training labels contain a single class")
        return ProbeResult(0, 0, chance, 1.0, 0.0, skipped="single-class labels")
    mu = x_train.mean(0)
    sd = x_train.std(0) + 1e-6
    xs = ((x_train - mu) / sd).astype(np.float64)
    xt = ((x_test - mu) / sd).astype(np.float64)
    rng = np.random.default_rng(seed)
    W = Parameter(rng.normal(0.0, 0.01, size=(xs.shape[1], n_classes)), dtype=np.float64)
    b = Parameter(np.zeros(n_classes), dtype=np.float64)
    opt = AdamW([W, b], lr=lr, weight_decay=0.0)
    onehot = np.eye(n_classes)[y_train]
    for _ in range(steps):
        logp = T.log_softmax(T.matmul(T.as_tensor(xs), W) + b, axis=-1)
        loss = T.mean(T.tsum(logp * onehot, axis=-1)) * -1.0
        opt.zero_grad()
        loss.backward()
        opt.step()
    train_acc = float(np.mean(np.argmax(xs @ W.data + b.data, axis=1) == y_train))
    pred = np.argmax(xt @ W.data + b.data, axis=1)
    correct = int(np.sum(pred == y_test))
    p = binomtest(correct, len(y_test), chance, alternative="greater").pvalue
    return ProbeResult(correct, len(y_test), chance, float(p), train_acc)


def linear_probe(model: Model, ds: Dataset, cfg: RunConfig) -> ProbeResult:
    """Train on the first half of the episodes, report held-out accuracy on the second half."""
    before = parameter_hash(model)
    x, y, g = decision_states(model, ds, cfg)
    if parameter_hash(model) != before:
        raise RuntimeError("probe feature extraction modified the model")
    n_eps = int(g.max()) + 1
    train = g < n_eps // 2
    n_classes = 9 if ds.task == "sequential" else 3
    result = fit_linear_probe(x[train], y[train], x[~train], y[~train], n_classes, CHANCE[ds.task][1],
                              cfg.probe_steps, cfg.probe_lr, cfg.seed)
    if parameter_hash(model) != before:
        raise RuntimeError("probe training modified the model")
    return result


def separation_score(states: np.ndarray, labels: np.ndarray) -> float | None:
    """Mean silhouette of the states grouped by label; None when any label has fewer than 2 samples."""
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2 or counts.min() < 2:
        return None
    return float(silhouette_score(np.asarray(states, dtype=float), labels, metric="euclidean"))
