"""Probes for learned compositional structure.

The central diagnostic fits, per ground-truth attribute, a 1-d least-squares
line from every scalar feature neuron to the attribute's (0-1 normalized)
symbolic value over a dataset split; the minimum fit error over neurons is
the composition loss, and rounding the de-normalized prediction gives a
symbolic accuracy. Relation embeddings are exported per governed attribute
from the relation network's group outputs, and cluster separability is
summarized with the mean silhouette score.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .model import SCLModel
from .rpm.dataset import Dataset
from .rpm.types import Attribute, ProblemSpec, domain_max


@dataclass
class LinearFit:
    """Closed-form least-squares line y ~ a*x + c for one neuron."""

    neuron: int  # flat index into the feature vector
    slope: float
    intercept: float
    mse: float
    n: int

    @property
    def head(self) -> tuple[int, int]:
        """(p, q): 1-based head index and within-head position, 8 per head."""
        return self.neuron // 8 + 1, self.neuron % 8 + 1


@dataclass
class ProbeEntry:
    attribute: Attribute
    component: int
    fit: LinearFit
    accuracy: float
    skipped_neurons: list[int]

    def to_json_obj(self) -> dict:
        p, q = self.fit.head
        return {
            "attribute": self.attribute.label,
            "component": self.component,
            "neuron": self.fit.neuron,
            "neuron_p": p,
            "neuron_q": q,
            "slope": self.fit.slope,
            "intercept": self.fit.intercept,
            "mse": self.fit.mse,
            "accuracy": self.accuracy,
        }


def fit_best_neuron(features: np.ndarray, labels: np.ndarray
                    ) -> tuple[LinearFit, list[int]]:
    """Least-squares fit of every feature column to the labels; returns the
    column with minimum MSE plus the indices of zero-variance columns that
    were skipped. Raises on a zero-variance (degenerate) label."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"fit_best_neuron: bad shapes {x.shape}, {y.shape}")
    var_y = y.var()
    if var_y == 0.0:
        raise ValueError("degenerate label: zero variance")
    mean_x = x.mean(axis=0)
    var_x = x.var(axis=0)
    cov = ((x - mean_x) * (y - y.mean())[:, None]).mean(axis=0)
    skipped = np.flatnonzero(var_x == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(var_x > 0.0, cov / np.where(var_x > 0, var_x, 1.0), 0.0)
    intercept = y.mean() - slope * mean_x
    mse = var_y - np.where(var_x > 0.0, cov * cov / np.where(var_x > 0, var_x, 1.0), 0.0)
    mse[skipped] = np.inf
    best = int(np.argmin(mse))
    fit = LinearFit(neuron=best, slope=float(slope[best]),
                    intercept=float(intercept[best]), mse=float(mse[best]),
                    n=len(y))
    return fit, [int(i) for i in skipped]


def extract_panel_features(model: SCLModel, dataset: Dataset,
                           indices: Sequence[int], pre_fr: bool = False,
                           batch_size: int = 256) -> np.ndarray:
    """Features [N*16, W] for every panel (8 context then 8 candidates) of
    the selected problems. Probing reuses this across attributes."""
    indices = np.asarray(indices)
    feats = []
    for lo in range(0, len(indices), batch_size):
        idx = indices[lo:lo + batch_size]
        batch = dataset.batch_images(idx)  # [B,16,P,P]
        b, _, px, _ = batch.shape
        flat = batch.reshape(b * 16, 1, px, px)
        feats.append(model.panel_features(flat, pre_fr=pre_fr).data)
    return np.concatenate(feats, axis=0)


def panel_labels(dataset: Dataset, indices: Sequence[int], attribute: Attribute,
                 component: int) -> np.ndarray:
    """Integer attribute values aligned with extract_panel_features rows."""
    indices = np.asarray(indices)
    labels = np.empty(len(indices) * 16, dtype=np.int64)
    for row, i in enumerate(indices):
        spec = dataset.problems[i]
        values = [spec.panels[k][component][attribute] for k in range(8)]
        values += [cand[component][attribute] for cand in spec.candidates]
        labels[row * 16:(row + 1) * 16] = values
    return labels


def panel_features_and_labels(model: SCLModel, dataset: Dataset,
                              indices: Sequence[int], attribute: Attribute,
                              component: int, pre_fr: bool = False,
                              batch_size: int = 256
                              ) -> tuple[np.ndarray, np.ndarray]:
    return (extract_panel_features(model, dataset, indices, pre_fr, batch_size),
            panel_labels(dataset, indices, attribute, component))


@dataclass
class GroupFit:
    """Multivariate least-squares fit of one whole head's output to a label."""

    head: int  # 1-based head index
    weights: np.ndarray
    intercept: float
    mse: float
    n: int


def fit_best_group(features: np.ndarray, labels: np.ndarray,
                   group_size: int = 8) -> GroupFit:
    """Least-squares fit of each contiguous group of feature columns to the
    labels; returns the group with minimum MSE. The multivariate alternative
    to the per-neuron probe."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape[1] % group_size != 0:
        raise ValueError(f"group_size={group_size} does not divide width "
                         f"{x.shape[1]}")
    best: Optional[GroupFit] = None
    for g in range(x.shape[1] // group_size):
        cols = x[:, g * group_size:(g + 1) * group_size]
        design = np.concatenate([cols, np.ones((len(y), 1))], axis=1)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        mse = float(np.mean((design @ coef - y) ** 2))
        if best is None or mse < best.mse:
            best = GroupFit(head=g + 1, weights=coef[:-1], intercept=float(coef[-1]),
                            mse=mse, n=len(y))
    assert best is not None
    return best


def composition_loss(model: SCLModel, dataset: Dataset, indices: Sequence[int],
                     attribute: Attribute, component: int = 0,
                     pre_fr: bool = False, multivariate: bool = False
                     ) -> tuple[Union[LinearFit, "GroupFit"], float]:
    """Best fit from the feature vector to the normalized attribute value.

    The default probes single scalar neurons; multivariate=True instead fits
    each whole head's output by least squares. Labels are divided by the
    attribute's domain maximum so losses are comparable across attributes.
    Returns (best fit, its MSE).
    """
    features, labels = panel_features_and_labels(model, dataset, indices,
                                                 attribute, component, pre_fr)
    target = labels / domain_max(attribute)
    if multivariate:
        gfit = fit_best_group(features, target,
                              model.cfg.attr_out_per_group)
        return gfit, gfit.mse
    fit, _ = fit_best_neuron(features, target)
    return fit, fit.mse


def symbolic_accuracy(fit: LinearFit, features: np.ndarray, labels: np.ndarray,
                      attribute: Attribute) -> float:
    """Exact-match rate of round(denormalized linear prediction), clamped to
    the attribute domain. labels are the raw integer values."""
    m = domain_max(attribute)
    pred = np.round((fit.slope * features[:, fit.neuron] + fit.intercept) * m)
    pred = np.clip(pred, 0, m)
    return float((pred == labels).mean())


def probe_report(model: SCLModel, dataset: Dataset, indices: Sequence[int],
                 pre_fr: bool = False) -> list[ProbeEntry]:
    """Probe every (component, attribute) pair of the dataset's layout(s)."""
    n_components = max(p.layout.n_components for p in dataset.problems)
    features = extract_panel_features(model, dataset, indices, pre_fr)
    entries = []
    for component in range(n_components):
        for attribute in Attribute:
            labels = panel_labels(dataset, indices, attribute, component)
            try:
                fit, skipped = fit_best_neuron(features, labels / domain_max(attribute))
            except ValueError:
                warnings.warn(f"skipping degenerate label {attribute.label} "
                              f"component {component}")
                continue
            acc = symbolic_accuracy(fit, features, labels, attribute)
            entries.append(ProbeEntry(attribute, component, fit, acc, skipped))
    return entries


def mean_composition_loss(model: SCLModel, dataset: Dataset,
                          indices: Sequence[int]) -> float:
    """Average composition loss over every governed (attribute, component)
    pair present in the dataset's rule sets. Features are extracted once
    and shared across the fits."""
    slots = set()
    for p in dataset.problems:
        slots.update(p.governed_slots())
    features = extract_panel_features(model, dataset, indices)
    losses = []
    for comp, attr in sorted(slots):
        labels = panel_labels(dataset, indices, attr, comp)
        fit, _ = fit_best_neuron(features, labels / domain_max(attr))
        losses.append(fit.mse)
    return float(np.mean(losses))


def track_coevolution(checkpoints: Sequence[tuple[int, SCLModel]],
                      dataset: Dataset, indices: Sequence[int]
                      ) -> tuple[list[dict], Optional[float]]:
    """Per-epoch (test accuracy, mean composition loss) series and the Pearson
    correlation between accuracy and negated loss. The correlation is None
    when either series is constant."""
    from .training import evaluate
    rows = []
    for epoch, model in checkpoints:
        acc = evaluate(model, dataset, indices)
        loss = mean_composition_loss(model, dataset, indices)
        rows.append({"epoch": epoch, "test_acc": acc, "mean_comp_loss": loss})
    accs = np.asarray([r["test_acc"] for r in rows])
    losses = np.asarray([r["mean_comp_loss"] for r in rows])
    if len(rows) < 2 or accs.std() == 0.0 or losses.std() == 0.0:
        return rows, None
    corr = float(np.corrcoef(accs, -losses)[0, 1])
    return rows, corr


def relation_embedding_rows(model: SCLModel, dataset: Dataset,
                            indices: Sequence[int], entries: Sequence[ProbeEntry],
                            batch_size: int = 256) -> list[list]:
    """One row per (problem, governed attribute): the relation network's
    5-d group output at the probed neuron's position for the answer-completed
    matrix, labeled with the true relation kind and attribute name."""
    from .autodiff import Tensor, ops

    by_slot = {(e.component, e.attribute): e for e in entries}
    indices = np.asarray(indices)
    rows: list[list] = []
    warned = set()
    for lo in range(0, len(indices), batch_size):
        idx = indices[lo:lo + batch_size]
        batch = dataset.batch_images(idx)
        b, _, px, _ = batch.shape
        flat = batch.reshape(b * 16, 1, px, px)
        feats = model.panel_features(Tensor(flat)).data.reshape(b, 16, -1)
        answers = dataset.answers()[idx]
        mats = np.concatenate(
            [feats[:, :8], feats[np.arange(b), 8 + answers][:, None]], axis=1)
        groups = model.relation_groups(Tensor(mats)).data  # [B, W, rel_out]
        for row, i in enumerate(idx):
            spec = dataset.problems[i]
            for rule in spec.rules:
                entry = by_slot.get((rule.component, rule.attribute))
                if entry is None:
                    key = (rule.component, rule.attribute)
                    if key not in warned:
                        warned.add(key)
                        warnings.warn(f"no probe fit for {rule.attribute.label} "
                                      f"component {rule.component}; skipping")
                    continue
                vec = groups[row, entry.fit.neuron]
                rows.append([*map(float, vec), rule.relation.kind,
                             rule.attribute.label])
    return rows


def write_embedding_csv(path, rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d0", "d1", "d2", "d3", "d4", "relation", "attribute"])
        writer.writerows(rows)


def silhouette(vectors: np.ndarray, labels: Sequence) -> float:
    """Mean silhouette with Euclidean distance. Points in singleton clusters
    score 0 (convention); requires at least two distinct labels."""
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two labels")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    scores = np.zeros(len(x))
    for i in range(len(x)):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same < 2:
            continue  # singleton: score stays 0
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == other].mean()
                for other in uniq if other != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())
