"""25-fold paired cross-validation with ensemble voting.

Each class is split into five folds; the 5 x 5 cross-combinations give 25
train/validation partitions. Every combination fits an embedder on its
training union, extends validation and test samples out-of-sample, and
casts one binary vote per test subject. A subject is called abnormal when
its vote proportion exceeds the threshold (strictly), which with 25 votes
and threshold 0.5 is plain majority voting.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .alt_embedders import EmbedderSpec, extend_matrix, fit_from_matrix
from .classifiers import (
    Metrics,
    compute_metrics,
    lda_fit,
    lda_predict,
    logistic_fit,
    logistic_predict,
)
from .errors import (
    IncompleteVotesError,
    PipelineError,
    SubjectSetMismatchError,
    TooFewSamplesError,
)
from .kernel_graph import pairwise_sq_distances
from .tensor_data import Dataset, flatten_dataset, standardize_dataset

N_FOLDS = 5
N_COMBOS = N_FOLDS * N_FOLDS

CLASSIFIERS = ("lda", "logistic")


@dataclass(frozen=True)
class FoldPlan:
    """Per-class five-fold split, the 25 cross-combinations, and the test set.

    All index arrays hold positions into the originating dataset.
    """

    normal_folds: tuple
    abnormal_folds: tuple
    combos: tuple
    test_set: np.ndarray
    seed: int


@dataclass(frozen=True)
class FoldResult:
    combo_index: int
    fold_i: int
    fold_j: int
    validation_metrics: Metrics
    train_accuracy: float
    test_votes: np.ndarray  # aligned with the plan's test_set order


@dataclass(frozen=True)
class VoteRecord:
    """One test subject's 25 votes and the aggregated call."""

    subject_id: str
    votes: tuple
    proportion: float
    final: int
    true_label: Optional[int] = None
    age: Optional[float] = None


@dataclass(frozen=True)
class TwoModelConfusion:
    """Per-true-label cross-tabulation of two models' final calls.

    ``cells[label]['a1_b0']`` lists subjects with that true label called
    abnormal by model A and normal by model B.
    """

    cells: dict

    def counts(self) -> dict:
        return {
            label: {key: len(ids) for key, ids in table.items()}
            for label, table in self.cells.items()
        }


@dataclass(frozen=True)
class PreparedData:
    """Standardized dataset plus the full squared-distance matrix."""

    x: np.ndarray
    sq_dists: np.ndarray
    labels: np.ndarray
    ids: tuple
    ages: tuple
    sample_shape: tuple


def prepare(dataset: Dataset) -> PreparedData:
    """Standardize every sample once and precompute pairwise distances.

    cdist entries depend only on their two rows, so slicing this matrix
    per fold is exactly equivalent to recomputing distances per subset.
    """
    labels = dataset.labels()
    std = standardize_dataset(dataset)
    x = flatten_dataset(std)
    return PreparedData(
        x=x,
        sq_dists=pairwise_sq_distances(std),
        labels=labels,
        ids=tuple(s.id for s in dataset),
        ages=tuple(s.age for s in dataset),
        sample_shape=tuple(dataset.shape),
    )


def _stratified_counts(total: int, class_sizes: Sequence[int]) -> list:
    """Apportion ``total`` across classes by largest remainder."""
    n = sum(class_sizes)
    raw = [total * c / n for c in class_sizes]
    counts = [int(np.floor(r)) for r in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], i), reverse=True)
    short = total - sum(counts)
    for i in range(short):
        counts[remainders[i]] += 1
    return counts


def build_fold_plan(dataset: Dataset, test, seed: int) -> FoldPlan:
    """Split off a test set and partition each class pool into five folds.

    ``test`` may be a fraction in [0, 1), an absolute count, or an
    iterable of subject ids. Selection and fold assignment are driven by
    one seeded generator, class 0 first, so plans are reproducible.
    """
    labels = dataset.labels()
    ids = dataset.ids()
    rng = np.random.default_rng(seed)

    class_positions = [np.flatnonzero(labels == c) for c in (0, 1)]
    if isinstance(test, (int, np.integer)) and not isinstance(test, bool):
        counts = _stratified_counts(int(test), [len(p) for p in class_positions])
        test_parts, pools = [], []
        for pos, cnt in zip(class_positions, counts):
            perm = rng.permutation(pos)
            test_parts.append(np.sort(perm[:cnt]))
            pools.append(perm[cnt:])
    elif isinstance(test, float):
        if not 0.0 <= test < 1.0:
            raise ValueError(f"test fraction must be in [0, 1), got {test}")
        counts = _stratified_counts(int(round(test * len(dataset))), [len(p) for p in class_positions])
        test_parts, pools = [], []
        for pos, cnt in zip(class_positions, counts):
            perm = rng.permutation(pos)
            test_parts.append(np.sort(perm[:cnt]))
            pools.append(perm[cnt:])
    else:
        wanted = set(test)
        unknown = wanted - set(ids)
        if unknown:
            raise ValueError(f"test ids not in dataset: {sorted(unknown)[:5]}")
        mask = np.array([sid in wanted for sid in ids])
        test_parts = [np.flatnonzero(mask & (labels == c)) for c in (0, 1)]
        pools = [rng.permutation(np.flatnonzero(~mask & (labels == c))) for c in (0, 1)]

    folds_by_class = []
    for cls, pool in enumerate(pools):
        if len(pool) < N_FOLDS:
            raise TooFewSamplesError(
                f"class {cls} has {len(pool)} training samples; need >= {N_FOLDS}"
            )
        folds_by_class.append(tuple(np.sort(part) for part in np.array_split(pool, N_FOLDS)))

    combos = tuple((i, j) for i in range(N_FOLDS) for j in range(N_FOLDS))
    test_set = np.concatenate(test_parts) if any(len(t) for t in test_parts) else np.array([], dtype=np.int64)
    return FoldPlan(
        normal_folds=folds_by_class[0],
        abnormal_folds=folds_by_class[1],
        combos=combos,
        test_set=np.sort(test_set).astype(np.int64),
        seed=seed,
    )


def _fit_classifier(choice: str, coords: np.ndarray, labels: np.ndarray):
    if choice == "lda":
        model = lda_fit(coords, labels)
        return model, lambda c: lda_predict(model, c)
    if choice == "logistic":
        model = logistic_fit(coords, labels)
        return model, lambda c: logistic_predict(model, c)
    raise ValueError(f"unknown classifier {choice!r}; expected one of {CLASSIFIERS}")


def run_fold(
    prepared: PreparedData,
    plan: FoldPlan,
    combo_index: int,
    spec: EmbedderSpec,
    classifier: str,
) -> FoldResult:
    """Fit on the training union of one combination, vote on the test set."""
    if not 0 <= combo_index < N_COMBOS:
        raise ValueError(f"combo_index must be in [0, {N_COMBOS}), got {combo_index}")
    i, j = plan.combos[combo_index]
    val_idx = np.concatenate([plan.normal_folds[i], plan.abnormal_folds[j]])
    train_parts = [f for fi, f in enumerate(plan.normal_folds) if fi != i]
    train_parts += [f for fj, f in enumerate(plan.abnormal_folds) if fj != j]
    train_idx = np.concatenate(train_parts)

    try:
        space = fit_from_matrix(
            spec,
            prepared.x[train_idx],
            prepared.sample_shape,
            prepared.sq_dists[np.ix_(train_idx, train_idx)],
        )
        train_coords = space.coords
        model, predict = _fit_classifier(classifier, train_coords, prepared.labels[train_idx])

        val_coords = extend_matrix(
            space,
            prepared.x[val_idx],
            prepared.sq_dists[np.ix_(val_idx, train_idx)],
            [prepared.ids[p] for p in val_idx],
        )
        val_pred, _ = predict(val_coords)
        val_metrics = compute_metrics(val_pred, prepared.labels[val_idx])
        train_pred, _ = predict(train_coords)
        train_acc = float(np.mean(train_pred == prepared.labels[train_idx]))

        if len(plan.test_set):
            test_coords = extend_matrix(
                space,
                prepared.x[plan.test_set],
                prepared.sq_dists[np.ix_(plan.test_set, train_idx)],
                [prepared.ids[p] for p in plan.test_set],
            )
            votes, _ = predict(test_coords)
        else:
            votes = np.zeros(0, dtype=np.int64)
    except PipelineError as exc:
        raise type(exc)(f"combo {combo_index} (folds {i},{j}): {exc}") from exc

    return FoldResult(
        combo_index=combo_index,
        fold_i=i,
        fold_j=j,
        validation_metrics=val_metrics,
        train_accuracy=train_acc,
        test_votes=np.asarray(votes, dtype=np.int64),
    )


def run_ensemble(
    prepared: PreparedData,
    plan: FoldPlan,
    spec: EmbedderSpec,
    classifier: str,
    threads: int = 1,
) -> list:
    """All 25 fold results, in combo order regardless of worker count."""
    if threads <= 1:
        return [run_fold(prepared, plan, c, spec, classifier) for c in range(N_COMBOS)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(run_fold, prepared, plan, c, spec, classifier) for c in range(N_COMBOS)
        ]
        return [f.result() for f in futures]


def aggregate_votes(
    fold_results: Sequence[FoldResult],
    prepared: PreparedData,
    plan: FoldPlan,
    threshold: float = 0.5,
) -> list:
    """Collapse the per-fold votes into one VoteRecord per test subject."""
    if len(fold_results) != N_COMBOS:
        raise IncompleteVotesError(f"have {len(fold_results)} fold results, need {N_COMBOS}")
    ordered = sorted(fold_results, key=lambda r: r.combo_index)
    if [r.combo_index for r in ordered] != list(range(N_COMBOS)):
        raise IncompleteVotesError("fold results do not cover combos 0..24 exactly once")
    n_test = len(plan.test_set)
    for r in ordered:
        if len(r.test_votes) != n_test:
            raise IncompleteVotesError(
                f"combo {r.combo_index} voted on {len(r.test_votes)} subjects, expected {n_test}"
            )
    records = []
    for row, pos in enumerate(plan.test_set):
        votes = tuple(int(r.test_votes[row]) for r in ordered)
        proportion = sum(votes) / N_COMBOS
        records.append(
            VoteRecord(
                subject_id=prepared.ids[pos],
                votes=votes,
                proportion=proportion,
                final=int(proportion > threshold),
                true_label=int(prepared.labels[pos]),
                age=prepared.ages[pos],
            )
        )
    return records


def two_model_confusion(records_a: Sequence[VoteRecord], records_b: Sequence[VoteRecord]) -> TwoModelConfusion:
    """Cross-tabulate two models' calls per true label, with id lists."""
    by_a = {r.subject_id: r for r in records_a}
    by_b = {r.subject_id: r for r in records_b}
    if set(by_a) != set(by_b):
        only_a = sorted(set(by_a) - set(by_b))[:5]
        only_b = sorted(set(by_b) - set(by_a))[:5]
        raise SubjectSetMismatchError(
            f"subject sets differ (only in A: {only_a}, only in B: {only_b})"
        )
    for r in list(by_a.values()) + list(by_b.values()):
        if r.true_label is None:
            raise SubjectSetMismatchError(f"subject {r.subject_id} has no true label")
    cells = {
        label: {key: [] for key in ("a0_b0", "a0_b1", "a1_b0", "a1_b1")} for label in (0, 1)
    }
    for sid in sorted(by_a):
        ra, rb = by_a[sid], by_b[sid]
        cells[ra.true_label][f"a{ra.final}_b{rb.final}"].append(sid)
    return TwoModelConfusion(cells=cells)


def diagnosis_table(records: Sequence[VoteRecord]) -> list:
    """False negatives (true abnormal voted normal) as (id, age, proportion),
    highest vote proportion first."""
    rows = [
        (r.subject_id, r.age, r.proportion)
        for r in records
        if r.true_label == 1 and r.final == 0
    ]
    rows.sort(key=lambda row: (-row[2], row[0]))
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_metrics_csv(path, rows) -> None:
    """``rows``: (method, classifier, dimension, fold_i, fold_j, Metrics)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "classifier", "dimension", "fold_i", "fold_j", "acc", "sens", "spec", "prec"]
        )
        for method, classifier, dim, fi, fj, m in rows:
            writer.writerow(
                [
                    method,
                    classifier,
                    dim,
                    fi,
                    fj,
                    _fmt(m.accuracy),
                    _fmt(m.sensitivity),
                    _fmt(m.specificity),
                    _fmt(m.precision),
                ]
            )


def write_votes_csv(path, records: Sequence[VoteRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "true_label", "age", "p", "final"] + [f"v{i}" for i in range(1, N_COMBOS + 1)]
        )
        for r in records:
            writer.writerow(
                [
                    r.subject_id,
                    "" if r.true_label is None else r.true_label,
                    _fmt(r.age),
                    _fmt(r.proportion),
                    r.final,
                ]
                + list(r.votes)
            )


def read_votes_csv(path) -> list:
    """Reload vote records written by ``write_votes_csv``."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            votes = tuple(int(row[f"v{i}"]) for i in range(1, N_COMBOS + 1))
            records.append(
                VoteRecord(
                    subject_id=row["id"],
                    votes=votes,
                    proportion=float(row["p"]),
                    final=int(row["final"]),
                    true_label=int(row["true_label"]) if row["true_label"] != "" else None,
                    age=float(row["age"]) if row["age"] != "" else None,
                )
            )
    return records


def write_two_model_json(path, confusion: TwoModelConfusion, name_a: str, name_b: str) -> None:
    payload = {
        "model_a": name_a,
        "model_b": name_b,
        "by_true_label": {
            str(label): {
                key: {"count": len(ids), "ids": ids} for key, ids in table.items()
            }
            for label, table in confusion.cells.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_diagnosis_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "age", "proportion"])
        for sid, age, proportion in rows:
            writer.writerow([sid, _fmt(age), _fmt(proportion)])


def validation_accuracy_stats(fold_results: Sequence[FoldResult]) -> tuple:
    """Mean and population standard deviation of the 25 validation accuracies."""
    accs = np.array([r.validation_metrics.accuracy for r in fold_results], dtype=np.float64)
    return float(accs.mean()), float(accs.std())
