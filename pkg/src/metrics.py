"""
Confusion matrices and one-vs-rest classification metrics.

Any ratio whose denominator is zero is reported as 0 and flagged as degenerate.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .exceptions import InputError
from .models import BinaryCounts, ClassMetrics, ConfusionMatrix, MetricsReport, PositiveSummary

logger = logging.getLogger(__name__)

ClassRef = Union[int, str]


def confusion(true_labels: Sequence[int], predicted_labels: Sequence[int], num_classes: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Tally counts[true][predicted]."""
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    pred = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if true.shape != pred.shape:
        raise InputError(f"got {true.size} true labels and {pred.size} predictions")
    if num_classes < 1:
        raise InputError("num_classes must be positive")
    for name, labels in (("true", true), ("predicted", pred)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise InputError(f"{name} labels must lie in [0, {num_classes})")
    names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
    if len(names) != num_classes:
        raise InputError(f"{len(names)} class names for {num_classes} classes")
    counts = np.bincount(true * num_classes + pred, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts=counts.reshape(num_classes, num_classes).tolist(), class_names=names)


def _class_index(cm: ConfusionMatrix, positive: ClassRef) -> int:
    if isinstance(positive, str):
        if positive not in cm.class_names:
            raise InputError(f"unknown class {positive!r}")
        return cm.class_names.index(positive)
    if not 0 <= positive < cm.num_classes:
        raise InputError(f"positive class {positive} outside [0, {cm.num_classes})")
    return positive


def binary_counts(cm: ConfusionMatrix, positive: ClassRef) -> BinaryCounts:
    p = _class_index(cm, positive)
    counts = cm.as_array()
    tp = int(counts[p, p])
    fn = int(counts[p].sum()) - tp
    fp = int(counts[:, p].sum()) - tp
    tn = int(counts.sum()) - tp - fn - fp
    return BinaryCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def accuracy(cnt: BinaryCounts) -> float:
    """(tp + tn) / total; 0 for an empty matrix."""
    return _ratio(cnt.tp + cnt.tn, cnt.total)


def recall(cnt: BinaryCounts) -> float:
    """tp / (tp + fn); 0 when the class never occurs."""
    return _ratio(cnt.tp, cnt.tp + cnt.fn)


def precision(cnt: BinaryCounts) -> float:
    """tp / (tp + fp); 0 when the class is never predicted."""
    return _ratio(cnt.tp, cnt.tp + cnt.fp)


def f1_from_pr(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    return _ratio(2.0 * p * r, p + r)


def f1(cnt: BinaryCounts) -> float:
    return f1_from_pr(precision(cnt), recall(cnt))


def degenerate_metrics(cnt: BinaryCounts) -> List[str]:
    """Names of the metrics whose denominator is zero for these counts."""
    flags = []
    if cnt.total == 0:
        flags.append("accuracy")
    if cnt.tp + cnt.fp == 0:
        flags.append("precision")
    if cnt.tp + cnt.fn == 0:
        flags.append("recall")
    if precision(cnt) + recall(cnt) == 0:
        flags.append("f1")
    return flags


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """trace / total."""
    if cm.total == 0:
        raise InputError("overall accuracy is undefined for an empty confusion matrix")
    return float(np.trace(cm.as_array())) / cm.total


def class_metrics(cm: ConfusionMatrix, positive: ClassRef) -> ClassMetrics:
    p = _class_index(cm, positive)
    cnt = binary_counts(cm, p)
    return ClassMetrics(
        name=cm.class_names[p],
        precision=precision(cnt),
        recall=recall(cnt),
        f1=f1(cnt),
        support=cnt.tp + cnt.fn,
        degenerate=degenerate_metrics(cnt),
    )


def build_report(cm: ConfusionMatrix, positive: ClassRef = 0) -> MetricsReport:
    """Per-class, macro and overall metrics plus the positive-class summary row."""
    per_class = [class_metrics(cm, c) for c in range(cm.num_classes)]
    p = _class_index(cm, positive)
    cnt = binary_counts(cm, p)
    summary = PositiveSummary(
        class_name=cm.class_names[p],
        accuracy=accuracy(cnt),
        precision=precision(cnt),
        recall=recall(cnt),
        f1=f1(cnt),
    )
    degenerate = [m.name for m in per_class if m.degenerate]
    if degenerate:
        logger.warning("zero denominators for classes %s; their metrics are reported as 0", degenerate)
    return MetricsReport(
        class_names=list(cm.class_names),
        confusion=[list(row) for row in cm.counts],
        per_class=per_class,
        overall_accuracy=overall_accuracy(cm),
        positive_class=cm.class_names[p],
        positive_summary=summary,
        macro_precision=float(np.mean([m.precision for m in per_class])),
        macro_recall=float(np.mean([m.recall for m in per_class])),
        macro_f1=float(np.mean([m.f1 for m in per_class])),
    )


def merge_classes(cm: ConfusionMatrix, groups: Mapping[str, Sequence[str]]) -> ConfusionMatrix:
    """Collapse groups of classes into one, e.g. {"Pneumonia": ["Pneumonia Bacterial", "Pneumonia Viral"]}.

    Merged classes take the position of their first member; other classes keep their order.
    """
    target: Dict[str, str] = {}
    for new_name, members in groups.items():
        for member in members:
            if member not in cm.class_names:
                raise InputError(f"cannot merge unknown class {member!r}")
            if member in target:
                raise InputError(f"class {member!r} appears in more than one group")
            target[member] = new_name
    new_names: List[str] = []
    for name in cm.class_names:
        mapped = target.get(name, name)
        if mapped not in new_names:
            new_names.append(mapped)
    index = np.array([new_names.index(target.get(name, name)) for name in cm.class_names])
    size = len(new_names)
    merged = np.zeros((size, size), dtype=np.int64)
    np.add.at(merged, (index[:, None], index[None, :]), cm.as_array())
    return ConfusionMatrix(counts=merged.tolist(), class_names=new_names)
