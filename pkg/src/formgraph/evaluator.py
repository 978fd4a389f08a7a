"""Strict exact-constituent scoring and an IoU matcher for comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .docmodel import BBox, ElementKind, FormPage, GroupKind, union_bbox
from .grouper import StructureGroup

KINDS = tuple(GroupKind)
IOU_THRESHOLD = 0.40


@dataclass
class KindCounts:
    matched: int = 0
    predicted: int = 0
    tagged: int = 0

    @property
    def recall(self) -> float:
        return self.matched / self.tagged if self.tagged else 1.0

    @property
    def precision(self) -> float:
        return self.matched / self.predicted if self.predicted else 0.0


@dataclass
class EvalReport:
    counts: dict[GroupKind, KindCounts] = field(default_factory=lambda: {k: KindCounts() for k in KINDS})

    def __getitem__(self, kind) -> KindCounts:
        return self.counts[GroupKind(kind)]

    def __add__(self, other: EvalReport) -> EvalReport:
        out = EvalReport()
        for k in KINDS:
            a, b = self.counts[k], other.counts[k]
            out.counts[k] = KindCounts(a.matched + b.matched, a.predicted + b.predicted, a.tagged + b.tagged)
        return out

    def recall(self, kind) -> float:
        return self[kind].recall

    def precision(self, kind) -> float:
        return self[kind].precision

    def to_dict(self, kinds: Iterable[GroupKind] = KINDS) -> dict:
        return {
            k.value: {
                "recall": self.counts[k].recall,
                "precision": self.counts[k].precision,
                "matched": self.counts[k].matched,
                "predicted": self.counts[k].predicted,
                "tagged": self.counts[k].tagged,
            }
            for k in kinds
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def table(self) -> str:
        rows = [("construct", "recall", "precision", "matched", "predicted", "tagged")]
        for k in KINDS:
            c = self.counts[k]
            rows.append((k.value, f"{100 * c.recall:.2f}", f"{100 * c.precision:.2f}", str(c.matched), str(c.predicted), str(c.tagged)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = []
        for r in rows:
            lines.append("  ".join(r[0].ljust(widths[0]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(r)))
        return "\n".join(lines)


def strict_match(predicted: Sequence[StructureGroup], tagged: Sequence[StructureGroup]) -> EvalReport:
    """One-to-one matching on identical constituent textruns and widgets."""
    report = EvalReport()
    for k in KINDS:
        preds = [p for p in predicted if p.kind == k]
        gold = [g for g in tagged if g.kind == k]
        pool: dict[tuple, int] = {}
        for g in gold:
            key = (g.constituent_textrun_ids, g.constituent_widget_ids)
            pool[key] = pool.get(key, 0) + 1
        matched = 0
        for p in preds:
            key = (p.constituent_textrun_ids, p.constituent_widget_ids)
            if pool.get(key, 0) > 0:
                pool[key] -= 1
                matched += 1
        report.counts[k] = KindCounts(matched, len(preds), len(gold))
    return report


def iou(b1: BBox, b2: BBox) -> float:
    inter = b1.intersection_area(b2)
    union = b1.area + b2.area - inter
    return inter / union if union > 0 else 0.0


def iou_match(predicted: Sequence[StructureGroup], tagged: Sequence[StructureGroup], threshold: float = IOU_THRESHOLD) -> EvalReport:
    """Greedy one-to-one matching in descending IoU order."""
    report = EvalReport()
    for k in KINDS:
        preds = sorted((p for p in predicted if p.kind == k), key=_group_key)
        gold = sorted((g for g in tagged if g.kind == k), key=_group_key)
        pairs = []
        for i, p in enumerate(preds):
            for j, g in enumerate(gold):
                v = iou(p.bbox, g.bbox)
                if v >= threshold:
                    pairs.append((-v, i, j))
        pairs.sort()
        used_p, used_g = set(), set()
        for _, i, j in pairs:
            if i not in used_p and j not in used_g:
                used_p.add(i)
                used_g.add(j)
        report.counts[k] = KindCounts(len(used_p), len(preds), len(gold))
    return report


def _group_key(g: StructureGroup):
    return (g.constituent_textrun_ids, g.constituent_widget_ids, g.member_ids)


def groups_from_page(page: FormPage, predicted: bool | None = None) -> list[StructureGroup]:
    """Annotations of a textrun/widget page as decomposed groups.

    ``predicted`` filters on the annotation flag when given.
    """
    groups = []
    for a in page.annotations:
        if predicted is not None and a.predicted != predicted:
            continue
        runs, widgets = [], []
        for m in a.member_ids:
            kind = page.element(m).kind
            if kind == ElementKind.WIDGET:
                widgets.append(m)
            elif kind == ElementKind.TEXTRUN:
                runs.append(m)
            else:
                raise ValueError(f"page {page.page_id!r}: group {a.group_id} has non-elementary member {m}")
        box = union_bbox(page.element(m).bbox for m in a.member_ids)
        groups.append(StructureGroup(a.kind, a.member_ids, tuple(sorted(runs)), tuple(sorted(widgets)), box))
    return groups


def evaluate_pages(predicted: Sequence[FormPage], gold: Sequence[FormPage], metric: str = "strict", threshold: float = IOU_THRESHOLD) -> EvalReport:
    """Summed report over pages paired by page id."""
    if metric not in ("strict", "iou"):
        raise ValueError(f"unknown metric {metric!r}")
    gold_by_id = {p.page_id: p for p in gold}
    pred_ids = [p.page_id for p in predicted]
    if sorted(pred_ids) != sorted(gold_by_id) or len(set(pred_ids)) != len(pred_ids):
        extra = sorted(set(pred_ids) ^ set(gold_by_id))
        raise ValueError(f"predicted and gold page ids differ: {extra[:5] or 'duplicate ids'}")
    total = EvalReport()
    for p in predicted:
        pg = groups_from_page(p)
        gg = groups_from_page(gold_by_id[p.page_id])
        total = total + (strict_match(pg, gg) if metric == "strict" else iou_match(pg, gg, threshold))
    return total
