import json
import random

import pytest

from formgraph.docmodel import BBox, GroupKind
from formgraph.evaluator import (
    IOU_THRESHOLD,
    EvalReport,
    KindCounts,
    evaluate_pages,
    groups_from_page,
    iou,
    iou_match,
    strict_match,
)
from formgraph.grouper import StructureGroup
from formgraph.synthgen import GenConfig, generate_pages

from _support import divergence_case, hand_page

TB, TF = GroupKind.TEXTBLOCK, GroupKind.TEXTFIELD


def sg(kind, runs, widgets=(), box=(0, 0, 10, 10)):
    return StructureGroup(kind, tuple(runs) + tuple(widgets), tuple(runs), tuple(widgets), BBox(*box))


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 0, 10, 10)) == pytest.approx(1 / 3)
    assert iou(a, BBox(20, 20, 5, 5)) == 0.0
    assert iou(BBox(0, 0, 0, 0), BBox(0, 0, 0, 0)) == 0.0


def test_strict_examples():
    r = strict_match([sg(TF, (1, 2), (3,))], [sg(TF, (1, 2), (3,))])
    assert r.recall(TF) == r.precision(TF) == 1
    r = strict_match([sg(TB, (1,))], [sg(TB, (1, 2))])
    assert r[TB].matched == 0
    r = strict_match([], [sg(TB, (1,))])
    assert r.recall(TB) == 0 and r.precision(TB) == 0


def test_kinds_must_agree():
    r = strict_match([sg(GroupKind.CHOICEFIELD, (1,), (2,))], [sg(TF, (1,), (2,))])
    assert r[TF].matched == r[GroupKind.CHOICEFIELD].matched == 0
    r = iou_match([sg(GroupKind.CHOICEFIELD, (1,), (2,))], [sg(TF, (1,), (2,))])
    assert r[TF].matched == 0


def test_strict_is_one_to_one():
    r = strict_match([sg(TB, (1,)), sg(TB, (1,))], [sg(TB, (1,))])
    assert (r[TB].matched, r[TB].predicted, r[TB].tagged) == (1, 2, 1)


def test_degenerate_counts():
    c = KindCounts()
    assert c.recall == 1.0 and c.precision == 0.0


def test_iou_match_one_to_one_cover():
    wide = sg(TB, (1, 2), box=(0, 0, 20, 10))
    r = iou_match([wide], [sg(TB, (1,), box=(0, 0, 10, 10)), sg(TB, (2,), box=(10, 0, 10, 10))], threshold=0.4)
    assert r[TB].matched == 1


def test_divergence_case():
    _, pred, gold = divergence_case()
    assert iou(pred[0].bbox, gold[0].bbox) == pytest.approx(0.5)
    assert iou_match(pred, gold, IOU_THRESHOLD)[TB].matched == 1
    assert strict_match(pred, gold)[TB].matched == 0


def test_self_match_and_permutation_invariance():
    pages = generate_pages(GenConfig(pages=3, seed=5))
    groups = [g for p in pages[:1] for g in groups_from_page(p)]
    shuffled = groups[:]
    random.Random(0).shuffle(shuffled)
    for match in (strict_match, iou_match):
        a = match(groups, groups)
        assert all(a.recall(k) == a.precision(k) == 1 for k in GroupKind)
        assert match(shuffled, groups).to_dict() == a.to_dict()


def test_strict_pairs_are_iou_pairs():
    page = hand_page()
    groups = groups_from_page(page)
    half = groups[::2]
    assert iou_match(half, groups, threshold=1.0).to_dict() == strict_match(half, groups).to_dict()


def test_evaluate_pages_and_report_formats():
    pages = generate_pages(GenConfig(pages=2, seed=1))
    report = evaluate_pages(pages, pages)
    d = json.loads(report.to_json())
    assert set(d) == {"textblock", "textfield", "choicefield", "choicegroup"}
    assert all(v["recall"] == v["precision"] == 1 for v in d.values())
    assert "100.00" in report.table() and report.table().splitlines()[0].startswith("construct")
    assert isinstance(report + EvalReport(), EvalReport)


def test_evaluate_pages_errors():
    pages = generate_pages(GenConfig(pages=2, seed=1))
    with pytest.raises(ValueError, match="page ids differ"):
        evaluate_pages(pages[:1], pages)
    with pytest.raises(ValueError, match="unknown metric"):
        evaluate_pages(pages, pages, metric="f1")
