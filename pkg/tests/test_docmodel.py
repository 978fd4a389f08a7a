import json

import pytest

from formgraph.docmodel import (
    BBox,
    Element,
    ElementKind,
    FormatError,
    FormPage,
    GroupAnnotation,
    GroupKind,
    PageValidationError,
    load_pages,
    midpoint,
    page_to_dict,
    save_pages,
    union_bbox,
    validate_page,
)

from _support import hand_page, tiny_page


@pytest.mark.parametrize(
    "box, mid",
    [((0, 0, 0, 0), (0, 0)), ((10, 20, 4, 6), (12, 23)), ((50, 100, 200, 50), (150, 125))],
)
def test_midpoint(box, mid):
    assert midpoint(BBox(*box)) == mid


def test_bbox_rejects_negative_extent():
    with pytest.raises(ValueError):
        BBox(0, 0, -1, 2)


def test_union_bbox():
    assert union_bbox([BBox(0, 0, 2, 2), BBox(5, 1, 1, 4)]) == BBox(0, 0, 6, 5)
    with pytest.raises(ValueError):
        union_bbox([])


def test_empty_file_gives_no_pages(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_pages(p) == []


def test_round_trip_and_byte_identity(tmp_path):
    pages = [hand_page(), tiny_page(), FormPage("bare", 10, 10, (Element(0, "widget", BBox(1, 1, 2, 2)),))]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_pages(pages, a)
    save_pages(pages, b)
    assert a.read_bytes() == b.read_bytes()
    loaded = load_pages(a)
    assert loaded == pages
    assert loaded[2].annotations == ()
    assert all(e.words == () for p in loaded for e in p.of_kind(ElementKind.WIDGET))


def test_schema_keys_are_exact():
    d = page_to_dict(hand_page())
    assert set(d) == {"page_id", "width", "height", "elements", "annotations"}
    assert set(d["elements"][0]) == {"id", "kind", "bbox", "words"}
    assert set(d["annotations"][0]) == {"kind", "member_ids", "title_id", "caption_id", "child_group_ids", "group_id"}


def test_predicted_flag_survives_round_trip(tmp_path):
    page = hand_page()
    anns = tuple(GroupAnnotation(a.kind, a.member_ids, a.group_id, a.title_id, a.caption_id, a.child_group_ids, True) for a in page.annotations)
    save_pages([page.replace(annotations=anns)], tmp_path / "p.jsonl")
    line = json.loads((tmp_path / "p.jsonl").read_text())
    assert all(a["predicted"] is True for a in line["annotations"])
    assert all(a.predicted for a in load_pages(tmp_path / "p.jsonl")[0].annotations)


def test_missing_member_is_named(tmp_path):
    d = page_to_dict(hand_page())
    d["annotations"][0]["member_ids"] = [0, 77]
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(PageValidationError, match="77") as info:
        load_pages(p)
    assert info.value.page_id == "hand-0"
    assert info.value.field == "annotations.member_ids"


def test_parse_error_reports_line_number(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(page_to_dict(hand_page())) + "\n{not json\n")
    with pytest.raises(FormatError, match=":2:"):
        load_pages(p)


def test_unknown_key_is_rejected(tmp_path):
    d = page_to_dict(hand_page())
    d["elements"][0]["colour"] = "red"
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(FormatError, match="element keys"):
        load_pages(p)


@pytest.mark.parametrize(
    "mutate, field_name",
    [
        (lambda els, anns: (els + [Element(0, "widget", BBox(0, 0, 1, 1))], anns), "elements.id"),
        (lambda els, anns: ([Element(0, "textrun", BBox(190, 0, 40, 5))] + els[1:], anns), "elements.bbox"),
        (lambda els, anns: (els[:3] + [Element(3, "widget", BBox(70, 70, 5, 5), ("x",))] + els[4:], anns), "elements.words"),
        (lambda els, anns: (els, anns[:5] + [GroupAnnotation("textfield", (2, 3), 5, caption_id=4)] + anns[6:]), "annotations.caption_id"),
        (lambda els, anns: (els, anns[:-1] + [GroupAnnotation("choicegroup", (4, 5, 6), 8, title_id=4, child_group_ids=(6, 7))]), "annotations.member_ids"),
        (lambda els, anns: (els, anns[:-1] + [GroupAnnotation("choicegroup", (4, 5, 6, 7, 8), 8, title_id=4, child_group_ids=(5, 7))]), "annotations.child_group_ids"),
    ],
)
def test_validation_names_the_field(mutate, field_name):
    page = hand_page()
    els, anns = mutate(list(page.elements), list(page.annotations))
    with pytest.raises(PageValidationError) as info:
        validate_page(page.replace(elements=els, annotations=anns))
    assert info.value.field == field_name


def test_group_member_ids_are_sorted():
    a = GroupAnnotation(GroupKind.TEXTBLOCK, (3, 1, 2), 0)
    assert a.member_ids == (1, 2, 3)
