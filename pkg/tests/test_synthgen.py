import itertools

import pytest

from formgraph.docmodel import BBox, ElementKind, FormPage, GroupAnnotation, GroupKind, dumps_page, validate_page
from formgraph.synthgen import (
    CHOICE_MARKERS,
    GenConfig,
    InfeasibleLayout,
    derive_step2_page,
    generate_pages,
    neighbourhood_violations,
    textblock_sources,
)

from _support import hand_page, tr, wg

CFG = GenConfig(pages=6, seed=11)


@pytest.fixture(scope="module")
def pages():
    return generate_pages(CFG)


def test_same_config_gives_identical_bytes(pages):
    again = generate_pages(CFG)
    assert [dumps_page(p) for p in again] == [dumps_page(p) for p in pages]


def test_different_seed_differs(pages):
    other = generate_pages(GenConfig(pages=6, seed=12))
    assert [dumps_page(p) for p in other] != [dumps_page(p) for p in pages]


def test_zero_pages():
    assert generate_pages(GenConfig(pages=0)) == []


def test_pages_validate_and_do_not_overlap(pages):
    for page in pages:
        validate_page(page)
        for a, b in itertools.combinations(page.elements, 2):
            assert a.bbox.intersection_area(b.bbox) == 0, (page.page_id, a.id, b.id)


def test_construct_counts_fall_in_ranges(pages):
    for page in pages:
        fields = page.groups(GroupKind.TEXTFIELD)
        groups = page.groups(GroupKind.CHOICEGROUP)
        assert CFG.fields_per_page[0] <= len(fields) <= CFG.fields_per_page[1]
        assert CFG.choicegroups_per_page[0] <= len(groups) <= CFG.choicegroups_per_page[1]
        for g in groups:
            assert CFG.choices_per_group[0] <= len(g.child_group_ids) <= CFG.choices_per_group[1]
        for f in fields:
            widgets = [m for m in f.member_ids if page.element(m).kind == ElementKind.WIDGET]
            assert CFG.widgets_per_field[0] <= len(widgets) <= CFG.widgets_per_field[1]
        for tb in page.groups(GroupKind.TEXTBLOCK):
            assert len(tb.member_ids) <= CFG.lines_per_textblock[1]


def test_every_textrun_is_in_exactly_one_textblock(pages):
    for page in pages:
        owned = [m for tb in page.groups(GroupKind.TEXTBLOCK) for m in tb.member_ids]
        assert sorted(owned) == sorted(e.id for e in page.of_kind(ElementKind.TEXTRUN))


def test_choice_captions_start_with_marker(pages):
    for page in pages:
        for cf in page.groups(GroupKind.CHOICEFIELD):
            assert page.element(cf.caption_id).words[0] in CHOICE_MARKERS


def test_groups_fit_inside_neighbourhoods(pages):
    assert all(neighbourhood_violations(p) == [] for p in pages)


def test_bad_config_is_rejected():
    with pytest.raises(ValueError, match="empty range"):
        GenConfig(fields_per_page=(3, 1))
    with pytest.raises(ValueError, match="group_gap"):
        GenConfig(group_gap=4, line_gap=4)


def test_infeasible_page_size():
    with pytest.raises(InfeasibleLayout):
        generate_pages(GenConfig(pages=1, page_width=200, page_height=120))


def test_derive_step2_counts_on_hand_built_page():
    els = [tr(0, 0, 0), tr(1, 0, 16), tr(2, 0, 60), tr(3, 0, 76), tr(4, 0, 120), tr(5, 0, 136), wg(6, 100, 0), wg(7, 100, 60)]
    anns = [GroupAnnotation(GroupKind.TEXTBLOCK, (2 * i, 2 * i + 1), i) for i in range(3)]
    s2 = derive_step2_page(FormPage("p", 300, 300, els, anns))
    assert len(s2.elements) == 5
    assert [e.kind for e in s2.elements].count(ElementKind.TEXTBLOCK) == 3


def test_derive_step2_single_run_block_and_widgets():
    page = hand_page()
    s2 = derive_step2_page(page)
    sources = textblock_sources(page)
    for tb_id, runs in sources.items():
        if len(runs) == 1:
            assert s2.element(tb_id).bbox == page.element(runs[0]).bbox
    for w in page.of_kind(ElementKind.WIDGET):
        assert s2.element(w.id) == w
    merged = s2.element(next(t for t, r in sources.items() if r == (0, 1)))
    assert merged.words == ("name", "of", "applicant")
    assert merged.bbox == BBox(10, 10, 40, 28)
    validate_page(s2)


def test_derive_step2_remaps_roles():
    s2 = derive_step2_page(hand_page())
    src = {r: t for t, runs in textblock_sources(hand_page()).items() for r in runs}
    field = s2.groups(GroupKind.TEXTFIELD)[0]
    assert field.member_ids == (3, src[2]) and field.caption_id == src[2]
    group = s2.groups(GroupKind.CHOICEGROUP)[0]
    assert group.title_id == src[4]


def test_derive_step2_rejects_orphan_textrun():
    page = hand_page()
    anns = [a for a in page.annotations if a.member_ids != (8,)]
    with pytest.raises(ValueError, match="textrun 8"):
        derive_step2_page(page.replace(annotations=anns))
