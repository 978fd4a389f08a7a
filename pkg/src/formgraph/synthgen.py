"""Seeded generator of synthetic form pages with ground-truth groups.

Pages are laid out in columns.  Each construct (plain textblock, text
field, choice group) is stacked top to bottom with ``group_gap`` between
constructs and ``line_gap`` between lines of one textblock.  A page is
re-drawn until every annotated group fits inside the candidate
neighbourhood of each of its members.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .docmodel import BBox, Element, ElementKind, FormPage, GroupAnnotation, GroupKind, union_bbox
from .patcher import ROW_EPS, reading_order, select_candidates

CHOICE_MARKERS = ("yes", "no", "option")
MAX_ATTEMPTS = 200


class InfeasibleLayout(ValueError):
    pass


def _make_lexicon(size: int = 256) -> tuple[str, ...]:
    rng = np.random.default_rng(20200101)
    onsets = list("bcdfghjklmnprstvwz") + ["ch", "sh", "st", "tr", "pl"]
    vowels = list("aeiou") + ["ai", "ou", "ea"]
    words: list[str] = []
    seen = set(CHOICE_MARKERS)
    while len(words) < size:
        n = int(rng.integers(1, 4))
        w = "".join(onsets[rng.integers(len(onsets))] + vowels[rng.integers(len(vowels))] for _ in range(n))
        if rng.random() < 0.4:
            w += "nrst"[rng.integers(4)]
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


LEXICON = _make_lexicon()


_RANGES = {
    "columns",
    "textblocks_per_page",
    "fields_per_page",
    "choicegroups_per_page",
    "choices_per_group",
    "widgets_per_field",
    "lines_per_textblock",
    "words_per_line",
}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    pages: int = 8
    page_width: int = 800
    page_height: int = 1000
    margin: int = 40
    gutter: int = 40
    columns: tuple[int, int] = (1, 2)
    textblocks_per_page: tuple[int, int] = (3, 6)
    fields_per_page: tuple[int, int] = (2, 5)
    choicegroups_per_page: tuple[int, int] = (1, 2)
    choices_per_group: tuple[int, int] = (2, 4)
    widgets_per_field: tuple[int, int] = (1, 2)
    lines_per_textblock: tuple[int, int] = (1, 3)
    words_per_line: tuple[int, int] = (2, 5)
    glyph_height: int = 12
    line_gap: int = 4
    group_gap: int = 24
    step1_k: tuple[int, int] = (6, 4)
    step2_k: tuple[int, int] = (10, 4)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = tuple(v)
                object.__setattr__(self, f.name, v)
            if f.name in _RANGES and v[0] > v[1]:
                raise ValueError(f"GenConfig.{f.name}: empty range {v}")
        if self.pages < 0:
            raise ValueError("GenConfig.pages must be >= 0")
        if self.group_gap <= self.line_gap:
            raise ValueError("GenConfig.group_gap must exceed line_gap")
        if self.columns[0] < 1 or self.glyph_height < 1:
            raise ValueError("GenConfig needs at least one column and a positive glyph height")

    @property
    def glyph_width(self) -> int:
        return max(1, round(self.glyph_height * 0.6))


# ---------------------------------------------------------------------------
# construct layouts in local coordinates
# ---------------------------------------------------------------------------


@dataclass
class _Construct:
    items: list = field(default_factory=list)  # (kind, x, y, w, h, words)
    textblocks: list = field(default_factory=list)  # lists of item indices
    fields: list = field(default_factory=list)  # (caption tb index, [widget items])
    choicefields: list = field(default_factory=list)  # (caption tb index, [widget items])
    choicegroups: list = field(default_factory=list)  # (title tb index or None, [choicefield indices])

    @property
    def height(self) -> int:
        return max(y + h for _, _, y, _, h, _ in self.items)

    def add(self, kind, x, y, w, h, words=()) -> int:
        self.items.append((kind, int(x), int(y), int(w), int(h), tuple(words)))
        return len(self.items) - 1


class _Layout:
    def __init__(self, cfg: GenConfig, rng: np.random.Generator, colw: int):
        self.cfg, self.rng, self.colw = cfg, rng, colw

    def rint(self, rng_range) -> int:
        lo, hi = rng_range
        return int(self.rng.integers(lo, hi + 1))

    def text_width(self, words) -> int:
        return (sum(len(w) for w in words) + len(words) - 1) * self.cfg.glyph_width

    def line(self, max_w: int, first=()) -> tuple[tuple[str, ...], int]:
        n = self.rint(self.cfg.words_per_line)
        words = list(first) + [LEXICON[self.rng.integers(len(LEXICON))] for _ in range(n)]
        while len(words) > 1 and self.text_width(words) > max_w:
            words.pop()
        return tuple(words), self.text_width(words)

    def textblock(self, c: _Construct, x: int, y: int, n_lines: int, max_w: int) -> int:
        cfg = self.cfg
        idx = []
        for i in range(n_lines):
            words, w = self.line(max_w)
            idx.append(c.add("textrun", x, y + i * (cfg.glyph_height + cfg.line_gap), w, cfg.glyph_height, words))
        c.textblocks.append(idx)
        return len(c.textblocks) - 1

    def plain(self) -> _Construct:
        c = _Construct()
        indent = int(self.rng.integers(0, 3)) * self.cfg.glyph_width * 2
        self.textblock(c, indent, 0, self.rint(self.cfg.lines_per_textblock), self.colw - indent)
        return c

    def text_field(self) -> _Construct:
        cfg = self.cfg
        c = _Construct()
        n_lines = min(self.rint(self.cfg.lines_per_textblock), 2)
        cap = self.textblock(c, 0, 0, n_lines, max(self.colw // 2, cfg.glyph_width))
        cap_w = max(c.items[i][3] for i in c.textblocks[cap])
        n_w = self.rint(cfg.widgets_per_field)
        avail = self.colw - cap_w - 12
        x = cap_w + 12
        widgets = []
        for k in range(n_w):
            w = int(self.rng.integers(60, 141))
            w = min(w, (avail - 8 * (n_w - 1)) // n_w)
            if w < 20:
                break
            widgets.append(c.add("widget", x, 0, w, cfg.glyph_height + 2))
            x += w + 8
        if not widgets:
            # no room to the right: put the entry box under the caption
            y = c.height + cfg.line_gap
            widgets.append(c.add("widget", 0, y, min(120, self.colw), cfg.glyph_height + 2))
        c.fields.append((cap, widgets))
        return c

    def choice_group(self) -> _Construct:
        cfg = self.cfg
        c = _Construct()
        inner_gap = (cfg.line_gap + cfg.group_gap) // 2
        title = None
        y = 0
        if self.rng.random() < 0.6:
            title = self.textblock(c, 0, 0, 1, self.colw)
            y = cfg.glyph_height + inner_gap
        n = self.rint(cfg.choices_per_group)
        box = cfg.glyph_height
        x = 0
        cfs = []
        for _ in range(n):
            marker = CHOICE_MARKERS[self.rng.integers(len(CHOICE_MARKERS))]
            words = [marker] + [LEXICON[self.rng.integers(len(LEXICON))] for _ in range(int(self.rng.integers(0, 3)))]
            w = self.text_width(words)
            if x + box + 6 + w > self.colw and x > 0:
                x = 0
                y += cfg.glyph_height + inner_gap
            while len(words) > 1 and box + 6 + w > self.colw:
                words.pop()
                w = self.text_width(words)
            wid = c.add("widget", x, y, box, box)
            run = c.add("textrun", x + box + 6, y, w, cfg.glyph_height, words)
            c.textblocks.append([run])
            c.choicefields.append((len(c.textblocks) - 1, [wid]))
            cfs.append(len(c.choicefields) - 1)
            x += box + 6 + w + 18
        c.choicegroups.append((title, cfs))
        return c


def _layout_page(cfg: GenConfig, rng: np.random.Generator, page_id: str) -> FormPage:
    ncols = int(rng.integers(cfg.columns[0], cfg.columns[1] + 1))
    usable = cfg.page_width - 2 * cfg.margin - (ncols - 1) * cfg.gutter
    colw = usable // ncols
    if colw < 4 * cfg.glyph_height:
        raise InfeasibleLayout(f"columns too narrow ({colw}px) for page width {cfg.page_width}")
    lay = _Layout(cfg, rng, colw)
    kinds = (
        ["plain"] * lay.rint(cfg.textblocks_per_page)
        + ["field"] * lay.rint(cfg.fields_per_page)
        + ["group"] * lay.rint(cfg.choicegroups_per_page)
    )
    rng.shuffle(kinds)
    builders = {"plain": lay.plain, "field": lay.text_field, "group": lay.choice_group}

    elements: list[Element] = []
    tb_members: list[list[int]] = []
    field_groups, choice_groups, cg_groups = [], [], []
    col, cursor = 0, cfg.margin
    bottom = cfg.page_height - cfg.margin
    for kind in kinds:
        c = builders[kind]()
        if cursor + c.height > bottom:
            col, cursor = col + 1, cfg.margin
            if col >= ncols or cursor + c.height > bottom:
                raise InfeasibleLayout(f"page {page_id}: constructs do not fit on the page")
        ox = cfg.margin + col * (colw + cfg.gutter)
        ids = []
        for k, x, y, w, h, words in c.items:
            eid = len(elements)
            elements.append(Element(eid, ElementKind(k), BBox(ox + x, cursor + y, w, h), words))
            ids.append(eid)
        tb_base = len(tb_members)
        tb_members.extend([ids[i] for i in tb] for tb in c.textblocks)
        for cap, wids in c.fields:
            field_groups.append((tb_base + cap, [ids[i] for i in wids]))
        cf_base = len(choice_groups)
        for cap, wids in c.choicefields:
            choice_groups.append((tb_base + cap, [ids[i] for i in wids]))
        for title, cfs in c.choicegroups:
            cg_groups.append((None if title is None else tb_base + title, [cf_base + i for i in cfs]))
        cursor += c.height + cfg.group_gap

    anns: list[GroupAnnotation] = []
    gid = 0
    for members in tb_members:
        anns.append(GroupAnnotation(GroupKind.TEXTBLOCK, tuple(members), gid))
        gid += 1
    for cap, wids in field_groups:
        members = tb_members[cap] + wids
        anns.append(GroupAnnotation(GroupKind.TEXTFIELD, tuple(members), gid, caption_id=min(tb_members[cap])))
        gid += 1
    cf_gid = []
    for cap, wids in choice_groups:
        members = tb_members[cap] + wids
        anns.append(GroupAnnotation(GroupKind.CHOICEFIELD, tuple(members), gid, caption_id=min(tb_members[cap])))
        cf_gid.append(gid)
        gid += 1
    for title, cfs in cg_groups:
        members = set(tb_members[title]) if title is not None else set()
        for i in cfs:
            cap, wids = choice_groups[i]
            members |= set(tb_members[cap]) | set(wids)
        anns.append(
            GroupAnnotation(
                GroupKind.CHOICEGROUP,
                tuple(members),
                gid,
                title_id=None if title is None else min(tb_members[title]),
                child_group_ids=tuple(cf_gid[i] for i in cfs),
            )
        )
        gid += 1
    return FormPage(page_id, cfg.page_width, cfg.page_height, tuple(elements), tuple(anns))


def neighbourhood_violations(page: FormPage, step1_k=(6, 4), step2_k=(10, 4)) -> list[str]:
    """Groups whose members do not all appear in each other's candidate sets."""
    problems = []
    for tb in page.groups(GroupKind.TEXTBLOCK):
        for m in tb.member_ids:
            t1, _ = select_candidates(page, m, *step1_k)
            if not set(tb.member_ids) <= set(t1):
                problems.append(f"textblock {tb.group_id} around {m}")
    s2 = derive_step2_page(page)
    widget = ElementKind.WIDGET
    for g in s2.annotations:
        tbs = [m for m in g.member_ids if s2.element(m).kind != widget]
        wids = {m for m in g.member_ids if s2.element(m).kind == widget}
        for m in tbs:
            t1, t2 = select_candidates(s2, m, *step2_k)
            if not set(tbs) <= set(t1):
                problems.append(f"{g.kind.value} {g.group_id} around {m}")
            if g.kind != GroupKind.CHOICEGROUP and not wids <= set(t2):
                problems.append(f"{g.kind.value} {g.group_id} widgets around {m}")
    return problems


def generate_pages(cfg: GenConfig) -> list[FormPage]:
    pages = []
    for index in range(cfg.pages):
        page_id = f"synth-{cfg.seed}-{index:05d}"
        for attempt in range(MAX_ATTEMPTS):
            rng = np.random.default_rng([cfg.seed, index, attempt])
            try:
                page = _layout_page(cfg, rng, page_id)
            except InfeasibleLayout:
                continue
            if not neighbourhood_violations(page, cfg.step1_k, cfg.step2_k):
                pages.append(page)
                break
        else:
            raise InfeasibleLayout(f"could not lay out page {page_id} in {MAX_ATTEMPTS} attempts; enlarge the page or shrink the ranges")
    return pages


# ---------------------------------------------------------------------------
# step-2 view
# ---------------------------------------------------------------------------


def textblock_sources(page: FormPage) -> dict[int, tuple[int, ...]]:
    """Ids the step-2 view assigns to each tagged textblock, mapped to its textruns."""
    tbs = sorted(page.groups(GroupKind.TEXTBLOCK), key=lambda a: min(a.member_ids))
    base = max((e.id for e in page.elements), default=-1) + 1
    return {base + i: tuple(a.member_ids) for i, a in enumerate(tbs)}


def merge_textblock(page: FormPage, tb_id: int, textrun_ids) -> Element:
    runs = [page.element(i) for i in textrun_ids]
    words = []
    for i in reading_order(runs, ROW_EPS):
        words.extend(page.element(i).words)
    return Element(tb_id, ElementKind.TEXTBLOCK, union_bbox(r.bbox for r in runs), tuple(words))


def derive_step2_page(page: FormPage) -> FormPage:
    """Replace textruns by their tagged textblocks; widgets keep their ids."""
    sources = textblock_sources(page)
    owner = {tr: tb for tb, trs in sources.items() for tr in trs}
    for e in page.of_kind(ElementKind.TEXTRUN):
        if e.id not in owner:
            raise ValueError(f"page {page.page_id!r}: textrun {e.id} belongs to no textblock")
    blocks = [merge_textblock(page, tb, trs) for tb, trs in sources.items()]
    widgets = page.of_kind(ElementKind.WIDGET)

    def remap(i):
        return None if i is None else owner.get(i, i)

    anns = []
    for a in page.annotations:
        if a.kind == GroupKind.TEXTBLOCK:
            continue
        anns.append(
            GroupAnnotation(
                a.kind,
                tuple(sorted({owner.get(m, m) for m in a.member_ids})),
                a.group_id,
                title_id=remap(a.title_id),
                caption_id=remap(a.caption_id),
                child_group_ids=a.child_group_ids,
                predicted=a.predicted,
            )
        )
    elements = sorted(widgets + blocks, key=lambda e: e.id)
    return FormPage(page.page_id, page.width, page.height, tuple(elements), tuple(anns))
