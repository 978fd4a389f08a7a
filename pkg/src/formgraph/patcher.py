"""Reference neighbourhoods: candidate ranking, ordering, rasters and labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from .docmodel import BBox, Element, ElementKind, FormPage, GroupKind, union_bbox

ROW_EPS = 10.0

BLUE = np.array([0.0, 0.0, 1.0])
GREEN = np.array([0.0, 1.0, 0.0])
HATCH_DARK, HATCH_LIGHT = 0.3, 0.6
WIDGET_GRAY = 0.85
STROKE = 2


class PatchError(ValueError):
    pass


class LabelError(ValueError):
    pass


class Step(IntEnum):
    STEP1 = 1
    STEP2 = 2


class FieldClass(IntEnum):
    FIELD = 0
    CHOICEFIELD = 1
    NONE = 2


def distance(a: Element, b: Element) -> float:
    """Weighted distance of ``b`` from reference ``a``.

    The vertical offset counts ten times the horizontal one and each offset
    is the smallest of the distances from a's midpoint to b's near edge,
    midpoint and far edge.  Not symmetric in general.
    """
    xa = a.bbox.left + a.bbox.width / 2
    ya = a.bbox.top + a.bbox.height / 2
    xb = b.bbox.left + b.bbox.width / 2
    yb = b.bbox.top + b.bbox.height / 2
    wb, hb = b.bbox.width, b.bbox.height
    dy = min(abs(ya - (yb - hb / 2)), abs(ya - yb), abs(ya - (yb + hb / 2)))
    dx = min(abs(xa - (xb - wb / 2)), abs(xa - xb), abs(xa - (xb + wb / 2)))
    return 10 * dy + dx


def _t1_kind(ref: Element) -> ElementKind:
    if ref.kind == ElementKind.WIDGET:
        raise PatchError(f"widget {ref.id} cannot be a reference")
    return ref.kind


def select_candidates(page: FormPage, reference_id: int, k1: int, k2: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Nearest ``k1`` same-kind elements and ``k2`` widgets, ties by id."""
    if reference_id not in page.by_id:
        raise PatchError(f"reference {reference_id} not on page {page.page_id!r}")
    ref = page.element(reference_id)
    t1_kind = _t1_kind(ref)

    def ranked(kind: ElementKind, k: int) -> tuple[int, ...]:
        scored = sorted((distance(ref, e), e.id) for e in page.elements if e.kind == kind)
        return tuple(i for _, i in scored[:k])

    t1 = ranked(t1_kind, k1)
    if reference_id not in t1:
        # only possible when another element sits at distance 0 with a smaller id
        t1 = (reference_id,) + tuple(i for i in t1 if i != reference_id)[: max(k1 - 1, 0)]
    return t1, ranked(ElementKind.WIDGET, k2)


def reading_order(elements: Sequence[Element], row_eps: float = ROW_EPS) -> list[int]:
    """Ids ordered by quantised row, then left edge, then id."""
    return [e.id for e in sorted(elements, key=lambda e: (math.floor(e.bbox.top / row_eps), e.bbox.left, e.id))]


def normalize_bboxes(candidates: Sequence[Element], patch_bbox: BBox) -> np.ndarray:
    """Candidate boxes as (x, y, w, h) relative to the patch, in [0, 1]."""
    if patch_bbox.width <= 0 or patch_bbox.height <= 0:
        raise PatchError(f"cannot normalise against zero-area patch {patch_bbox}")
    out = np.zeros((len(candidates), 4))
    for i, e in enumerate(candidates):
        b = e.bbox
        out[i] = (
            (b.left - patch_bbox.left) / patch_bbox.width,
            (b.top - patch_bbox.top) / patch_bbox.height,
            b.width / patch_bbox.width,
            b.height / patch_bbox.height,
        )
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# rasters
# ---------------------------------------------------------------------------


def _render_region(page: FormPage, region: BBox) -> np.ndarray:
    """RGB render of ``region`` at page resolution (one pixel per page unit)."""
    x0, y0 = math.floor(region.left), math.floor(region.top)
    pw = max(1, math.ceil(region.right) - x0)
    ph = max(1, math.ceil(region.bottom) - y0)
    img = np.ones((ph, pw, 3))
    yy, xx = np.mgrid[y0:y0 + ph, x0:x0 + pw]
    hatch = np.where((xx + yy) % 4 < 2, HATCH_DARK, HATCH_LIGHT)

    def span(e: Element):
        c0 = max(math.floor(e.bbox.left) - x0, 0)
        c1 = min(math.ceil(e.bbox.right) - x0, pw)
        r0 = max(math.floor(e.bbox.top) - y0, 0)
        r1 = min(math.ceil(e.bbox.bottom) - y0, ph)
        return r0, r1, c0, c1

    for e in page.elements:
        if e.bbox.intersection_area(region) <= 0 and not region.contains(e.bbox):
            continue
        r0, r1, c0, c1 = span(e)
        if r1 <= r0 or c1 <= c0:
            continue
        if e.kind == ElementKind.WIDGET:
            img[r0:r1, c0:c1] = WIDGET_GRAY
        else:
            img[r0:r1, c0:c1] = hatch[r0:r1, c0:c1, None]
            if e.kind == ElementKind.TEXTBLOCK:
                img[r0, c0:c1] = 0
                img[r1 - 1, c0:c1] = 0
                img[r0:r1, c0] = 0
                img[r0:r1, c1 - 1] = 0
    return img


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of ``(ph, pw, C)`` to ``(h, w, C)``."""
    ph, pw = img.shape[:2]

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(h, ph)
    c0, c1, fc = coords(w, pw)
    rows = img[r0] * (1 - fr)[:, None, None] + img[r1] * fr[:, None, None]
    return rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]


def mesh_channels(h: int, w: int) -> np.ndarray:
    xs = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    return np.stack([np.broadcast_to(xs[None, :], (h, w)), np.broadcast_to(ys[:, None], (h, w))], axis=-1)


@lru_cache(maxsize=8)
def _mesh32(h: int, w: int) -> np.ndarray:
    return mesh_channels(h, w).astype(np.float32)


def _outline(img: np.ndarray, nb: np.ndarray, color: np.ndarray) -> None:
    h, w = img.shape[:2]
    x, y, bw, bh = nb
    c0 = int(round(x * (w - 1)))
    c1 = int(round(min(x + bw, 1.0) * (w - 1)))
    r0 = int(round(y * (h - 1)))
    r1 = int(round(min(y + bh, 1.0) * (h - 1)))
    img[r0:min(r0 + STROKE, r1 + 1), c0:c1 + 1] = color
    img[max(r1 - STROKE + 1, r0):r1 + 1, c0:c1 + 1] = color
    img[r0:r1 + 1, c0:min(c0 + STROKE, c1 + 1)] = color
    img[r0:r1 + 1, max(c1 - STROKE + 1, c0):c1 + 1] = color


@dataclass(frozen=True, eq=False)
class Patch:
    reference_id: int
    candidate_ids: tuple[int, ...]
    patch_bbox: BBox
    norm_bboxes: np.ndarray  # (slots, 4)
    ref_flags: np.ndarray  # (slots,)
    valid_mask: np.ndarray  # (slots,)
    base_rgb: np.ndarray | None  # (H, W, 3) render without highlights
    height: int
    width: int

    @property
    def slots(self) -> int:
        return len(self.valid_mask)

    @property
    def n_valid(self) -> int:
        return len(self.candidate_ids)

    @property
    def ref_index(self) -> int:
        return self.candidate_ids.index(self.reference_id)

    def raster(self, slot: int) -> np.ndarray:
        """5-channel raster with candidate ``slot`` highlighted."""
        if slot >= self.n_valid:
            return np.zeros((self.height, self.width, 5), dtype=np.float32)
        if self.base_rgb is None:
            raise PatchError("patch was built without rasters")
        rgb = self.base_rgb.copy()
        _outline(rgb, self.norm_bboxes[self.ref_index], BLUE)
        _outline(rgb, self.norm_bboxes[slot], GREEN)
        return np.concatenate([rgb, _mesh32(self.height, self.width)], axis=-1)

    @cached_property
    def rasters(self) -> np.ndarray:
        return np.stack([self.raster(i) for i in range(self.slots)])


def rasterize(page: FormPage, patch: Patch, highlight_id: int, H: int, W: int) -> np.ndarray:
    """H x W x 5 raster of ``patch`` with ``highlight_id`` outlined in green."""
    if highlight_id not in patch.candidate_ids:
        raise PatchError(f"{highlight_id} is not a candidate of patch {patch.reference_id}")
    if patch.base_rgb is not None and patch.base_rgb.shape[:2] == (H, W):
        return patch.raster(patch.candidate_ids.index(highlight_id))
    base = resize_bilinear(_render_region(page, patch.patch_bbox), H, W)
    rgb = base.copy()
    _outline(rgb, patch.norm_bboxes[patch.ref_index], BLUE)
    _outline(rgb, patch.norm_bboxes[patch.candidate_ids.index(highlight_id)], GREEN)
    return np.concatenate([rgb, mesh_channels(H, W)], axis=-1)


def build_patch(page: FormPage, reference_id: int, cfg, render: bool = True, row_eps: float = ROW_EPS) -> Patch:
    """Neighbourhood of ``reference_id`` padded to ``cfg.k1 + cfg.k2`` slots.

    ``cfg`` needs ``k1``, ``k2``, ``H`` and ``W`` attributes.
    """
    t1, t2 = select_candidates(page, reference_id, cfg.k1, cfg.k2)
    elems = [page.element(i) for i in t1 + t2]
    order = reading_order(elems, row_eps)
    cands = [page.element(i) for i in order]
    region = union_bbox(e.bbox for e in cands)
    if region.width <= 0 or region.height <= 0:
        # degenerate neighbourhoods (single zero-extent element) get a unit frame
        region = BBox(region.left, region.top, max(region.width, 1.0), max(region.height, 1.0))
    slots = cfg.k1 + cfg.k2
    nb = np.zeros((slots, 4))
    nb[: len(cands)] = normalize_bboxes(cands, region)
    flags = np.zeros(slots)
    flags[order.index(reference_id)] = 1
    valid = np.zeros(slots)
    valid[: len(cands)] = 1
    base = resize_bilinear(_render_region(page, region), cfg.H, cfg.W).astype(np.float32) if render else None
    return Patch(reference_id, tuple(order), region, nb, flags, valid, base, cfg.H, cfg.W)


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatchLabels:
    step: Step
    tb_assoc: np.ndarray | None = None  # (slots,)
    field_class: np.ndarray | None = None  # (slots,) FieldClass values
    chgp_assoc: np.ndarray | None = None  # (slots,)


def _membership(page: FormPage, kind: GroupKind) -> dict[int, int]:
    owner = {}
    for a in page.groups(kind):
        for m in a.member_ids:
            if m in owner:
                raise LabelError(f"page {page.page_id!r}: element {m} is in two {kind.value} groups")
            owner[m] = a.group_id
    return owner


def make_labels(page: FormPage, patch: Patch, step) -> PatchLabels:
    """Training targets of every valid candidate against the reference."""
    step = Step(step)
    slots = patch.slots
    ref = patch.reference_id
    if step == Step.STEP1:
        owner = _membership(page, GroupKind.TEXTBLOCK)
        if not owner:
            raise LabelError(f"page {page.page_id!r} has no textblock annotations")
        tb = np.zeros(slots)
        for i, c in enumerate(patch.candidate_ids):
            e = page.element(c)
            tb[i] = float(e.kind == ElementKind.TEXTRUN and ref in owner and owner.get(c) == owner[ref])
        return PatchLabels(step, tb_assoc=tb)

    fields = _membership(page, GroupKind.TEXTFIELD)
    choices = _membership(page, GroupKind.CHOICEFIELD)
    field_class = np.full(slots, int(FieldClass.NONE))
    for i, c in enumerate(patch.candidate_ids):
        if ref in fields and fields.get(c) == fields[ref]:
            field_class[i] = FieldClass.FIELD
        elif ref in choices and choices.get(c) == choices[ref]:
            field_class[i] = FieldClass.CHOICEFIELD

    by_gid = {a.group_id: a for a in page.annotations}
    chgp = np.zeros(slots)
    for g in page.groups(GroupKind.CHOICEGROUP):
        title = g.title_id
        children = [by_gid[c] for c in (g.child_group_ids or ())]
        captions = {ch.caption_id for ch in children}
        ref_title = ref == title
        ref_caption = ref in captions
        if not (ref_title or ref_caption):
            continue
        own_widgets = set()
        for ch in children:
            if ch.caption_id == ref:
                own_widgets = {m for m in ch.member_ids if page.element(m).kind == ElementKind.WIDGET}
        for i, c in enumerate(patch.candidate_ids):
            if ref_title and c in captions:
                chgp[i] = 1
            elif ref_caption and (c == title or c in own_widgets or c in captions):
                chgp[i] = 1
    return PatchLabels(step, field_class=field_class, chgp_assoc=chgp)
