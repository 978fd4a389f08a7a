"""Form page records, geometry helpers and JSON-lines serialization."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

MAX_WORDS = 200


class FormatError(ValueError):
    """A dataset line could not be parsed."""


class PageValidationError(ValueError):
    """A page violates a structural invariant."""

    def __init__(self, page_id: str, field_name: str, message: str):
        super().__init__(f"page {page_id!r}: {field_name}: {message}")
        self.page_id = page_id
        self.field = field_name


class ElementKind(str, Enum):
    TEXTRUN = "textrun"
    WIDGET = "widget"
    TEXTBLOCK = "textblock"


class GroupKind(str, Enum):
    TEXTBLOCK = "textblock"
    TEXTFIELD = "textfield"
    CHOICEFIELD = "choicefield"
    CHOICEGROUP = "choicegroup"


@dataclass(frozen=True)
class BBox:
    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise ValueError(f"negative bbox extent: {self}")

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    def midpoint(self) -> tuple[float, float]:
        return midpoint(self)

    def contains(self, other: BBox) -> bool:
        return (
            self.left <= other.left
            and self.top <= other.top
            and other.right <= self.right
            and other.bottom <= self.bottom
        )

    def intersection_area(self, other: BBox) -> float:
        w = min(self.right, other.right) - max(self.left, other.left)
        h = min(self.bottom, other.bottom) - max(self.top, other.top)
        return max(w, 0) * max(h, 0)

    def as_list(self) -> list:
        return [self.left, self.top, self.width, self.height]


def midpoint(b: BBox) -> tuple[float, float]:
    return (b.left + b.width / 2, b.top + b.height / 2)


def union_bbox(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    if not boxes:
        raise ValueError("union of no boxes")
    left = min(b.left for b in boxes)
    top = min(b.top for b in boxes)
    right = max(b.right for b in boxes)
    bottom = max(b.bottom for b in boxes)
    return BBox(left, top, right - left, bottom - top)


@dataclass(frozen=True)
class Element:
    id: int
    kind: ElementKind
    bbox: BBox
    words: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ElementKind(self.kind))
        words = tuple(self.words)[:MAX_WORDS]
        object.__setattr__(self, "words", words)


@dataclass(frozen=True)
class GroupAnnotation:
    kind: GroupKind
    member_ids: tuple[int, ...]
    group_id: int
    title_id: int | None = None
    caption_id: int | None = None
    child_group_ids: tuple[int, ...] | None = None
    predicted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", GroupKind(self.kind))
        object.__setattr__(self, "member_ids", tuple(sorted(self.member_ids)))
        if self.child_group_ids is not None:
            object.__setattr__(self, "child_group_ids", tuple(sorted(self.child_group_ids)))


@dataclass(frozen=True)
class FormPage:
    page_id: str
    width: float
    height: float
    elements: tuple[Element, ...] = ()
    annotations: tuple[GroupAnnotation, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @cached_property
    def by_id(self) -> dict[int, Element]:
        return {e.id: e for e in self.elements}

    def element(self, element_id: int) -> Element:
        return self.by_id[element_id]

    def of_kind(self, kind: ElementKind) -> list[Element]:
        return [e for e in self.elements if e.kind == kind]

    def groups(self, kind: GroupKind) -> list[GroupAnnotation]:
        return [a for a in self.annotations if a.kind == kind]

    def replace(self, **changes) -> FormPage:
        data = dict(
            page_id=self.page_id,
            width=self.width,
            height=self.height,
            elements=self.elements,
            annotations=self.annotations,
        )
        data.update(changes)
        return FormPage(**data)


def validate_page(page: FormPage) -> FormPage:
    """Raise :class:`PageValidationError` on the first broken invariant."""
    pid = page.page_id
    seen = set()
    frame = BBox(0, 0, page.width, page.height)
    for e in page.elements:
        if e.id in seen:
            raise PageValidationError(pid, "elements.id", f"duplicate element id {e.id}")
        seen.add(e.id)
        if e.kind == ElementKind.WIDGET and e.words:
            raise PageValidationError(pid, "elements.words", f"widget {e.id} carries words")
        if not frame.contains(e.bbox):
            raise PageValidationError(pid, "elements.bbox", f"element {e.id} lies outside the page")
    group_ids = {}
    for a in page.annotations:
        if a.group_id in group_ids:
            raise PageValidationError(pid, "annotations.group_id", f"duplicate group id {a.group_id}")
        group_ids[a.group_id] = a
        if not a.member_ids:
            raise PageValidationError(pid, "annotations.member_ids", f"group {a.group_id} is empty")
        for m in a.member_ids:
            if m not in seen:
                raise PageValidationError(pid, "annotations.member_ids", f"group {a.group_id} references missing element id {m}")
        for attr in ("title_id", "caption_id"):
            ref = getattr(a, attr)
            if ref is not None and ref not in a.member_ids:
                raise PageValidationError(pid, f"annotations.{attr}", f"group {a.group_id}: {attr} {ref} is not a member")
    for a in page.annotations:
        if a.kind != GroupKind.CHOICEGROUP or a.child_group_ids is None:
            continue
        expected = set() if a.title_id is None else {a.title_id}
        for cid in a.child_group_ids:
            child = group_ids.get(cid)
            if child is None or child.kind != GroupKind.CHOICEFIELD:
                raise PageValidationError(pid, "annotations.child_group_ids", f"group {a.group_id}: {cid} is not a choice field group")
            expected |= set(child.member_ids)
        if a.title_id is not None:
            # a title is a textblock: every member of its textblock belongs to the group
            for tb in page.groups(GroupKind.TEXTBLOCK):
                if a.title_id in tb.member_ids:
                    expected |= set(tb.member_ids)
        if expected != set(a.member_ids):
            raise PageValidationError(pid, "annotations.member_ids", f"choice group {a.group_id} members differ from title + child fields")
    return page


# ---------------------------------------------------------------------------
# JSON lines
# ---------------------------------------------------------------------------


def _num(x):
    return int(x) if float(x).is_integer() else float(x)


def page_to_dict(page: FormPage) -> dict:
    anns = []
    for a in page.annotations:
        d = {
            "kind": a.kind.value,
            "member_ids": list(a.member_ids),
            "title_id": a.title_id,
            "caption_id": a.caption_id,
            "child_group_ids": None if a.child_group_ids is None else list(a.child_group_ids),
            "group_id": a.group_id,
        }
        if a.predicted:
            d["predicted"] = True
        anns.append(d)
    return {
        "page_id": page.page_id,
        "width": _num(page.width),
        "height": _num(page.height),
        "elements": [
            {"id": e.id, "kind": e.kind.value, "bbox": [_num(v) for v in e.bbox.as_list()], "words": list(e.words)}
            for e in page.elements
        ],
        "annotations": anns,
    }


_PAGE_KEYS = {"page_id", "width", "height", "elements", "annotations"}
_ELEMENT_KEYS = {"id", "kind", "bbox", "words"}
_ANNOTATION_KEYS = {"kind", "member_ids", "title_id", "caption_id", "child_group_ids", "group_id"}


def page_from_dict(d: dict) -> FormPage:
    if set(d) != _PAGE_KEYS:
        raise FormatError(f"page keys must be {sorted(_PAGE_KEYS)}, got {sorted(d)}")
    elements = []
    for e in d["elements"]:
        if set(e) != _ELEMENT_KEYS:
            raise FormatError(f"element keys must be {sorted(_ELEMENT_KEYS)}, got {sorted(e)}")
        elements.append(Element(int(e["id"]), ElementKind(e["kind"]), BBox(*e["bbox"]), tuple(e["words"])))
    annotations = []
    for a in d["annotations"]:
        extra = set(a) - _ANNOTATION_KEYS
        if not _ANNOTATION_KEYS <= set(a) or extra - {"predicted"}:
            raise FormatError(f"annotation keys must be {sorted(_ANNOTATION_KEYS)}, got {sorted(a)}")
        annotations.append(
            GroupAnnotation(
                kind=GroupKind(a["kind"]),
                member_ids=tuple(a["member_ids"]),
                group_id=int(a["group_id"]),
                title_id=a["title_id"],
                caption_id=a["caption_id"],
                child_group_ids=None if a["child_group_ids"] is None else tuple(a["child_group_ids"]),
                predicted=bool(a.get("predicted", False)),
            )
        )
    return FormPage(str(d["page_id"]), d["width"], d["height"], tuple(elements), tuple(annotations))


def dumps_page(page: FormPage) -> str:
    return json.dumps(page_to_dict(page), ensure_ascii=False, separators=(",", ":"))


def load_pages(path) -> list[FormPage]:
    pages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                page = page_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, PageValidationError):
                    raise
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            pages.append(validate_page(page))
    return pages


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file next to ``path`` and rename over it."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pages(pages: Sequence[FormPage], path) -> None:
    atomic_write(path, "".join(dumps_page(p) + "\n" for p in pages))
