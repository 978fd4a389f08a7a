"""Association graphs, connected components and structure assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .docmodel import BBox, ElementKind, FormPage, GroupAnnotation, GroupKind, union_bbox
from .patcher import FieldClass, Step


class GroupingError(ValueError):
    pass


@dataclass
class AssocGraph:
    """Votes between elements and the undirected edges they imply."""

    nodes: tuple[int, ...]
    directed_votes: dict[tuple[int, int], int] = field(default_factory=dict)
    edges: set[tuple[int, int]] = field(default_factory=set)

    def neighbours(self) -> dict[int, set[int]]:
        adj = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass(frozen=True)
class StructureGroup:
    kind: GroupKind
    member_ids: tuple[int, ...]
    constituent_textrun_ids: tuple[int, ...]
    constituent_widget_ids: tuple[int, ...]
    bbox: BBox | None = None

    @property
    def constituents(self) -> frozenset[int]:
        return frozenset(self.constituent_textrun_ids) | frozenset(self.constituent_widget_ids)


def _votes(results, step: Step, threshold: float) -> dict[str, dict[tuple[int, int], int]]:
    """Per-relation directed votes taken from the decoder heads."""
    out: dict[str, dict] = {"tb": {}, "field": {}, "chgp": {}}
    for r in results:
        n = len(r.candidate_ids)
        for i, c in enumerate(r.candidate_ids[:n]):
            key = (r.reference_id, c)
            if step == Step.STEP1:
                out["tb"][key] = int(r.seq_tb_prob[i] >= threshold)
            else:
                out["field"][key] = int(np.argmax(r.seq_field_probs[i]))
                out["chgp"][key] = int(r.seq_chgp_prob[i] >= threshold)
    return out


def _edges(votes: Mapping[tuple[int, int], int], positive, widgets: set[int]) -> set[tuple[int, int]]:
    edges = set()
    for (a, b), v in votes.items():
        if a == b or not positive(v):
            continue
        if b in widgets:
            edges.add((a, b))
            continue
        back = votes.get((b, a))
        # a missing reverse vote (b never saw a) does not veto the edge
        if back is None or positive(back):
            edges.add((min(a, b), max(a, b)))
    return edges


def build_graph(results, page: FormPage, step, threshold: float = 0.5) -> dict[GroupKind, AssocGraph]:
    """Association graphs of one page keyed by the construct they produce.

    Step 1 yields a textblock graph over textruns.  Step 2 yields text-field,
    choice-field and choice-group graphs over textblocks and widgets.
    """
    step = Step(step)
    t1_kind = ElementKind.TEXTRUN if step == Step.STEP1 else ElementKind.TEXTBLOCK
    t1 = sorted(e.id for e in page.of_kind(t1_kind))
    widgets = {e.id for e in page.of_kind(ElementKind.WIDGET)}
    results = sorted(results, key=lambda r: r.reference_id)
    seen = {}
    for r in results:
        if r.reference_id in seen:
            raise GroupingError(f"element {r.reference_id} appears as a reference twice")
        seen[r.reference_id] = r
    missing = [i for i in t1 if i not in seen]
    if missing:
        raise GroupingError(f"element {missing[0]} was never a reference")
    votes = _votes(results, step, threshold)
    if step == Step.STEP1:
        # widgets are candidates in step-1 patches but never textblock members
        runs = set(t1)
        v = {k: x for k, x in votes["tb"].items() if k[1] in runs}
        return {GroupKind.TEXTBLOCK: AssocGraph(tuple(t1), v, _edges(v, lambda x: x == 1, set()))}
    nodes = tuple(sorted(t1 + sorted(widgets)))
    fv, cv = votes["field"], votes["chgp"]
    return {
        GroupKind.TEXTFIELD: AssocGraph(nodes, fv, _edges(fv, lambda x: x == FieldClass.FIELD, widgets)),
        GroupKind.CHOICEFIELD: AssocGraph(nodes, fv, _edges(fv, lambda x: x == FieldClass.CHOICEFIELD, widgets)),
        GroupKind.CHOICEGROUP: AssocGraph(nodes, cv, _edges(cv, lambda x: x == 1, widgets)),
    }


def connected_components(graph: AssocGraph) -> list[tuple[int, ...]]:
    """Maximal connected node sets, singletons included, ordered by smallest id."""
    parent = {n: n for n in graph.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in graph.edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, list[int]] = {}
    for n in graph.nodes:
        comps.setdefault(find(n), []).append(n)
    return sorted((tuple(sorted(c)) for c in comps.values()), key=lambda c: c[0])


def _group(kind, members, page, sources) -> StructureGroup:
    runs, widgets = set(), set()
    for m in members:
        e = page.element(m)
        if e.kind == ElementKind.WIDGET:
            widgets.add(m)
        elif e.kind == ElementKind.TEXTRUN:
            runs.add(m)
        else:
            runs.update(sources[m])
    boxes = [page.element(m).bbox for m in members]
    return StructureGroup(kind, tuple(sorted(members)), tuple(sorted(runs)), tuple(sorted(widgets)), union_bbox(boxes))


def assemble(
    components: Mapping[GroupKind, Sequence[tuple[int, ...]]],
    step,
    page: FormPage,
    sources: Mapping[int, Iterable[int]] | None = None,
) -> list[StructureGroup]:
    """Turn graph components into groups decomposed to textruns and widgets.

    ``sources`` maps step-2 textblock ids to their textruns.  Without it a
    textblock element counts as its own constituent.
    """
    step = Step(step)
    if step == Step.STEP1:
        return [_group(GroupKind.TEXTBLOCK, c, page, {}) for c in components[GroupKind.TEXTBLOCK]]
    srcs = {e.id: (e.id,) for e in page.of_kind(ElementKind.TEXTBLOCK)}
    if sources is not None:
        srcs.update({k: tuple(v) for k, v in sources.items()})

    def split(c):
        t1 = [m for m in c if page.element(m).kind != ElementKind.WIDGET]
        return t1, [m for m in c if m not in t1]

    groups = []
    for kind in (GroupKind.TEXTFIELD, GroupKind.CHOICEFIELD):
        for c in components[kind]:
            t1, w = split(c)
            if t1 and w:
                groups.append(_group(kind, c, page, srcs))
    choice_widgets = {}
    for c in components[GroupKind.CHOICEFIELD]:
        t1, w = split(c)
        if t1 and w:
            for m in t1:
                choice_widgets[m] = w
    for c in components[GroupKind.CHOICEGROUP]:
        t1, w = split(c)
        if len(t1) < 2:
            continue
        members = set(c)
        for m in t1:
            members.update(choice_widgets.get(m, ()))
        groups.append(_group(GroupKind.CHOICEGROUP, tuple(members), page, srcs))
    return groups


def group_page(results, page: FormPage, step, sources=None, threshold: float = 0.5) -> list[StructureGroup]:
    graphs = build_graph(results, page, step, threshold)
    return assemble({k: connected_components(g) for k, g in graphs.items()}, step, page, sources)


def groups_to_annotations(groups: Sequence[StructureGroup], page: FormPage) -> tuple[GroupAnnotation, ...]:
    """Predicted groups in the annotation schema over textrun and widget ids.

    Captions and titles are named by their lowest textrun id, the same
    convention the generator uses.
    """
    anns = []
    gid = 0
    tb_of = {}
    for g in groups:
        if g.kind == GroupKind.TEXTBLOCK:
            anns.append(GroupAnnotation(g.kind, g.constituent_textrun_ids, gid, predicted=True))
            for r in g.constituent_textrun_ids:
                tb_of[r] = g.constituent_textrun_ids
            gid += 1
    choice_ids = {}
    for g in groups:
        if g.kind not in (GroupKind.TEXTFIELD, GroupKind.CHOICEFIELD):
            continue
        members = g.constituent_textrun_ids + g.constituent_widget_ids
        caption = min(g.constituent_textrun_ids) if g.constituent_textrun_ids else None
        anns.append(GroupAnnotation(g.kind, members, gid, caption_id=caption, predicted=True))
        if g.kind == GroupKind.CHOICEFIELD:
            choice_ids[gid] = anns[-1]
        gid += 1
    for g in groups:
        if g.kind != GroupKind.CHOICEGROUP:
            continue
        members = set(g.constituent_textrun_ids) | set(g.constituent_widget_ids)
        children = [a for a in choice_ids.values() if set(a.member_ids) <= members]
        covered = set().union(*(a.member_ids for a in children)) if children else set()
        rest = sorted(set(g.constituent_textrun_ids) - covered)
        title = rest[0] if rest else None
        expected = covered | set(tb_of.get(title, (title,)) if title is not None else ())
        child_ids = tuple(a.group_id for a in children) if expected == members else None
        if child_ids is None:
            title = None
        anns.append(GroupAnnotation(g.kind, tuple(members), gid, title_id=title, child_group_ids=child_ids, predicted=True))
        gid += 1
    return tuple(anns)
