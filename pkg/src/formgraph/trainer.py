"""Training loops, inference over a page and the oracle stand-in model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import netcore as nc
from .docmodel import ElementKind, FormPage, GroupAnnotation, GroupKind, atomic_write
from .evaluator import EvalReport, groups_from_page, strict_match
from .grouper import StructureGroup, group_page, groups_to_annotations
from .mmpan import MMPAN, AssociationResult, Batch, ModelConfig, Outputs, collate, save_checkpoint
from .patcher import Patch, PatchLabels, Step, build_patch, make_labels
from .synthgen import derive_step2_page, textblock_sources

log = logging.getLogger(__name__)

STEP1_KINDS = (GroupKind.TEXTBLOCK,)
STEP2_KINDS = (GroupKind.TEXTFIELD, GroupKind.CHOICEFIELD, GroupKind.CHOICEGROUP)


class TrainingError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 1000
    eval_every: int = 100
    seed: int = 0
    checkpoint_dir: str | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("max_steps must be >= 0 and eval_every >= 1")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_step1(out: Outputs, batch: Batch) -> nc.Tensor:
    """BCE of the auxiliary head plus BCE of the decoder head."""
    valid = batch.valid > 0
    aux = nc.bce(out.aux["tb"], batch.tb[valid])
    seq = nc.bce(out.seq["tb"], batch.tb, valid)
    return nc.add(aux, seq)


def loss_step2_terms(out: Outputs, batch: Batch) -> dict[str, nc.Tensor]:
    valid = batch.valid > 0
    return {
        "ce_aux": nc.ce(out.aux["field"], batch.field_class[valid]),
        "ce_seq": nc.ce(out.seq["field"], batch.field_class, valid),
        "bce_aux": nc.bce(out.aux["chgp"], batch.chgp[valid]),
        "bce_seq": nc.bce(out.seq["chgp"], batch.chgp, valid),
    }


def loss_step2(out: Outputs, batch: Batch) -> nc.Tensor:
    """Field cross entropy and choice-group BCE, each for both branches."""
    t = loss_step2_terms(out, batch)
    return nc.add(nc.add(t["ce_aux"], t["ce_seq"]), nc.add(t["bce_aux"], t["bce_seq"]))


def loss_for(step) -> callable:
    return loss_step1 if Step(step) == Step.STEP1 else loss_step2


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass
class PageView:
    """A gold page alongside the element view one pipeline step consumes."""

    gold: FormPage
    view: FormPage
    sources: dict[int, tuple[int, ...]] | None = None


def step_view(page: FormPage, step) -> PageView:
    """Tagged input for ``step``: raw elements for step 1, tagged textblocks for step 2."""
    step = Step(step)
    if step == Step.STEP1:
        if not page.groups(GroupKind.TEXTBLOCK):
            raise TrainingError(f"page {page.page_id!r} has no textblock annotations for step 1")
        return PageView(page, page)
    if page.of_kind(ElementKind.TEXTBLOCK):
        raise TrainingError(f"page {page.page_id!r}: step 2 expects a textrun page with textblock annotations")
    if not page.groups(GroupKind.TEXTBLOCK) or not (page.groups(GroupKind.TEXTFIELD) or page.groups(GroupKind.CHOICEFIELD)):
        raise TrainingError(f"page {page.page_id!r} lacks the annotations step 2 trains on")
    return PageView(page, derive_step2_page(page), textblock_sources(page))


def references(page: FormPage, step) -> list[int]:
    kind = ElementKind.TEXTRUN if Step(step) == Step.STEP1 else ElementKind.TEXTBLOCK
    return sorted(e.id for e in page.of_kind(kind))


def build_samples(views: Sequence[PageView], cfg: ModelConfig) -> list[tuple[FormPage, Patch, PatchLabels]]:
    """One sample per reference, ordered by (page_id, reference_id)."""
    samples = []
    for v in sorted(views, key=lambda v: v.view.page_id):
        for ref in references(v.view, cfg.step):
            patch = build_patch(v.view, ref, cfg)
            samples.append((v.view, patch, make_labels(v.view, patch, cfg.step)))
    return samples


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


class OracleModel:
    """Stands in for a trained network by emitting the gold labels as predictions."""

    needs_rasters = False

    def __init__(self, gold: FormPage, cfg: ModelConfig):
        self.cfg = cfg
        self.gold = gold if Step(cfg.step) == Step.STEP1 else derive_step2_page(gold)

    def associate(self, page: FormPage, patches: Sequence[Patch], batch_size: int = 16) -> list[AssociationResult]:
        out = []
        for p in patches:
            lab = make_labels(self.gold, p, self.cfg.step)
            r = AssociationResult(p.reference_id, p.candidate_ids, p.valid_mask.copy())
            if lab.step == Step.STEP1:
                r.aux_tb_prob = r.seq_tb_prob = lab.tb_assoc.copy()
            else:
                r.aux_field_probs = r.seq_field_probs = np.eye(3)[lab.field_class]
                r.aux_chgp_prob = r.seq_chgp_prob = lab.chgp_assoc.copy()
            out.append(r)
        return out


def _patches(page: FormPage, model, step) -> list[Patch]:
    render = getattr(model, "needs_rasters", True)
    return [build_patch(page, ref, model.cfg, render=render) for ref in references(page, step)]


def _associate(page: FormPage, model, step, threshold: float, sources=None) -> list[StructureGroup]:
    if Step(model.cfg.step) != Step(step):
        raise ValueError(f"model was configured for step {model.cfg.step}, not step {int(step)}")
    results = model.associate(page, _patches(page, model, step))
    return group_page(results, page, step, sources, threshold)


def elementary_view(page: FormPage) -> FormPage:
    """Textruns and widgets only, with no annotations."""
    elems = tuple(e for e in page.elements if e.kind != ElementKind.TEXTBLOCK)
    return page.replace(elements=elems, annotations=())


def infer_page(page: FormPage, step1_model, step2_model=None, threshold: float = 0.5) -> list[StructureGroup]:
    """Predicted textblocks, then fields and choice groups over those textblocks."""
    raw = elementary_view(page)
    blocks = _associate(raw, step1_model, Step.STEP1, threshold)
    if step2_model is None:
        return blocks
    tb_anns = tuple(GroupAnnotation(GroupKind.TEXTBLOCK, g.constituent_textrun_ids, i) for i, g in enumerate(blocks))
    tagged = raw.replace(annotations=tb_anns)
    view = derive_step2_page(tagged)
    sources = textblock_sources(tagged)
    return blocks + _associate(view, step2_model, Step.STEP2, threshold, sources)


def predict_page(page: FormPage, step1_model, step2_model=None, threshold: float = 0.5) -> FormPage:
    """``page`` with its annotations replaced by the predicted groups."""
    raw = elementary_view(page)
    groups = infer_page(raw, step1_model, step2_model, threshold)
    return raw.replace(annotations=groups_to_annotations(groups, raw))


def evaluate_view(model, views: Sequence[PageView], threshold: float = 0.5) -> EvalReport:
    """Strict report of one step's groups, computed against gold textblocks for step 2."""
    step = Step(model.cfg.step)
    kinds = STEP1_KINDS if step == Step.STEP1 else STEP2_KINDS
    total = EvalReport()
    for v in views:
        pred = _associate(v.view, model, step, threshold, v.sources)
        gold = [g for g in groups_from_page(v.gold) if g.kind in kinds]
        total = total + strict_match(pred, gold)
    return total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MMPAN
    losses: list[float] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def _metrics_line(step: int, loss: float, report: EvalReport, kinds) -> dict:
    return {
        "step": step,
        "loss": loss,
        "recall": {k.value: report.recall(k) for k in kinds},
        "precision": {k.value: report.precision(k) for k in kinds},
    }


def train(pages: Sequence[FormPage], model_cfg: ModelConfig, train_cfg: TrainConfig, model: MMPAN | None = None) -> TrainResult:
    """Adam with teacher forcing over one sample per reference element.

    Every ``eval_every`` steps the strict metric on ``pages`` is logged and a
    checkpoint written; the final step is always checkpointed.
    """
    step_kind = Step(model_cfg.step)
    kinds = STEP1_KINDS if step_kind == Step.STEP1 else STEP2_KINDS
    views = [step_view(p, step_kind) for p in pages]
    samples = build_samples(views, model_cfg)
    if not samples:
        raise TrainingError("no training patches: the pages contain no reference elements")
    model = model or MMPAN(model_cfg, seed=train_cfg.seed)
    params = model.params()
    loss_fn = loss_for(step_kind)
    rng = np.random.default_rng(train_cfg.seed)
    ckdir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model)
    bs = train_cfg.batch_size

    def checkpoint(step):
        if ckdir is not None:
            path = ckdir / f"step{step}.ckpt"
            save_checkpoint(model, path)
            result.checkpoints.append(path)

    step = 0
    while step < train_cfg.max_steps:
        order = rng.permutation(len(samples))
        for start in range(0, len(order), bs):
            step += 1
            batch = collate([samples[i] for i in order[start:start + bs]])
            try:
                out = model.forward(batch, teacher_forcing=True)
                loss = loss_fn(out, batch)
                nc.backward(loss)
            except nc.NonFiniteError as exc:
                raise TrainingDiverged(f"step {step}: non-finite values in op '{exc.op}'") from exc
            nc.adam_step(params, train_cfg.lr, step)
            for p in params:
                if not np.isfinite(p.data).all():
                    raise TrainingDiverged(f"step {step}: parameter '{p.name}' became non-finite")
            value = float(loss.data)
            result.losses.append(value)
            if step % train_cfg.eval_every == 0:
                report = evaluate_view(model, views, train_cfg.threshold)
                line = _metrics_line(step, value, report, kinds)
                result.metrics.append(line)
                log.info("step %d loss %.5f %s", step, value, line["recall"])
                if ckdir is not None:
                    atomic_write(ckdir / "metrics.jsonl", "".join(json.dumps(m) + "\n" for m in result.metrics))
                checkpoint(step)
            elif step == train_cfg.max_steps:
                checkpoint(step)
            if step >= train_cfg.max_steps:
                break
    return result
