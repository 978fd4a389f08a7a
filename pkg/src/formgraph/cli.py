"""Command-line entry point: ``formgraph synth|train|infer|eval|render``.

Settings come from an optional INI file (sections ``[synth]``, ``[model]``
and ``[train]``) and are overridden by flags.  ``FORMGRAPH_THREADS`` caps the
BLAS thread pool; it has to be read before numpy is imported.
"""

from __future__ import annotations

import os
import sys

_threads = os.environ.get("FORMGRAPH_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import configparser  # noqa: E402
import dataclasses  # noqa: E402
import io  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

from .docmodel import ElementKind, FormPage, GroupKind, atomic_write, load_pages, save_pages  # noqa: E402

COLORS = {
    GroupKind.TEXTBLOCK: (220, 30, 30),
    GroupKind.TEXTFIELD: (220, 30, 30),
    GroupKind.CHOICEFIELD: (30, 170, 30),
    GroupKind.CHOICEGROUP: (30, 60, 220),
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(" ", "").split(","))
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if raw.lower() in ("", "none"):
        return None
    return raw


def load_config(path: str | None) -> dict[str, dict]:
    """Section -> {key: value} with keys checked against the dataclass fields."""
    from .mmpan import ModelConfig
    from .synthgen import GenConfig
    from .trainer import TrainConfig

    known = {"synth": GenConfig(), "model": ModelConfig(), "train": TrainConfig()}
    out: dict[str, dict] = {k: {} for k in known}
    if path is None:
        return out
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise CliError(f"{path}: {exc}".replace("\n", " ")) from exc
    for section in parser.sections():
        if section not in known:
            raise CliError(f"{path}: unknown section [{section}]")
        defaults = known[section]
        names = {f.name for f in dataclasses.fields(defaults)}
        if section == "model":
            names.add("preset")
        for key, raw in parser.items(section):
            if key not in names:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            default = "desk" if key == "preset" else getattr(defaults, key)
            try:
                out[section][key] = _parse_value(raw, default)
            except ValueError as exc:
                raise CliError(f"{path}: [{section}] {key}: {exc}") from exc
    return out


def _merge(base: dict, **flags) -> dict:
    merged = dict(base)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} {path!r} does not exist")
    return p


def _need_parent(path: str) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise CliError(f"output directory {str(p.parent)!r} does not exist")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    from .synthgen import GenConfig, generate_pages

    out = _need_parent(args.out)
    settings = _merge(cfg["synth"], seed=args.seed, pages=args.pages)
    pages = generate_pages(GenConfig(**settings))
    save_pages(pages, out)
    counts = {k: sum(len(p.groups(k)) for p in pages) for k in GroupKind}
    counts_el = {k: sum(len(p.of_kind(k)) for p in pages) for k in (ElementKind.TEXTRUN, ElementKind.WIDGET)}
    print(f"pages        {len(pages)}")
    for k, v in {**counts_el, **counts}.items():
        print(f"{k.value:<12} {v}")
    return 0


def cmd_train(args, cfg) -> int:
    from .mmpan import preset
    from .trainer import TrainConfig, train

    data = _need_file(args.data, "dataset")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise CliError(f"--out {args.out!r} is not a directory")
    _need_parent(str(out))
    model_settings = dict(cfg["model"])
    name = args.preset or model_settings.pop("preset", "desk")
    model_settings.pop("preset", None)
    model_settings.pop("step", None)
    model_cfg = preset(name, args.step, **model_settings)
    settings = _merge(
        cfg["train"],
        lr=args.lr,
        batch_size=args.batch_size,
        max_steps=args.max_steps,
        eval_every=args.eval_every,
        seed=args.seed,
    )
    settings["checkpoint_dir"] = str(out)
    pages = load_pages(data)
    result = train(pages, model_cfg, TrainConfig(**settings))
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained step {args.step} for {len(result.losses)} steps, final loss {final:.5f}")
    for line in result.metrics[-1:]:
        print("recall    " + " ".join(f"{k}={v:.4f}" for k, v in line["recall"].items()))
        print("precision " + " ".join(f"{k}={v:.4f}" for k, v in line["precision"].items()))
    return 0


def _load_model(path: str, step: int):
    from .mmpan import load_checkpoint

    model = load_checkpoint(_need_file(path, "checkpoint"))
    if model.cfg.step != step:
        raise CliError(f"{path} holds a step {model.cfg.step} model, expected step {step}")
    return model


def cmd_infer(args, cfg) -> int:
    from .trainer import predict_page

    data = _need_file(args.data, "dataset")
    _need_file(args.ckpt1, "checkpoint")
    if args.ckpt2:
        _need_file(args.ckpt2, "checkpoint")
    out = _need_parent(args.out)
    m1 = _load_model(args.ckpt1, 1)
    m2 = _load_model(args.ckpt2, 2) if args.ckpt2 else None
    preds = [predict_page(p, m1, m2, args.threshold) for p in load_pages(data)]
    save_pages(preds, out)
    print(f"wrote {len(preds)} predicted pages to {out}")
    return 0


def cmd_eval(args, cfg) -> int:
    from .evaluator import evaluate_pages

    pred = load_pages(_need_file(args.pred, "prediction file"))
    gold = load_pages(_need_file(args.gold, "gold file"))
    if args.out:
        _need_parent(args.out)
    report = evaluate_pages(pred, gold, args.metric, args.threshold)
    print(report.table())
    if args.out:
        atomic_write(args.out, report.to_json() + "\n")
    return 0


def render_page(page: FormPage, predicted: FormPage | None = None):
    """Page drawing with predicted group outlines; returns a PIL image."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (max(1, round(page.width)), max(1, round(page.height))), "white")
    draw = ImageDraw.Draw(img)
    for e in page.elements:
        b = e.bbox
        box = [b.left, b.top, b.right - 1, b.bottom - 1]
        if e.kind == ElementKind.WIDGET:
            draw.rectangle(box, outline=(90, 90, 90))
        elif e.kind == ElementKind.TEXTRUN:
            draw.rectangle(box, fill=(200, 200, 200))
    if predicted is not None:
        for a in predicted.annotations:
            members = [predicted.element(m).bbox for m in a.member_ids]
            left = min(b.left for b in members)
            top = min(b.top for b in members)
            right = max(b.right for b in members)
            bottom = max(b.bottom for b in members)
            pad = 2 if a.kind == GroupKind.CHOICEGROUP else 1
            draw.rectangle([left - pad, top - pad, right - 1 + pad, bottom - 1 + pad], outline=COLORS[a.kind], width=2)
    return img


def cmd_render(args, cfg) -> int:
    data = {p.page_id: p for p in load_pages(_need_file(args.data, "dataset"))}
    preds = {p.page_id: p for p in load_pages(_need_file(args.pred, "prediction file"))} if args.pred else {}
    out = _need_parent(args.out)
    if args.page not in data:
        raise CliError(f"page {args.page!r} not in {args.data}")
    if args.pred and args.page not in preds:
        raise CliError(f"page {args.page!r} not in {args.pred}")
    img = render_page(data[args.page], preds.get(args.page))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write(out, buf.getvalue())
    print(f"wrote {img.width}x{img.height} PNG to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formgraph", description="Form structure extraction by patch association.")
    parser.add_argument("--config", help="INI file with [synth], [model] and [train] sections")
    parser.add_argument("--seed", type=int, help="seed for every random choice")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pages", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the step 1 or step 2 model")
    p.add_argument("--step", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--out", required=True, help="directory for checkpoints and metrics.jsonl")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict groups with trained checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt1", required=True)
    p.add_argument("--ckpt2")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metric", choices=("strict", "iou"), default="strict")
    p.add_argument("--threshold", type=float, default=0.40, help="IoU threshold")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw one page with its predicted groups")
    p.add_argument("--data", required=True)
    p.add_argument("--pred")
    p.add_argument("--page", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print(f"formgraph: error: FORMGRAPH_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config is not None:
            _need_file(args.config, "config file")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (CliError, OSError, ValueError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"formgraph: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
