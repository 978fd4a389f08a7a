import json
import os
import subprocess
import sys

import pytest
from PIL import Image

from formgraph.cli import main
from formgraph.docmodel import load_pages, save_pages

from _support import hand_page


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "data.jsonl"
    assert main(["--seed", "3", "synth", "--out", str(path), "--pages", "2"]) == 0
    return path


def test_synth_is_deterministic_and_prints_counts(tmp_path, data, capsys):
    again = tmp_path / "again.jsonl"
    assert main(["--seed", "3", "synth", "--out", str(again), "--pages", "2"]) == 0
    assert again.read_bytes() == data.read_bytes()
    assert len(data.read_text().splitlines()) == 2
    out = capsys.readouterr().out
    assert "choicegroup" in out and "textrun" in out


def test_synth_zero_pages(tmp_path):
    path = tmp_path / "none.jsonl"
    assert main(["synth", "--out", str(path), "--pages", "0"]) == 0
    assert path.read_bytes() == b""


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[synth]\npages = 3\nseed = 9\nfields_per_page = 1, 2\n")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["--config", str(cfg), "synth", "--out", str(a)]) == 0
    assert len(load_pages(a)) == 3 and load_pages(a)[0].page_id.startswith("synth-9-")
    assert main(["--config", str(cfg), "--seed", "4", "synth", "--out", str(b), "--pages", "1"]) == 0
    assert [p.page_id for p in load_pages(b)] == ["synth-4-00000"]


@pytest.mark.parametrize(
    "text, message",
    [("[synth]\ncolour = red\n", "unknown key 'colour'"), ("[optimiser]\nlr = 1\n", "unknown section"), ("[train]\nlr = fast\n", "lr")],
)
def test_bad_config_is_rejected(tmp_path, capsys, text, message):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    out = tmp_path / "x.jsonl"
    assert main(["--config", str(cfg), "synth", "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("formgraph: error:") and message in err and len(err.strip().splitlines()) == 1
    assert not out.exists()


def test_missing_paths_fail_before_work(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "nope" / "x.jsonl")]) == 1
    assert main(["eval", "--pred", str(tmp_path / "p.jsonl"), "--gold", str(tmp_path / "g.jsonl")]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_train_one_step_then_infer_and_eval(tmp_path, data, capsys):
    ck1, ck2 = tmp_path / "ck1", tmp_path / "ck2"
    assert main(["train", "--step", "1", "--data", str(data), "--out", str(ck1), "--max-steps", "1"]) == 0
    assert main(["train", "--step", "2", "--data", str(data), "--out", str(ck2), "--max-steps", "1"]) == 0
    assert [p.name for p in ck1.glob("*.ckpt")] == ["step1.ckpt"]
    pred = tmp_path / "pred.jsonl"
    args = ["infer", "--data", str(data), "--ckpt1", str(ck1 / "step1.ckpt"), "--out", str(pred)]
    assert main(args + ["--ckpt2", str(ck2 / "step1.ckpt")]) == 0
    first = pred.read_bytes()
    assert main(args + ["--ckpt2", str(ck2 / "step1.ckpt")]) == 0
    assert pred.read_bytes() == first
    lines = [json.loads(line) for line in pred.read_text().splitlines()]
    assert all(a.get("predicted") is True for page in lines for a in page["annotations"])
    assert main(args) == 0
    kinds = {a.kind.value for p in load_pages(pred) for a in p.annotations}
    assert kinds <= {"textblock"}
    report = tmp_path / "r.json"
    assert main(["eval", "--pred", str(pred), "--gold", str(data), "--metric", "iou", "--out", str(report)]) == 0
    assert set(json.loads(report.read_text())) == {"textblock", "textfield", "choicefield", "choicegroup"}


def test_wrong_step_checkpoint(tmp_path, data, capsys):
    ck = tmp_path / "ck"
    assert main(["train", "--step", "2", "--data", str(data), "--out", str(ck), "--max-steps", "1"]) == 0
    rc = main(["infer", "--data", str(data), "--ckpt1", str(ck / "step1.ckpt"), "--out", str(tmp_path / "p.jsonl")])
    assert rc == 1 and "step 2 model" in capsys.readouterr().err


def test_train_missing_annotations_names_step(tmp_path, capsys):
    bare = tmp_path / "bare.jsonl"
    save_pages([hand_page().replace(annotations=())], bare)
    assert main(["train", "--step", "2", "--data", str(bare), "--out", str(tmp_path / "ck")]) == 1
    assert "step 2" in capsys.readouterr().err


def test_eval_identity_and_mismatch(tmp_path, data, capsys):
    assert main(["eval", "--pred", str(data), "--gold", str(data)]) == 0
    table = capsys.readouterr().out
    assert table.count("100.00") == 8
    other = tmp_path / "other.jsonl"
    save_pages([hand_page()], other)
    assert main(["eval", "--pred", str(other), "--gold", str(data)]) == 1
    assert "page ids differ" in capsys.readouterr().err


def test_render(tmp_path, data):
    page = load_pages(data)[0]
    out = tmp_path / "page.png"
    assert main(["render", "--data", str(data), "--pred", str(data), "--page", page.page_id, "--out", str(out)]) == 0
    with Image.open(out) as img:
        assert img.format == "PNG" and img.size == (page.width, page.height)
        colours = {c for _, c in img.getcolors(1 << 16)}
    assert {(220, 30, 30), (30, 170, 30), (30, 60, 220)} <= colours
    bare = tmp_path / "bare.png"
    assert main(["render", "--data", str(data), "--page", page.page_id, "--out", str(bare)]) == 0
    with Image.open(bare) as img:
        assert (220, 30, 30) not in {c for _, c in img.getcolors(1 << 16)}
    assert main(["render", "--data", str(data), "--page", "nope", "--out", str(bare)]) == 1


def test_bad_thread_setting_exits_two(tmp_path):
    env = dict(os.environ, FORMGRAPH_THREADS="many")
    proc = subprocess.run(
        [sys.executable, "-m", "formgraph.cli", "synth", "--out", str(tmp_path / "x.jsonl"), "--pages", "0"],
        env=env, capture_output=True, text=True,
    )
    assert proc.returncode == 2 and "FORMGRAPH_THREADS" in proc.stderr
