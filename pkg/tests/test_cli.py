import json
import subprocess
import sys

import numpy as np
import pytest

from augface.cli import main
from augface.features import read_embeddings, read_pca, write_embeddings
from augface.landmarks import write_landmarks
from augface.assets import write_image


@pytest.fixture
def face_files(tmp_path, frontal_face):
    write_image(tmp_path / "f.png", frontal_face.image)
    write_landmarks(tmp_path / "f.pts", frontal_face.landmarks)
    return tmp_path / "f.png", tmp_path / "f.pts"


def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("augface ")
    assert len(out.splitlines()) > 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "augface", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "augface" in r.stdout


def test_usage_errors(capsys, tmp_path):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["augment", "--in", str(tmp_path)]) == 1  # missing --out
    assert main(["augment", "--in", str(tmp_path), "--out", str(tmp_path / "o"), "--workers", "0"]) == 1
    assert main(["pose", "--image", str(tmp_path / "nope.png"), "--landmarks", "x.pts"]) == 1
    assert "error" in capsys.readouterr().err


def test_pose(face_files, capsys):
    img, pts = face_files
    assert main(["pose", "--image", str(img), "--landmarks", str(pts)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert abs(data["yaw"]) < 1.0 and data["reliable"]


def test_render(face_files, tmp_path):
    img, pts = face_files
    out = tmp_path / "views"
    assert main(["render", "--image", str(img), "--landmarks", str(pts), "--out", str(out),
                 "--yaws", "0,-40"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["f_-40.png", "f_0.png"]


def test_bench_fusion(tmp_path, capsys):
    p = tmp_path / "s.csv"
    p.write_text("set,score\na,0.2\na,0.8\nb,0.1\nb,0.4\nb,0.35\n")
    assert main(["bench-fusion", "--scores", str(p)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].split()[0] == "a"
    assert float(lines[1].split()[-1]) == pytest.approx(0.759492, abs=1e-6)
    p.write_text("value\n1\n")
    assert main(["bench-fusion", "--scores", str(p)]) == 1


def test_pca_command(tmp_path, rng):
    write_embeddings(tmp_path / "e.bin", {f"k{i}": rng.normal(size=5) for i in range(12)})
    assert main(["pca", "--embeddings", str(tmp_path / "e.bin"), "--out", str(tmp_path / "p.bin")]) == 0
    assert read_pca(tmp_path / "p.bin").components.shape == (5, 5)


def test_config_defaults(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[bench-fusion]\nscores = nope.csv\n")
    assert main(["--config", str(cfg), "bench-fusion"]) == 1  # default applied, file missing
    assert "nope.csv" in capsys.readouterr().err
    cfg.write_text("[bench-fusion]\nbogus = 1\n")
    assert main(["--config", str(cfg), "bench-fusion", "--scores", "x"]) == 1


def test_augment_workers_identical(tmp_path):
    assert main(["synth-dataset", "--out", str(tmp_path / "in"), "--subjects", "2", "--images", "1",
                 "--seed", "3"]) == 0
    for w in (1, 2):
        assert main(["augment", "--in", str(tmp_path / "in"), "--out", str(tmp_path / f"o{w}"),
                     "--seed", "7", "--no-expression", "--workers", str(w)]) == 0
    m1 = (tmp_path / "o1" / "manifest.jsonl").read_bytes()
    assert m1 == (tmp_path / "o2" / "manifest.jsonl").read_bytes()
    assert len(m1.splitlines()) == 8


def test_benchmark_pipeline(tmp_path, capsys):
    b = tmp_path / "bench"
    assert main(["synth-benchmark", "--out", str(b), "--identities", "3", "--train", "2", "--seed", "1"]) == 0
    assert main(["embed", "--images", str(b / "images"), "--protocol", str(b), "--out", str(tmp_path / "e.bin"),
                 "--yaws-out", str(tmp_path / "yaws.csv")]) == 0
    table = read_embeddings(tmp_path / "e.bin")
    assert any(k.endswith("#r75") for k in table)
    report = tmp_path / "r.json"
    assert main(["eval", "--protocol", str(b), "--embeddings", str(tmp_path / "e.bin"),
                 "--yaws", str(tmp_path / "yaws.csv"), "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["rendered"] and set(data["cmc"]) == {"1", "5", "10"}
    first = report.read_bytes()
    assert main(["eval", "--protocol", str(b), "--embeddings", str(tmp_path / "e.bin"),
                 "--yaws", str(tmp_path / "yaws.csv"), "--report", str(report)]) == 0
    assert report.read_bytes() == first
    rows = (b / "templates.csv").read_text().splitlines()
    for tid in ("id000_p", "id000_g"):
        (tmp_path / f"{tid}.csv").write_text("\n".join([rows[0]] + [r for r in rows if r.startswith(tid + ",")]) + "\n")
    capsys.readouterr()
    assert main(["match", "--probe-template", str(tmp_path / "id000_p.csv"),
                 "--gallery-template", str(tmp_path / "id000_g.csv"),
                 "--embeddings", str(tmp_path / "e.bin"), "--yaws", str(tmp_path / "yaws.csv")]) == 0
    assert -1.0 <= float(capsys.readouterr().out) <= 1.0
    assert main(["match", "--probe-template", str(b / "templates.csv"),
                 "--gallery-template", str(tmp_path / "id000_g.csv"),
                 "--embeddings", str(tmp_path / "e.bin")]) == 1
