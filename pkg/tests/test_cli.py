import json
import subprocess
import sys

import numpy as np
import pytest

from graspsynth.cli import main

FAST = ["--steps", "12", "--restarts", "1", "--object-samples", "512"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["fixtures", "--out", str(root / "data"),
                 "--categories", "wand", "--instances", "3"]) == 0
    return root


def test_fixtures_layout(workspace):
    cat = workspace / "data" / "wand"
    doc = json.loads((cat / "category.json").read_text())
    assert doc["schema"] == "category/1"
    assert doc["template"] == "wand_0.obj"
    assert len(doc["instances"]) == 3
    assert (cat / "demo.json").exists()
    assert (cat / doc["keypoints"]).exists()


def test_contacts_command(workspace, capsys):
    cat = workspace / "data" / "wand"
    out = workspace / "contacts.json"
    code = main(["contacts", "--demo", str(cat / "demo.json"),
                 "--out", str(out), "--samples", "512"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "contacts/1"
    assert len(doc["contact_object"]) > 0
    assert "|O^c|" in capsys.readouterr().out


def test_contacts_missing_file_exit_2(workspace):
    assert main(["contacts", "--demo", str(workspace / "nope.json"),
                 "--out", str(workspace / "x.json")]) == 2


def test_synthesize_and_manifest_determinism(workspace):
    cat = workspace / "data" / "wand"
    args = ["synthesize", "--category", str(cat),
            "--demo", str(cat / "demo.json"), "--hand", "pinch1",
            "--seed", "3", *FAST]
    out1 = workspace / "run1"
    out2 = workspace / "run2"
    assert main([*args, "--out", str(out1)]) == 0
    assert main([*args, "--out", str(out2)]) == 0
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m1["outputs"] == m2["outputs"]
    assert len(m1["outputs"]) == 15
    assert m1["failures"] == []


def test_synthesize_isolates_corrupt_instance(workspace, tmp_path):
    cat = workspace / "data" / "wand"
    broken = tmp_path / "wandx"
    broken.mkdir()
    for f in cat.iterdir():
        if f.is_file():
            (broken / f.name).write_bytes(f.read_bytes())
    (broken / "wand_2.obj").write_text("v 0 0 0\nnot a mesh line\n")
    doc = json.loads((broken / "category.json").read_text())
    out = tmp_path / "iso"
    code = main(["synthesize", "--category", str(broken),
                 "--demo", str(broken / "demo.json"), "--hand", "pinch1",
                 "--seed", "1", *FAST, "--out", str(out)])
    assert code == 0  # >= 1 instance succeeded
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["failures"]) == 1
    assert manifest["failures"][0]["instance"] == "wand_2.obj"
    assert len(manifest["outputs"]) == 10


def test_eval_command(workspace):
    run1 = workspace / "run1"
    cat = workspace / "data" / "wand"
    out = workspace / "metrics.csv"
    code = main(["eval",
                 "--grasp", str(run1 / "wand_0.grasp.json"),
                 str(run1 / "wand_1.grasp.json"),
                 "--hand", "pinch1",
                 "--object", str(cat / "wand_0.obj"),
                 "--truth", str(run1 / "wand_0.contacts.json"),
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].split(",")[0] == "object"


def test_eval_without_truth_leaves_columns_empty(workspace):
    run1 = workspace / "run1"
    cat = workspace / "data" / "wand"
    out = workspace / "metrics_nt.csv"
    assert main(["eval", "--grasp", str(run1 / "wand_0.grasp.json"),
                 "--hand", "pinch1", "--object", str(cat / "wand_0.obj"),
                 "--out", str(out)]) == 0
    header, row = out.read_text().strip().splitlines()
    cols = header.split(",")
    vals = row.split(",")
    assert vals[cols.index("functionality_precision")] == ""
    assert vals[cols.index("hrd")] == ""
    assert vals[cols.index("epsilon")] != ""


def test_export_command(workspace):
    run1 = workspace / "run1"
    cat = workspace / "data" / "wand"
    out = workspace / "viz.ply"
    assert main(["export", "--grasp", str(run1 / "wand_0.grasp.json"),
                 "--hand", "pinch1", "--object", str(cat / "wand_0.obj"),
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert "comment part 0 palm" in text
    assert "comment part" in text
    assert "property int part_id" in text


def test_fit_command(workspace, tmp_path):
    from graspsynth.fixtures import wand_mesh
    from graspsynth.geometry import sample_surface, save_obj, save_ply
    lib_dir = tmp_path / "lib"
    lib_dir.mkdir()
    save_obj(lib_dir / "wand.obj", wand_mesh())
    mesh = wand_mesh()
    lo, hi = mesh.bounds()
    centered = mesh.transformed(np.eye(3), -(lo + hi) / 2)
    samples = sample_surface(centered, n=2048, seed=1)
    keep = samples.normals @ np.array([0.0, 1.0, 0.0]) > 0
    cloud = tmp_path / "cloud.ply"
    save_ply(cloud, samples.points[keep], normals=samples.normals[keep])
    out = tmp_path / "state.json"
    assert main(["fit", "--cloud", str(cloud), "--library", str(lib_dir),
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "objstate/1"
    assert doc["template_id"] == "wand"
    assert abs(doc["s"] - 1.0) < 0.05


def test_empty_cloud_exit_2(tmp_path, workspace):
    from graspsynth.geometry import save_ply
    cloud = tmp_path / "empty.ply"
    save_ply(cloud, np.zeros((0, 3)))
    lib_dir = workspace / "data" / "wand"
    assert main(["fit", "--cloud", str(cloud), "--library", str(lib_dir),
                 "--out", str(tmp_path / "s.json")]) == 2


def test_console_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "graspsynth.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synthesize" in proc.stdout
