import json

import numpy as np
import pytest

from graspsynth.contact import (bundle_from_dict, load_demo, save_demo)
from graspsynth.correspondence import dsc_from_dict
from graspsynth.errors import SchemaError
from graspsynth.fit import state_from_dict
from graspsynth.fixtures import cylinder_mesh
from graspsynth.geometry import save_obj
from graspsynth.hands import (builtin_hand, grasp_from_dict,
                              handspec_from_dict, make_grasp, save_handspec)
from graspsynth.metrics import report_from_dict
from graspsynth.pipeline import RunConfig


@pytest.mark.parametrize("loader,schema", [
    (handspec_from_dict, "handspec/1"),
    (grasp_from_dict, "grasp/1"),
    (bundle_from_dict, "contacts/1"),
    (dsc_from_dict, "dsc/1"),
    (state_from_dict, "objstate/1"),
    (report_from_dict, "metrics/1"),
])
def test_loaders_reject_wrong_schema(loader, schema):
    with pytest.raises(SchemaError):
        loader({"schema": "bogus/9"})


def test_runconfig_rejects_unknown_keys():
    with pytest.raises(SchemaError):
        RunConfig.from_dict({"schema": "config/1", "bogus_knob": 3})
    with pytest.raises(SchemaError):
        RunConfig.from_dict({"schema": "config/1", "restarts": 0})


def test_runconfig_roundtrip(tmp_path):
    cfg = RunConfig(seed=9, restarts=2, steps=50)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = RunConfig.from_file(path)
    assert back.seed == 9 and back.restarts == 2 and back.steps == 50
    assert back.weights.lam1 == 5.0


def test_demo_roundtrip(tmp_path):
    spec = builtin_hand("pinch1")
    mesh = cylinder_mesh(radius=2.0, height=8.0)
    save_obj(tmp_path / "object.obj", mesh)
    save_handspec(tmp_path / "hand.json", spec)
    grasp = make_grasp(spec, q=[0.2, 0.2],
                       translation=np.array([0.0, 6.0, 0.0]))
    save_demo(tmp_path / "demo.json", "object.obj", "hand.json", grasp,
              note="test")
    demo, spec2, grasp2 = load_demo(tmp_path / "demo.json")
    assert spec2.name == "pinch1"
    assert np.allclose(grasp2.q, grasp.q)
    assert set(demo.segments) == {spec.links[i].name
                                  for i in spec.segment_links()}
    assert set(demo.task_points) == {"thumb", "index"}
    assert len(demo.anchors) == len(spec.anchors)


def test_demo_requires_schema(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"schema": "nope/1"}))
    with pytest.raises(SchemaError):
        load_demo(tmp_path / "bad.json")


def test_grasp_flags_roundtrip():
    spec = builtin_hand("pinch1")
    g = make_grasp(spec)
    g.flags.append("infeasible")
    from graspsynth.hands import grasp_to_dict
    doc = grasp_to_dict(g, hand="pinch1", provenance={"source": "test"})
    back = grasp_from_dict(doc)
    assert back.flags == ["infeasible"]
    assert doc["provenance"] == {"source": "test"}
