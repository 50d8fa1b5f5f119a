"""handspec/1 and grasp/1 document IO (JSON)."""

import json

import numpy as np

from .. import transforms as tf
from ..errors import SchemaError
from ..geometry import Primitive
from .model import Anchor, FingertipFrame, Grasp, HandSpec, Link

HANDSPEC_SCHEMA = "handspec/1"
GRASP_SCHEMA = "grasp/1"


def _quat_of(rotation_matrix):
    return [float(v) for v in tf.matrix_to_quat(rotation_matrix)]


def handspec_to_dict(spec):
    links = []
    for link in spec.links:
        entry = {
            "name": link.name,
            "parent": spec.links[link.parent].name if link.parent >= 0 else None,
            "origin": {
                "rotation": _quat_of(link.origin_rotation),
                "translation": [float(v) for v in link.origin_translation],
            },
            "joint": {"type": link.joint_type},
            "primitives": [
                {
                    "kind": p.kind,
                    "params": [float(v) for v in p.params],
                    "rotation": _quat_of(p.rotation),
                    "translation": [float(v) for v in p.translation],
                }
                for p in link.primitives
            ],
            "samples": link.sample_count,
        }
        if link.joint_type == "revolute":
            entry["joint"].update({
                "axis": [float(v) for v in link.axis],
                "limits": [float(link.limits[0]), float(link.limits[1])],
                "flexion_sign": float(link.flexion_sign),
            })
        links.append(entry)

    doc = {
        "schema": HANDSPEC_SCHEMA,
        "name": spec.name,
        "links": links,
        "anchors": [{"name": a.name, "link": spec.links[a.link].name,
                     "local": [float(v) for v in a.local]} for a in spec.anchors],
        "fingertips": [{"name": f.name, "link": spec.links[f.link].name,
                        "local": [float(v) for v in f.local]}
                       for f in spec.fingertip_frames],
        "human_joint_map": spec.human_joint_map,
    }
    if spec.coupling.shape != (spec.dof, spec.dof) or not np.allclose(
            spec.coupling, np.eye(spec.dof)):
        doc["coupling"] = {
            "actuated": [{"name": n, "limits": [float(lo), float(hi)]}
                         for n, (lo, hi) in zip(spec.actuated_names,
                                                spec.actuated_limits)],
            "rows": [[float(v) for v in row] for row in spec.coupling],
        }
    return doc


def handspec_from_dict(doc):
    if doc.get("schema") != HANDSPEC_SCHEMA:
        raise SchemaError(f"expected {HANDSPEC_SCHEMA}, got {doc.get('schema')!r}")
    name_to_index = {}
    links = []
    for entry in doc["links"]:
        parent_name = entry.get("parent")
        if parent_name is None:
            parent = -1
        elif parent_name in name_to_index:
            parent = name_to_index[parent_name]
        else:
            raise SchemaError(f"link {entry['name']}: unknown parent {parent_name}")
        joint = entry["joint"]
        link = Link(
            name=entry["name"],
            parent=parent,
            origin_rotation=tf.quat_to_matrix(np.asarray(
                entry["origin"]["rotation"], float)),
            origin_translation=np.asarray(entry["origin"]["translation"], float),
            joint_type=joint["type"],
            primitives=[
                Primitive(p["kind"], tuple(p["params"]),
                          rotation=tf.quat_to_matrix(np.asarray(p["rotation"], float)),
                          translation=np.asarray(p["translation"], float))
                for p in entry.get("primitives", [])
            ],
            sample_count=int(entry.get("samples", 0)),
        )
        if joint["type"] == "revolute":
            link.axis = np.asarray(joint["axis"], float)
            link.limits = (float(joint["limits"][0]), float(joint["limits"][1]))
            link.flexion_sign = float(joint.get("flexion_sign", 1.0))
        name_to_index[entry["name"]] = len(links)
        links.append(link)

    anchors = [Anchor(a["name"], name_to_index[a["link"]],
                      np.asarray(a["local"], float)) for a in doc.get("anchors", [])]
    fingertips = [FingertipFrame(f["name"], name_to_index[f["link"]],
                                 np.asarray(f["local"], float))
                  for f in doc.get("fingertips", [])]

    coupling = actuated_names = actuated_limits = None
    if "coupling" in doc:
        c = doc["coupling"]
        actuated_names = [a["name"] for a in c["actuated"]]
        actuated_limits = [a["limits"] for a in c["actuated"]]
        coupling = np.asarray(c["rows"], float)

    return HandSpec(doc["name"], links, anchors, fingertips,
                    coupling=coupling, actuated_names=actuated_names,
                    actuated_limits=actuated_limits,
                    human_joint_map=doc.get("human_joint_map", {}))


def save_handspec(path, spec):
    with open(path, "w") as fh:
        json.dump(handspec_to_dict(spec), fh, indent=1)


def load_handspec(path):
    with open(path) as fh:
        return handspec_from_dict(json.load(fh))


def grasp_to_dict(grasp, hand=None, provenance=None):
    doc = {
        "schema": GRASP_SCHEMA,
        "q": [float(v) for v in grasp.q],
        "wrist": {
            "rotation": [float(v) for v in grasp.rotation],
            "translation": [float(v) for v in grasp.translation],
        },
        "flags": list(grasp.flags),
    }
    if hand is not None:
        doc["hand"] = hand
    if provenance:
        doc["provenance"] = provenance
    return doc


def grasp_from_dict(doc):
    if doc.get("schema") != GRASP_SCHEMA:
        raise SchemaError(f"expected {GRASP_SCHEMA}, got {doc.get('schema')!r}")
    return Grasp(np.asarray(doc["q"], float),
                 np.asarray(doc["wrist"]["rotation"], float),
                 np.asarray(doc["wrist"]["translation"], float),
                 flags=list(doc.get("flags", [])))


def save_grasp(path, grasp, hand=None, provenance=None):
    with open(path, "w") as fh:
        json.dump(grasp_to_dict(grasp, hand, provenance), fh, indent=1)


def load_grasp(path):
    with open(path) as fh:
        return grasp_from_dict(json.load(fh))
