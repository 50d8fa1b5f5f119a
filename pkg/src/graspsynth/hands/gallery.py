"""Reference hand models shipped as data files.

Four hands at desk scale, spanning the kinematic range the engine
targets: a 22-DoF five-finger demonstration hand, a 9-DoA coupled
five-finger hand, a chunky 16-DoF four-finger hand, and a 1-DoA
two-finger pinch gripper. Frames: +x distal along the fingers, +y
radial (thumb side), -z palmar. Flexion joints use axis +y so positive
q curls toward the palm.

Run ``python -m graspsynth.hands.gallery`` to regenerate the JSON data
files after editing the builders.
"""

import numpy as np

from .. import transforms as tf
from ..geometry import Primitive
from .model import Anchor, FingertipFrame, HandSpec, Link

Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])
X_AXIS = np.array([1.0, 0.0, 0.0])
_CAPSULE_TO_X = tf.axis_angle_to_matrix(Y_AXIS, np.pi / 2)  # capsule z -> +x

FINGER_ORDER = ("thumb", "index", "middle", "ring", "little")


def _capsule(radius, length):
    """Capsule running from (0,0,0) to (length,0,0) in the link frame."""
    return Primitive("capsule", (radius, length / 2.0),
                     rotation=_CAPSULE_TO_X,
                     translation=np.array([length / 2.0, 0.0, 0.0]))


def _finger_links(name, parent, knuckle_t, dims, radius, knuckle_R=None,
                  abd_limits=(-0.35, 0.35), samples=48,
                  prox_limits=(-0.26, 1.65), mid_limits=(0.0, 1.92),
                  dist_limits=(0.0, 1.4)):
    lp, lm, ld = dims
    links = [
        Link(f"{name}_knuckle", parent,
             knuckle_R if knuckle_R is not None else np.eye(3),
             np.asarray(knuckle_t, float), "revolute", Z_AXIS,
             abd_limits, flexion_sign=0.0),
        Link(f"{name}_proximal", -10, np.eye(3), np.zeros(3), "revolute",
             Y_AXIS, prox_limits, primitives=[_capsule(radius, lp)],
             sample_count=samples),
        Link(f"{name}_middle", -10, np.eye(3), np.array([lp, 0.0, 0.0]),
             "revolute", Y_AXIS, mid_limits,
             primitives=[_capsule(radius * 0.93, lm)], sample_count=samples),
        Link(f"{name}_distal", -10, np.eye(3), np.array([lm, 0.0, 0.0]),
             "revolute", Y_AXIS, dist_limits,
             primitives=[_capsule(radius * 0.87, ld)], sample_count=samples),
    ]
    return links


def _append_chain(links, chain):
    """Append a chain, resolving the -10 placeholder to 'previous link'."""
    start = len(links)
    links.extend(chain)
    for i in range(start, len(links)):
        if links[i].parent == -10:
            links[i].parent = i - 1
    return links


def _finger_anchors(name, dims, radius, links_by_name, with_middle_pad=True,
                    sides=True, back_middle=False):
    lp, lm, ld = dims
    r_d = radius * 0.87
    r_m = radius * 0.93
    anchors = [
        Anchor(f"{name}_tip", links_by_name[f"{name}_distal"],
               np.array([ld, 0.0, -0.5 * r_d])),
        Anchor(f"{name}_distal_pad", links_by_name[f"{name}_distal"],
               np.array([ld / 2, 0.0, -0.85 * r_d])),
        Anchor(f"{name}_proximal_pad", links_by_name[f"{name}_proximal"],
               np.array([lp / 2, 0.0, -0.85 * radius])),
    ]
    if with_middle_pad:
        anchors.append(Anchor(f"{name}_middle_pad",
                              links_by_name[f"{name}_middle"],
                              np.array([lm / 2, 0.0, -0.85 * r_m])))
    if sides:
        anchors += [
            Anchor(f"{name}_distal_left", links_by_name[f"{name}_distal"],
                   np.array([ld / 2, 0.85 * r_d, 0.0])),
            Anchor(f"{name}_distal_back", links_by_name[f"{name}_distal"],
                   np.array([ld / 2, 0.0, 0.85 * r_d])),
            Anchor(f"{name}_middle_left", links_by_name[f"{name}_middle"],
                   np.array([lm / 2, 0.85 * r_m, 0.0])),
        ]
    if back_middle:
        anchors.append(Anchor(f"{name}_middle_back",
                              links_by_name[f"{name}_middle"],
                              np.array([lm / 2, 0.0, 0.85 * r_m])))
    return anchors


FINGER_DIMS = {
    "index": ((4.2, 2.6, 2.2), 0.75),
    "middle": ((4.6, 2.9, 2.4), 0.78),
    "ring": ((4.2, 2.7, 2.3), 0.75),
    "little": ((3.2, 2.1, 1.9), 0.65),
    "thumb": ((3.6, 3.0, 2.6), 1.0),
}

KNUCKLES = {
    "index": (7.8, 2.7, 0.0),
    "middle": (8.0, 0.9, 0.0),
    "ring": (7.8, -0.9, 0.0),
}


def human_hand():
    """Five-finger 22-DoF demonstration skeleton with 41 anchor points."""
    links = [Link("palm", -1, np.eye(3), np.zeros(3), "fixed",
                  primitives=[Primitive("box", (3.5, 3.8, 0.7),
                                        translation=np.array([3.5, 0.0, 0.0]))],
                  sample_count=160)]
    links.append(Link("lf_metacarpal", 0, np.eye(3),
                      np.array([4.6, -2.7, 0.0]), "revolute", X_AXIS,
                      (0.0, 0.5), flexion_sign=0.0,
                      primitives=[Primitive("box", (1.6, 0.8, 0.6),
                                            translation=np.array([1.6, 0.0, 0.0]))],
                      sample_count=48))
    for f in ("index", "middle", "ring"):
        dims, r = FINGER_DIMS[f]
        _append_chain(links, _finger_links(f, 0, KNUCKLES[f], dims, r))
    dims, r = FINGER_DIMS["little"]
    _append_chain(links, _finger_links("little", 1, (3.3, 0.0, 0.0), dims, r))

    # thumb: tilted base, 5 DoF (pronation, abduction, 3 flexions)
    dims, r = FINGER_DIMS["thumb"]
    lp, lm, ld = dims
    base_R = (tf.axis_angle_to_matrix(Z_AXIS, 0.5)
              @ tf.axis_angle_to_matrix(X_AXIS, -1.3))
    n0 = len(links)
    links += [
        Link("thumb_cmc_rot", 0, base_R, np.array([1.5, 3.6, -0.4]),
             "revolute", X_AXIS, (-0.4, 1.3), flexion_sign=0.0),
        Link("thumb_cmc_abd", n0, np.eye(3), np.zeros(3), "revolute",
             Z_AXIS, (-0.6, 0.6), flexion_sign=0.0),
        Link("thumb_proximal", n0 + 1, np.eye(3), np.zeros(3), "revolute",
             Y_AXIS, (-0.3, 1.2), primitives=[_capsule(r, lp)],
             sample_count=48),
        Link("thumb_middle", n0 + 2, np.eye(3), np.array([lp, 0.0, 0.0]),
             "revolute", Y_AXIS, (0.0, 1.1),
             primitives=[_capsule(r * 0.93, lm)], sample_count=48),
        Link("thumb_distal", n0 + 3, np.eye(3), np.array([lm, 0.0, 0.0]),
             "revolute", Y_AXIS, (0.0, 1.3),
             primitives=[_capsule(r * 0.87, ld)], sample_count=48),
    ]

    by_name = {l.name: i for i, l in enumerate(links)}
    anchors = []
    for f in ("index", "middle", "ring", "little"):
        dims, r = FINGER_DIMS[f]
        anchors += _finger_anchors(f, dims, r, by_name,
                                   back_middle=f in ("index", "middle"))
    dims, r = FINGER_DIMS["thumb"]
    anchors += [
        Anchor("thumb_tip", by_name["thumb_distal"],
               np.array([dims[2], 0.0, -0.5 * r * 0.87])),
        Anchor("thumb_distal_pad", by_name["thumb_distal"],
               np.array([dims[2] / 2, 0.0, -0.85 * r * 0.87])),
        Anchor("thumb_proximal_pad", by_name["thumb_proximal"],
               np.array([dims[0] / 2, 0.0, -0.85 * r])),
        Anchor("thumb_distal_left", by_name["thumb_distal"],
               np.array([dims[2] / 2, 0.85 * r * 0.87, 0.0])),
        Anchor("thumb_distal_back", by_name["thumb_distal"],
               np.array([dims[2] / 2, 0.0, 0.85 * r * 0.87])),
    ]
    for k, (ax, ay) in enumerate([(2.2, -2.2), (2.2, 0.0), (2.2, 2.2),
                                  (4.8, -2.2), (4.8, 0.0), (4.8, 2.2)]):
        anchors.append(Anchor(f"palm_{k}", by_name["palm"],
                              np.array([ax, ay, -0.7])))
    assert len(anchors) == 41, len(anchors)

    tips = [FingertipFrame(f, by_name[f"{f}_distal"],
                           np.array([FINGER_DIMS[f][0][2], 0.0, 0.0]))
            for f in FINGER_ORDER]
    spec = HandSpec("human", links, anchors, tips,
                    human_joint_map={l.name: l.name for l in links
                                     if l.joint_type == "revolute"})
    assert spec.dof == 22, spec.dof
    return spec


def coupled_hand():
    """Five-finger 21-DoF hand driven by 9 actuators through linear coupling."""
    s = 0.95  # slightly smaller than the human reference
    links = [Link("palm", -1, np.eye(3), np.zeros(3), "fixed",
                  primitives=[Primitive("box", (3.3, 3.6, 0.65),
                                        translation=np.array([3.3, 0.0, 0.0]))],
                  sample_count=160)]
    knuckles = {
        "index": (7.4, 2.6, 0.0),
        "middle": (7.6, 0.9, 0.0),
        "ring": (7.4, -0.9, 0.0),
        "little": (7.2, -2.6, 0.0),
    }
    for f in ("index", "middle", "ring", "little"):
        (lp, lm, ld), r = FINGER_DIMS[f]
        dims = (lp * s, lm * s, ld * s)
        _append_chain(links, _finger_links(f, 0, knuckles[f], dims, r * s))
    (lp, lm, ld), r = FINGER_DIMS["thumb"]
    dims = (lp * s, lm * s, ld * s)
    base_R = (tf.axis_angle_to_matrix(Z_AXIS, 0.5)
              @ tf.axis_angle_to_matrix(X_AXIS, -1.3))
    n0 = len(links)
    links += [
        Link("thumb_cmc_rot", 0, base_R, np.array([1.4, 3.4, -0.35]),
             "revolute", X_AXIS, (-0.4, 1.3), flexion_sign=0.0),
        Link("thumb_cmc_abd", n0, np.eye(3), np.zeros(3), "revolute",
             Z_AXIS, (-0.6, 0.6), flexion_sign=0.0),
        Link("thumb_proximal", n0 + 1, np.eye(3), np.zeros(3), "revolute",
             Y_AXIS, (-0.3, 1.2), primitives=[_capsule(r * s, dims[0])],
             sample_count=48),
        Link("thumb_middle", n0 + 2, np.eye(3), np.array([dims[0], 0.0, 0.0]),
             "revolute", Y_AXIS, (0.0, 1.1),
             primitives=[_capsule(r * s * 0.93, dims[1])], sample_count=48),
        Link("thumb_distal", n0 + 3, np.eye(3), np.array([dims[1], 0.0, 0.0]),
             "revolute", Y_AXIS, (0.0, 1.3),
             primitives=[_capsule(r * s * 0.87, dims[2])], sample_count=48),
    ]
    by_name = {l.name: i for i, l in enumerate(links)}

    joint_names = [l.name for l in links if l.joint_type == "revolute"]
    actuated = [
        ("thumb_rot", (-0.4, 1.3)),
        ("thumb_flex", (0.0, 1.1)),
        ("spread", (-0.35, 0.35)),
        ("index_proximal", (-0.26, 1.65)),
        ("index_curl", (0.0, 1.75)),
        ("middle_proximal", (-0.26, 1.65)),
        ("middle_curl", (0.0, 1.75)),
        ("ring_curl", (0.0, 1.65)),
        ("little_curl", (0.0, 1.65)),
    ]
    act_index = {name: k for k, (name, _) in enumerate(actuated)}
    C = np.zeros((len(joint_names), len(actuated)))

    def couple(joint, actuator, ratio):
        C[joint_names.index(joint), act_index[actuator]] = ratio

    couple("thumb_cmc_rot", "thumb_rot", 1.0)
    couple("thumb_proximal", "thumb_flex", 1.0)
    couple("thumb_middle", "thumb_flex", 0.8)
    couple("thumb_distal", "thumb_flex", 0.7)
    couple("index_knuckle", "spread", 1.0)
    couple("ring_knuckle", "spread", -0.5)
    couple("little_knuckle", "spread", -1.0)
    couple("index_proximal", "index_proximal", 1.0)
    couple("index_middle", "index_curl", 0.9)
    couple("index_distal", "index_curl", 0.8)
    couple("middle_proximal", "middle_proximal", 1.0)
    couple("middle_middle", "middle_curl", 0.9)
    couple("middle_distal", "middle_curl", 0.8)
    for f in ("ring", "little"):
        couple(f"{f}_proximal", f"{f}_curl", 1.0)
        couple(f"{f}_middle", f"{f}_curl", 0.85)
        couple(f"{f}_distal", f"{f}_curl", 0.7)

    anchors = []
    for f in ("index", "middle", "ring", "little"):
        (lp, lm, ld), r = FINGER_DIMS[f]
        fdims = (lp * s, lm * s, ld * s)
        anchors += _finger_anchors(f, fdims, r * s, by_name,
                                   back_middle=f in ("index", "middle"))
    (tlp, tlm, tld), tr = FINGER_DIMS["thumb"]
    anchors += [
        Anchor("thumb_tip", by_name["thumb_distal"],
               np.array([tld * s, 0.0, -0.5 * tr * s * 0.87])),
        Anchor("thumb_distal_pad", by_name["thumb_distal"],
               np.array([tld * s / 2, 0.0, -0.85 * tr * s * 0.87])),
        Anchor("thumb_proximal_pad", by_name["thumb_proximal"],
               np.array([tlp * s / 2, 0.0, -0.85 * tr * s])),
    ]
    for k, (ax, ay) in enumerate([(2.0, -2.0), (2.0, 0.0), (2.0, 2.0),
                                  (4.4, -2.0), (4.4, 0.0), (4.4, 2.0)]):
        anchors.append(Anchor(f"palm_{k}", by_name["palm"],
                              np.array([ax, ay, -0.65])))

    tips = [FingertipFrame(f, by_name[f"{f}_distal"],
                           np.array([FINGER_DIMS[f][0][2] * s, 0.0, 0.0]))
            for f in FINGER_ORDER]
    human_map = {l.name: l.name for l in links if l.joint_type == "revolute"}
    spec = HandSpec("coupled9", links, anchors, tips,
                    coupling=C, actuated_names=[a for a, _ in actuated],
                    actuated_limits=[lim for _, lim in actuated],
                    human_joint_map=human_map)
    assert spec.dof == 21 and spec.doa == 9, (spec.dof, spec.doa)
    return spec


QUAD_DIMS = {
    "index": ((4.5, 3.0, 2.6), 0.95),
    "middle": ((4.5, 3.0, 2.6), 0.95),
    "ring": ((4.5, 3.0, 2.6), 0.95),
    "thumb": ((4.0, 2.8, 2.4), 1.0),
}


def quad_hand():
    """Four-finger 16-DoF hand with chunky links (no little finger)."""
    links = [Link("palm", -1, np.eye(3), np.zeros(3), "fixed",
                  primitives=[Primitive("box", (3.1, 3.3, 0.9),
                                        translation=np.array([3.1, 0.0, 0.0]))],
                  sample_count=160)]
    for f, y in (("index", 2.2), ("middle", 0.0), ("ring", -2.2)):
        dims, r = QUAD_DIMS[f]
        _append_chain(links, _finger_links(f, 0, (6.6, y, 0.0), dims, r,
                                            samples=56))
    dims, r = QUAD_DIMS["thumb"]
    base_R = (tf.axis_angle_to_matrix(Z_AXIS, 0.9)
              @ tf.axis_angle_to_matrix(X_AXIS, -1.4))
    _append_chain(links, _finger_links(
        "thumb", 0, (1.0, 3.3, -0.7), dims, r, knuckle_R=base_R,
        abd_limits=(-0.5, 0.7), prox_limits=(-0.3, 1.5), samples=56))

    by_name = {l.name: i for i, l in enumerate(links)}
    anchors = []
    for f in ("index", "middle", "ring"):
        dims, r = QUAD_DIMS[f]
        anchors += _finger_anchors(f, dims, r, by_name)
    dims, r = QUAD_DIMS["thumb"]
    anchors += _finger_anchors("thumb", dims, r, by_name,
                               with_middle_pad=False, sides=False)
    anchors += [
        Anchor("thumb_distal_left", by_name["thumb_distal"],
               np.array([dims[2] / 2, 0.85 * r * 0.87, 0.0])),
        Anchor("thumb_distal_back", by_name["thumb_distal"],
               np.array([dims[2] / 2, 0.0, 0.85 * r * 0.87])),
    ]
    for k, (ax, ay) in enumerate([(2.0, -1.8), (2.0, 1.8), (4.2, -1.8),
                                  (4.2, 1.8)]):
        anchors.append(Anchor(f"palm_{k}", by_name["palm"],
                              np.array([ax, ay, -0.9])))

    tips = [FingertipFrame(f, by_name[f"{f}_distal"],
                           np.array([QUAD_DIMS[f][0][2], 0.0, 0.0]))
            for f in ("thumb", "index", "middle", "ring")]
    human_map = {l.name: l.name for l in links if l.joint_type == "revolute"
                 and not l.name.startswith("thumb_knuckle")}
    human_map["thumb_knuckle"] = "thumb_cmc_abd"
    spec = HandSpec("quad16", links, anchors, tips, human_joint_map=human_map)
    assert spec.dof == 16, spec.dof
    return spec


def pinch_gripper():
    """Two-finger 1-DoA pinch gripper; left finger plays the thumb role."""
    links = [Link("palm", -1, np.eye(3), np.zeros(3), "fixed",
                  primitives=[Primitive("box", (1.5, 2.2, 0.8),
                                        translation=np.array([1.5, 0.0, 0.0]))],
                  sample_count=96)]
    links.append(Link("thumb_distal", 0, np.eye(3), np.array([2.8, 1.4, 0.0]),
                      "revolute", -Z_AXIS, (0.0, 0.6),
                      primitives=[_capsule(0.7, 4.0)], sample_count=64))
    links.append(Link("index_distal", 0, np.eye(3), np.array([2.8, -1.4, 0.0]),
                      "revolute", Z_AXIS, (0.0, 0.6),
                      primitives=[_capsule(0.7, 4.0)], sample_count=64))
    anchors = [
        Anchor("thumb_tip", 1, np.array([4.0, -0.35, 0.0])),
        Anchor("index_tip", 2, np.array([4.0, 0.35, 0.0])),
        Anchor("thumb_distal_pad", 1, np.array([2.0, -0.6, 0.0])),
        Anchor("index_distal_pad", 2, np.array([2.0, 0.6, 0.0])),
        Anchor("palm_0", 0, np.array([3.0, 0.0, 0.0])),
    ]
    tips = [FingertipFrame("thumb", 1, np.array([4.0, 0.0, 0.0])),
            FingertipFrame("index", 2, np.array([4.0, 0.0, 0.0]))]
    spec = HandSpec("pinch1", links, anchors, tips,
                    coupling=np.array([[1.0], [1.0]]),
                    actuated_names=["close"],
                    actuated_limits=[(0.0, 0.6)],
                    human_joint_map={})
    assert spec.dof == 2 and spec.doa == 1
    return spec


BUILTIN_BUILDERS = {
    "human": human_hand,
    "coupled9": coupled_hand,
    "quad16": quad_hand,
    "pinch1": pinch_gripper,
}


def builtin_hand(name):
    """Load a shipped hand spec (from package data when available)."""
    from importlib import resources

    from .schema import handspec_from_dict
    if name not in BUILTIN_BUILDERS:
        raise KeyError(f"unknown builtin hand {name!r}; "
                       f"have {sorted(BUILTIN_BUILDERS)}")
    try:
        ref = resources.files("graspsynth").joinpath(f"data/hands/{name}.json")
        import json
        with ref.open() as fh:
            return handspec_from_dict(json.load(fh))
    except FileNotFoundError:
        return BUILTIN_BUILDERS[name]()


def write_builtin_data(directory=None):
    import pathlib

    from .schema import save_handspec
    if directory is None:
        directory = pathlib.Path(__file__).resolve().parent.parent / "data" / "hands"
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, builder in BUILTIN_BUILDERS.items():
        save_handspec(directory / f"{name}.json", builder())
    return directory


if __name__ == "__main__":
    print(f"wrote hand data to {write_builtin_data()}")
