#!/usr/bin/env python3
"""Writes the shipped hand descriptions (assets/hands/*.json).

Links are boxes; surface points are face grids and collision spheres run
along each link's long axis. Output is plain JSON with explicit numbers so
the C++ loader needs no geometry generation of its own.
"""

import argparse
import json
import math
from pathlib import Path


def r6(v):
    return [round(float(x), 6) for x in v]


def box_points(lo, hi, spacing):
    """Grid samples on the six faces of an axis-aligned box, deduplicated."""
    pts = set()
    n = [max(1, math.ceil((hi[a] - lo[a]) / spacing)) for a in range(3)]
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        for side in (lo[a], hi[a]):
            for i in range(n[b] + 1):
                for j in range(n[c] + 1):
                    p = [0.0, 0.0, 0.0]
                    p[a] = side
                    p[b] = lo[b] + (hi[b] - lo[b]) * i / n[b]
                    p[c] = lo[c] + (hi[c] - lo[c]) * j / n[c]
                    pts.add(tuple(r6(p)))
    return [list(p) for p in sorted(pts)]


def capsule_spheres(length, radius, axis=0, count=None):
    """Spheres of one radius spaced along [0, length] on the given axis."""
    if count is None:
        count = max(1, math.ceil(length / radius))
    out = []
    for i in range(count):
        t = (i + 0.5) / count
        c = [0.0, 0.0, 0.0]
        c[axis] = t * length
        out.append({"center": r6(c), "radius": radius})
    return out


def joint(name, parent, child, axis, xyz, lower, upper, rpy=(0.0, 0.0, 0.0)):
    return {
        "name": name,
        "parent": parent,
        "child": child,
        "axis": r6(axis),
        "origin": {"xyz": r6(xyz), "rpy": r6(rpy)},
        "lower": lower,
        "upper": upper,
    }


# ---------------------------------------------------------------------------
# Reference 16-joint four-finger hand

FINGERS = {
    # name: mount y
    "index": 0.0435,
    "middle": 0.0,
    "ring": -0.0435,
}
LINK_LEN = [0.0164, 0.054, 0.0384, 0.04]
HALF_W = 0.012  # lateral half width (y)
HALF_T = 0.010  # half thickness (z)
FLEX_LIMITS = [(-0.196, 1.61), (-0.174, 1.709), (-0.227, 1.618)]
ABD_LIMIT = 0.47
THUMB_LIMITS = [(0.263, 1.396), (-0.105, 1.163), (-0.189, 1.644), (-0.162, 1.719)]
THUMB_LEN = [0.02, 0.045, 0.035, 0.04]
PALM = ([-0.05, -0.05, -0.025], [0.05, 0.05, 0.0])
FINGER_Z = -HALF_T  # finger pads flush with the palm face at rest


def finger_link(name, length, spacing):
    lo = [0.0, -HALF_W, -HALF_T]
    hi = [length, HALF_W, HALF_T]
    return {
        "name": name,
        "points": box_points(lo, hi, spacing),
        "spheres": capsule_spheres(length, HALF_T),
    }


def pad(link, xs, side, normal, y=0.0, z=HALF_T):
    return [{"link": link, "point": r6([x, y, z]), "normal": normal, "side": side} for x in xs]


def lateral(link, xs, side, sign):
    """Candidates on the +y (sign=+1) or -y (sign=-1) face of a finger link."""
    return [
        {"link": link, "point": r6([x, sign * HALF_W, 0.0]), "normal": [0.0, float(sign), 0.0], "side": side}
        for x in xs
    ]


def reference_hand(spacing=0.01):
    links = [{"name": "palm", "points": box_points(PALM[0], PALM[1], spacing), "spheres": []}]
    joints = []
    names = []
    for finger, y in FINGERS.items():
        prev = "palm"
        for k in range(4):
            link = f"{finger}_link{k}"
            links.append(finger_link(link, LINK_LEN[k], spacing))
            if k == 0:
                joints.append(joint(f"{finger}_{k}", prev, link, [0, 0, 1], [0.05, y, FINGER_Z], -ABD_LIMIT, ABD_LIMIT))
            else:
                lo, hi = FLEX_LIMITS[k - 1]
                joints.append(joint(f"{finger}_{k}", prev, link, [0, -1, 0], [LINK_LEN[k - 1], 0, 0], lo, hi))
            names.append(f"{finger}_{k}")
            prev = link

    # Thumb: mounted on the palm edge, long axis along its local +x, which the
    # mount rotates to point along +y. Joint 0 rolls the thumb about that axis
    # so its pad turns from +x toward the palm normal; joints 1-3 curl it.
    prev = "palm"
    for k in range(4):
        link = f"thumb_link{k}"
        links.append(finger_link(link, THUMB_LEN[k], spacing))
        lo, hi = THUMB_LIMITS[k]
        if k == 0:
            joints.append(
                joint("thumb_0", prev, link, [-1, 0, 0], [-0.01, 0.05, FINGER_Z], lo, hi, rpy=(0.0, 0.0, math.pi / 2))
            )
        else:
            joints.append(joint(f"thumb_{k}", prev, link, [0, 0, -1], [THUMB_LEN[k - 1], 0, 0], lo, hi))
        names.append(f"thumb_{k}")
        prev = link

    def fj(finger):
        return [f"{finger}_{k}" for k in range(4)]

    # Palm patch: points on the palm face, normal +z.
    def palm_strip(ys, side, xs=(-0.02, -0.01, 0.0, 0.01, 0.02, 0.03, 0.04)):
        return [
            {"link": "palm", "point": r6([x, y, 0.0]), "normal": [0.0, 0.0, 1.0], "side": side}
            for y in ys
            for x in xs
        ]

    def finger_pads(finger, side):
        out = []
        out += pad(f"{finger}_link2", [0.012, 0.026], side, [0.0, 0.0, 1.0])
        out += pad(f"{finger}_link3", [0.01, 0.022, 0.034], side, [0.0, 0.0, 1.0])
        return out

    def side_faces(finger, side, sign):
        out = []
        for k, xs in ((1, [0.02, 0.04]), (2, [0.012, 0.026]), (3, [0.01, 0.025])):
            out += lateral(f"{finger}_link{k}", xs, side, sign)
        return out

    # Thumb pad is its local -y face. It faces the palm's +x direction at zero
    # roll and turns toward +z as thumb_0 increases. Curled fully, it only
    # faces the palm over a small patch near the thumb base (x in [-0.01,
    # 0.02], y in [0.03, 0.045]), which is where its palm patch sits.
    thumb_pads = []
    for k, xs in ((2, [0.012, 0.024]), (3, [0.01, 0.022, 0.034])):
        thumb_pads += [
            {"link": f"thumb_link{k}", "point": r6([x, -HALF_W, 0.0]), "normal": [0.0, -1.0, 0.0], "side": "A"}
            for x in xs
        ]

    os_catalog = [
        {"label": "middle-ring", "joint_mask": fj("middle") + fj("ring"),
         "contacts": side_faces("middle", "A", -1) + side_faces("ring", "B", +1)},
        {"label": "index-middle", "joint_mask": fj("index") + fj("middle"),
         "contacts": side_faces("index", "A", -1) + side_faces("middle", "B", +1)},
        {"label": "thumb-index", "joint_mask": fj("thumb") + fj("index"),
         "contacts": thumb_pads + finger_pads("index", "B")},
        {"label": "ring-palm", "joint_mask": fj("ring"),
         "contacts": finger_pads("ring", "A") + palm_strip([FINGERS["ring"]], "B")},
        {"label": "middle-palm", "joint_mask": fj("middle"),
         "contacts": finger_pads("middle", "A") + palm_strip([FINGERS["middle"]], "B")},
        {"label": "index-palm", "joint_mask": fj("index"),
         "contacts": finger_pads("index", "A") + palm_strip([FINGERS["index"]], "B")},
        {"label": "thumb-palm", "joint_mask": fj("thumb"),
         "contacts": thumb_pads + palm_strip([0.025, 0.035], "B", xs=(-0.01, 0.0, 0.01, 0.02))},
    ]

    rest = []
    for name in names:
        rest.append(THUMB_LIMITS[0][0] if name == "thumb_0" else 0.0)

    return {
        "name": "reference_hand",
        "notes": "Four-finger 16-joint hand with Allegro-like dimensions and limits. "
        "The opposition-space joint masks and contact candidates are a reconstruction "
        "(grasp figures only name the seven spaces, not their joints).",
        "base_link": "palm",
        "approach_axis": [0.0, 0.0, 1.0],
        "links": links,
        "joints": joints,
        "rest_pose": rest,
        "opposition_spaces": os_catalog,
    }


# ---------------------------------------------------------------------------
# Toy two-finger gripper (K = 4, one opposition space)

TOY_Y = 0.06
TOY_LEN = [0.05, 0.045]
TOY_HALF_W = 0.008
TOY_HALF_T = 0.01
TOY_LIMITS = [(-0.3, 1.0), (-0.8, 1.2)]


def toy_hand(spacing=0.008):
    palm = ([-0.02, -0.075, -0.015], [0.0, 0.075, 0.015])
    links = [{"name": "palm", "points": box_points(palm[0], palm[1], spacing), "spheres": []}]
    joints = []
    contacts = []
    for side, sign, tag in (("left", +1, "A"), ("right", -1, "B")):
        prev = "palm"
        for k in range(2):
            link = f"{side}_link{k}"
            lo = [0.0, -TOY_HALF_W, -TOY_HALF_T]
            hi = [TOY_LEN[k], TOY_HALF_W, TOY_HALF_T]
            links.append({"name": link, "points": box_points(lo, hi, spacing),
                          "spheres": capsule_spheres(TOY_LEN[k], TOY_HALF_W + 0.002)})
            axis = [0.0, 0.0, -float(sign)]
            xyz = [0.0, sign * TOY_Y, 0.0] if k == 0 else [TOY_LEN[0], 0.0, 0.0]
            lo_lim, hi_lim = TOY_LIMITS[k]
            joints.append(joint(f"{side}_{k}", prev, link, axis, xyz, lo_lim, hi_lim))
            prev = link
        # Inner pad faces the other finger.
        for x in (0.012, 0.024, 0.036):
            contacts.append({"link": f"{side}_link1", "point": r6([x, -sign * TOY_HALF_W, 0.0]),
                             "normal": [0.0, -float(sign), 0.0], "side": tag})
    return {
        "name": "toy_gripper",
        "base_link": "palm",
        "approach_axis": [1.0, 0.0, 0.0],
        "links": links,
        "joints": joints,
        "rest_pose": [0.0, 0.0, 0.0, 0.0],
        "opposition_spaces": [
            {"label": "pinch", "joint_mask": [1, 1, 1, 1], "contacts": contacts},
        ],
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "assets" / "hands")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, spec in (("reference_hand.json", reference_hand()), ("toy_hand.json", toy_hand())):
        path = args.out / name
        path.write_text(json.dumps(spec, indent=1) + "\n")
        n_pts = sum(len(l["points"]) for l in spec["links"])
        print(f"{path}: {len(spec['joints'])} joints, {n_pts} surface points")


if __name__ == "__main__":
    main()
