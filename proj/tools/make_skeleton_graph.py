#!/usr/bin/env python3
"""Writes the 54-angle Human3.6M exponential-map sensor graph.

Vertices are the active exponential-map columns (root translation and
rotation plus the 48 commonly used joint angles). Two angles are adjacent
when they belong to the same joint or to a parent/child joint pair, where
joints without active angles are skipped over to the nearest active
ancestor.
"""
import itertools
import sys

PARENT = [-1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 9, 0, 11, 12, 13, 14, 12, 16, 17, 18,
          19, 20, 19, 22, 12, 24, 25, 26, 27, 28, 27, 30]
JOINTS = ["Hips", "RightUpLeg", "RightLeg", "RightFoot", "RightToeBase",
          "RightToeSite", "LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToeBase",
          "LeftToeSite", "Spine", "Spine1", "Neck", "Head", "HeadSite",
          "LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand",
          "LeftHandThumb", "LeftThumbSite", "LeftWristEnd", "LeftWristSite",
          "RightShoulder", "RightArm", "RightForeArm", "RightHand",
          "RightHandThumb", "RightThumbSite", "RightWristEnd",
          "RightWristSite"]
USED = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 13, 14, 15, 21, 22, 23, 24, 27, 28,
        29, 30, 36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47, 51, 52, 53, 54,
        55, 56, 57, 60, 61, 62, 75, 76, 77, 78, 79, 80, 81, 84, 85, 86]


ROOT_POS = -2


def owner(col):
    # Column block 0 is the root translation, a pseudo joint below the root.
    return ROOT_POS if col < 3 else col // 3 - 1


def main(out):
    active = {owner(c) for c in USED}

    def active_parent(j):
        if j == ROOT_POS:
            return 0
        p = PARENT[j]
        while p != -1 and p not in active:
            p = PARENT[p]
        return p

    labels = []
    for c in USED:
        axis = "xyz"[c % 3]
        kind = "pos" if c < 3 else "rot"
        labels.append(f"{JOINTS[max(owner(c), 0)]}.{kind}{axis}@{c}")
    nbrs = [[] for _ in USED]
    for u, v in itertools.combinations(range(len(USED)), 2):
        ju, jv = owner(USED[u]), owner(USED[v])
        if ju == jv or active_parent(ju) == jv or active_parent(jv) == ju:
            nbrs[u].append(v)
            nbrs[v].append(u)
    with open(out, "w") as f:
        f.write("# Human3.6M exponential-map sensor graph: id label neighbors...\n")
        for i, label in enumerate(labels):
            f.write(" ".join([str(i), label] + [str(j) for j in sorted(nbrs[i])]) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "h36m_skeleton.graph")
