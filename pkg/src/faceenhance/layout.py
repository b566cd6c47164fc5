"""Parametric 60-point frontal face layout on a 224x224 canvas.

Point order: chin/jaw contour (17), left brow (5), right brow (5), left eye (6),
right eye (6), nose bridge (4), nose tip (5), top lip (7), bottom lip (5).
The jaw and both brows form the convex hull (27 points), which with 60 points
in general position gives 3*60 - 3 - 27 = 150 Delaunay edges.
"""
from dataclasses import asdict, dataclass

import numpy as np

CANVAS = 224
CENTER_X = 112.0

GROUPS = {
    "chin": list(range(0, 17)),
    "left_eyebrow": list(range(17, 22)),
    "right_eyebrow": list(range(22, 27)),
    "left_eye": list(range(27, 33)),
    "right_eye": list(range(33, 39)),
    "nose_bridge": list(range(39, 43)),
    "nose_tip": list(range(43, 48)),
    "top_lip": list(range(48, 55)),
    "bottom_lip": list(range(55, 60)),
}

# jaw points whose horizontal separation is the cheek-width statistic
CHEEK_PAIR = (4, 12)


@dataclass
class FaceParams:
    cheek_width: float = 70.0      # half-width of the jaw ellipse, px
    eye_size: float = 1.0          # scale of eye outlines about their centres
    mouth_curvature: float = 0.0   # px of corner lift (positive = smile)
    face_length: float = 100.0     # jaw ellipse half-height, px
    eye_spacing: float = 32.0      # eye centre offset from midline, px
    nose_length: float = 40.0      # bridge top to tip, px
    brow_height: float = 30.0      # brow arc height above eye line, px
    mouth_width: float = 20.0      # half-width of the mouth, px

    def to_dict(self):
        return asdict(self)


def face_landmarks(p=None):
    """Landmarks (60, 2) for a parameter set, before any jitter."""
    p = p or FaceParams()
    cx = CENTER_X
    eye_y = 100.0
    pts = []

    # jaw: half ellipse from the left temple, under the chin, to the right temple
    jaw_top = eye_y + 8.0
    for t in np.linspace(0.0, np.pi, 17):
        pts.append((cx - p.cheek_width * np.cos(t), jaw_top + p.face_length * np.sin(t)))

    # brows sit on one circle arc spanning both temples so all ten stay on the hull
    top = eye_y - p.brow_height
    half_span = p.cheek_width + 2.0
    radius = 1.15 * half_span
    cy = top + radius
    left_x = np.array([0.84, 0.68, 0.52, 0.36, 0.16]) * -half_span + cx
    for x in left_x:
        pts.append((x, cy - np.sqrt(radius ** 2 - (x - cx) ** 2)))
    for x in (2 * cx - left_x)[::-1]:
        pts.append((x, cy - np.sqrt(radius ** 2 - (x - cx) ** 2)))

    # eyes: hexagons about each centre
    ang = np.deg2rad([180, 120, 60, 0, 300, 240])
    for ex in (cx - p.eye_spacing, cx + p.eye_spacing):
        for a in ang:
            pts.append((ex + 13.0 * p.eye_size * np.cos(a), eye_y - 5.5 * p.eye_size * np.sin(a)))

    # nose bridge and tip
    bridge_top = eye_y - 2.0
    for k in range(4):
        pts.append((cx, bridge_top + k * p.nose_length * 0.8 / 3.0))
    tip_y = bridge_top + p.nose_length
    for dx, dy in ((-11, -3), (-5, 1), (0, 2), (5, 1), (11, -3)):
        pts.append((cx + dx, tip_y + dy))

    # lips: corners plus upper contour, then lower contour right to left
    mouth_y = jaw_top + 0.62 * p.face_length
    w = p.mouth_width
    lift = p.mouth_curvature

    def bend(x):
        return -lift * ((x - cx) / w) ** 2

    for fx, dy in ((-1.0, 0.0), (-0.75, -4.0), (-0.4, -6.0), (0.0, -4.5), (0.4, -6.0), (0.75, -4.0), (1.0, 0.0)):
        x = cx + fx * w
        pts.append((x, mouth_y + dy + bend(x)))
    for fx, dy in ((0.75, 5.0), (0.4, 8.0), (0.0, 9.0), (-0.4, 8.0), (-0.75, 5.0)):
        x = cx + fx * w
        pts.append((x, mouth_y + dy + bend(x)))
    return np.array(pts, dtype=np.float64)


def cheek_width(points):
    """Horizontal distance between the cheek-level jaw points."""
    pts = np.asarray(points)
    i, j = CHEEK_PAIR
    return float(np.hypot(*(pts[j] - pts[i])))


def eye_size(points):
    pts = np.asarray(points)
    le = pts[GROUPS["left_eye"]]
    re = pts[GROUPS["right_eye"]]
    return float((np.ptp(le[:, 0]) + np.ptp(re[:, 0])) / 2.0)
