"""
Synthetic Faces - procedurally drawn faces with exact landmark ground truth.
Desk-scale stand-in for an aligned face collection; K=5 landmarks
(left eye, right eye, nose tip, left mouth corner, right mouth corner).
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from PIL import Image, ImageDraw

from landmark_forge.schemas.sample import ImageSample, LandmarkSet

logger = logging.getLogger(__name__)

LANDMARK_NAMES = ["left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right"]
EYE_INDICES = (0, 1)
SUPERSAMPLE = 2

# (low, high) per entry of the identity parameter vector
PARAMETER_RANGES = [
    ("face_half_width", 0.28, 0.36),
    ("face_half_height", 0.36, 0.44),
    ("eye_spacing", 0.12, 0.17),
    ("eye_height", -0.12, -0.06),
    ("eye_radius", 0.035, 0.055),
    ("nose_offset", 0.03, 0.09),
    ("mouth_offset", 0.15, 0.23),
    ("mouth_half_width", 0.08, 0.13),
    ("skin_r", 0.55, 0.95),
    ("skin_g", 0.40, 0.80),
    ("skin_b", 0.30, 0.70),
    ("background_r", 0.05, 0.95),
    ("background_g", 0.05, 0.95),
    ("background_b", 0.05, 0.95),
    ("iris_r", 0.05, 0.55),
    ("iris_g", 0.10, 0.60),
    ("iris_b", 0.10, 0.70),
    ("hair_shade", 0.02, 0.45),
    ("hair_parting", -0.15, 0.15),
]
PARAMETER_NAMES = [name for name, _, _ in PARAMETER_RANGES]


@dataclass(frozen=True)
class FacePose:
    rotation: float = 0.0       # degrees
    scale: float = 1.0
    tx: float = 0.0             # fraction of canvas
    ty: float = 0.0

    def affine(self, canvas: int) -> np.ndarray:
        """3x3 map from frontal canvas coordinates to rendered coordinates."""
        c = canvas / 2.0
        theta = math.radians(self.rotation)
        cos_t, sin_t = math.cos(theta) * self.scale, math.sin(theta) * self.scale
        to_origin = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1]], dtype=np.float64)
        rotate = np.array([[cos_t, -sin_t, 0], [sin_t, cos_t, 0], [0, 0, 1]], dtype=np.float64)
        back = np.array([[1, 0, c + self.tx * canvas], [0, 1, c + self.ty * canvas], [0, 0, 1]], dtype=np.float64)
        return back @ rotate @ to_origin


def identity_parameters(identity_id: int) -> np.ndarray:
    """Persistent shape/colour parameter vector of an identity."""
    rng = np.random.default_rng(np.random.SeedSequence([int(identity_id), 0xFACE]))
    lows = np.array([low for _, low, _ in PARAMETER_RANGES])
    highs = np.array([high for _, _, high in PARAMETER_RANGES])
    return lows + (highs - lows) * rng.random(len(PARAMETER_RANGES))


def sample_pose(rng: np.random.Generator, max_rotation: float = 12.0, scale_range=(0.9, 1.1), max_shift: float = 0.06) -> FacePose:
    return FacePose(
        rotation=float(rng.uniform(-max_rotation, max_rotation)),
        scale=float(rng.uniform(*scale_range)),
        tx=float(rng.uniform(-max_shift, max_shift)),
        ty=float(rng.uniform(-max_shift, max_shift)),
    )


def frontal_landmarks(params: np.ndarray, canvas: int) -> np.ndarray:
    p = dict(zip(PARAMETER_NAMES, params))
    c = canvas / 2.0
    eye_y = c + p["eye_height"] * canvas
    spacing = p["eye_spacing"] * canvas
    mouth_y = c + p["mouth_offset"] * canvas
    mouth_hw = p["mouth_half_width"] * canvas
    return np.array([
        [c - spacing, eye_y],
        [c + spacing, eye_y],
        [c, c + p["nose_offset"] * canvas],
        [c - mouth_hw, mouth_y],
        [c + mouth_hw, mouth_y],
    ], dtype=np.float64)


def _rgb(*values) -> tuple:
    return tuple(int(round(255 * min(1.0, max(0.0, v)))) for v in values)


def _draw_frontal(params: np.ndarray, canvas: int) -> Image.Image:
    p = dict(zip(PARAMETER_NAMES, params))
    s = SUPERSAMPLE
    size = canvas * s
    c = size / 2.0
    u = canvas * s  # one canvas unit in supersampled pixels
    img = Image.new("RGB", (size, size), _rgb(p["background_r"], p["background_g"], p["background_b"]))
    draw = ImageDraw.Draw(img)

    skin = _rgb(p["skin_r"], p["skin_g"], p["skin_b"])
    shade = _rgb(p["skin_r"] * 0.7, p["skin_g"] * 0.7, p["skin_b"] * 0.7)
    hair = _rgb(p["hair_shade"], p["hair_shade"] * 0.8, p["hair_shade"] * 0.6)
    fw, fh = p["face_half_width"] * u, p["face_half_height"] * u

    # hair cap, offset sideways by the parting so the face is not mirror-symmetric
    part = p["hair_parting"] * u
    draw.ellipse([c - fw * 1.08 + part, c - fh * 1.12, c + fw * 1.08 + part, c + fh * 0.2], fill=hair)
    draw.ellipse([c - fw, c - fh, c + fw, c + fh], fill=skin, outline=shade, width=s)

    points = frontal_landmarks(params, canvas) * s
    r = p["eye_radius"] * u
    iris = _rgb(p["iris_r"], p["iris_g"], p["iris_b"])
    for ex, ey in points[:2]:
        draw.ellipse([ex - 1.6 * r, ey - r, ex + 1.6 * r, ey + r], fill=(245, 245, 245), outline=shade, width=s)
        draw.ellipse([ex - 0.8 * r, ey - 0.8 * r, ex + 0.8 * r, ey + 0.8 * r], fill=iris)
        draw.ellipse([ex - 0.35 * r, ey - 0.35 * r, ex + 0.35 * r, ey + 0.35 * r], fill=(10, 10, 10))
        draw.line([ex - 1.7 * r, ey - 1.9 * r, ex + 1.7 * r, ey - 2.1 * r], fill=hair, width=2 * s)

    nx, ny = points[2]
    bridge_y = points[0][1] + r
    draw.polygon([(nx, bridge_y), (nx - 1.1 * r, ny), (nx + 1.1 * r, ny)], fill=shade)
    draw.ellipse([nx - 0.5 * r, ny - 0.5 * r, nx + 0.5 * r, ny + 0.5 * r], fill=_rgb(p["skin_r"] * 0.5, p["skin_g"] * 0.45, p["skin_b"] * 0.45))

    (lx, ly), (rx, ry) = points[3], points[4]
    lip = _rgb(0.55 + 0.3 * p["skin_r"], 0.15, 0.2)
    draw.polygon([(lx, ly), ((lx + rx) / 2, ly - 0.6 * r), (rx, ry), ((lx + rx) / 2, ly + 1.2 * r)], fill=lip)
    draw.line([(lx, ly), (rx, ry)], fill=(60, 20, 20), width=s)
    return img


def render_face(identity_id: int, canvas: int, pose: FacePose = FacePose()) -> ImageSample:
    """Render an identity under a pose; landmarks go through the same affine as the pixels."""
    if canvas < 32:
        raise ValueError(f"canvas must be >= 32, got {canvas}")
    params = identity_parameters(identity_id)
    frontal = _draw_frontal(params, canvas)
    affine = pose.affine(canvas)
    # PIL wants the inverse map: output pixel -> supersampled input pixel
    inverse = np.diag([SUPERSAMPLE, SUPERSAMPLE, 1.0]) @ np.linalg.inv(affine)
    coeffs = tuple(inverse[:2].reshape(-1))
    background = tuple(int(v) for v in frontal.getpixel((0, 0)))
    rendered = frontal.transform((canvas, canvas), Image.Transform.AFFINE, coeffs, resample=Image.Resampling.BILINEAR, fillcolor=background)
    image = np.asarray(rendered, dtype=np.float32) / 255.0
    landmarks = LandmarkSet.from_points(frontal_landmarks(params, canvas), eye_indices=EYE_INDICES).transform(affine)
    return ImageSample(image=image, landmarks=landmarks, identity_id=int(identity_id))


def generate_synthetic_face(seed: int, canvas: int = 96) -> ImageSample:
    """Identity `seed` under a pose jitter drawn from the same seed."""
    pose = sample_pose(np.random.default_rng(np.random.SeedSequence([int(seed), 1])))
    return render_face(seed, canvas, pose)


def generate_synthetic_dataset(count: int, identities: int, canvas: int = 96, seed: int = 0) -> List[ImageSample]:
    """`count` renders cycling over `identities` identities, each with its own pose."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if identities < 1:
        raise ValueError(f"identities must be >= 1, got {identities}")
    samples = []
    for index in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), index, 2]))
        samples.append(render_face(index % identities, canvas, sample_pose(rng)))
    logger.info("Generated %d synthetic faces over %d identities (canvas %d)", count, identities, canvas)
    return samples
