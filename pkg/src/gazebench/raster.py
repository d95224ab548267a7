"""Procedural grayscale rendering of scene samples, plus PGM image IO.

The renderer turns a scene sample's projected landmarks into a stylized
camera frame: textured background, one bright sclera ellipse per eye
spanning the eye corners, an iris disk at the projected iris centre,
and a darker concentric pupil disk. No shading model; the point is a
cheap image whose appearance responds to exactly the geometry that
matters (corner positions, iris placement, apparent scale).

Gray bands are kept disjoint by construction so tests can segment a
clean render by thresholding: pupil in [16, 24], iris in [68, 92],
textured background in [106, 134], sclera in [220, 240] across all
per-user palette variations. The iris disk is painted whole (never
clipped by the sclera outline) and the background texture never touches
the shapes, so the painted pupil's pixel centroid equals the projected
pupil centre to sub-pixel accuracy and tests lean on that.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import RenderError, ValidationError
from .scene import CameraModel, EyeballParams, SceneSample

PUPIL_TO_IRIS = 0.45
SCLERA_ASPECT = 0.45


@dataclass(frozen=True)
class Palette:
    """Base gray levels; per-user variation comes from `user_palette`."""

    background: int = 120
    sclera: int = 230
    iris: int = 80
    pupil: int = 20
    texture_amplitude: int = 8

    def __post_init__(self):
        for name in ("background", "sclera", "iris", "pupil"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValidationError(f"palette {name} out of range: {v}")
        if self.texture_amplitude < 0:
            raise ValidationError("texture amplitude must be nonnegative")


# offset bounds chosen so the gray bands above stay disjoint
_PALETTE_JITTER = {"background": 6, "sclera": 10, "iris": 12, "pupil": 4}


def user_palette(appearance_seed: int, base: Palette | None = None) -> Palette:
    """Deterministic per-user palette: base levels plus bounded offsets."""
    base = base or Palette()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=appearance_seed))
    out = base
    for name, amp in _PALETTE_JITTER.items():
        off = int(rng.integers(-amp, amp + 1))
        out = replace(out, **{name: getattr(base, name) + off})
    return out


def _disk_mask_into(img: np.ndarray, cx: float, cy: float, r: float, value: int):
    h, w = img.shape
    x0 = max(int(np.floor(cx - r)) - 1, 0)
    x1 = min(int(np.ceil(cx + r)) + 2, w)
    y0 = max(int(np.floor(cy - r)) - 1, 0)
    y1 = min(int(np.ceil(cy + r)) + 2, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    img[y0:y1, x0:x1][mask] = value


def _ellipse_mask_into(img: np.ndarray, center: np.ndarray, axis: np.ndarray,
                       a: float, b: float, value: int):
    """Paint the ellipse with semi-major `a` along unit `axis`, semi-minor `b`."""
    h, w = img.shape
    r = max(a, b)
    x0 = max(int(np.floor(center[0] - r)) - 1, 0)
    x1 = min(int(np.ceil(center[0] + r)) + 2, w)
    y0 = max(int(np.floor(center[1] - r)) - 1, 0)
    y1 = min(int(np.ceil(center[1] + r)) + 2, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - center[0]
    dy = ys - center[1]
    perp = np.array([-axis[1], axis[0]])
    major = (dx * axis[0] + dy * axis[1]) / a
    minor = (dx * perp[0] + dy * perp[1]) / b
    img[y0:y1, x0:x1][major * major + minor * minor <= 1.0] = value


def iris_radius_px(camera: CameraModel, iris_center_mm, iris_radius_mm: float) -> float:
    """Apparent iris radius at the iris centre's depth."""
    z = float(camera.world_to_camera(iris_center_mm)[2])
    if z <= 1e-9:
        raise RenderError("iris at or behind the camera plane")
    return camera.focal_px * iris_radius_mm / z


def render_sample(sample: SceneSample, camera: CameraModel, eyes: EyeballParams,
                  style_seed: int = 0, palette: Palette | None = None,
                  noise_sigma: float = 0.0) -> np.ndarray:
    """Rasterize one sample to a full camera frame (uint8, H x W).

    `style_seed` drives the background texture and, when `noise_sigma`
    is positive, the additive sensor noise; equal inputs give equal
    bytes. Raises RenderError when an iris disk is not fully inside the
    frame, naming the offending landmark.
    """
    palette = palette or Palette()
    w, h = camera.resolution_px
    texture_rng, noise_rng = (np.random.default_rng(s) for s in
                              np.random.SeedSequence(entropy=style_seed).spawn(2))
    img = np.full((h, w), palette.background, dtype=np.int16)
    if palette.texture_amplitude > 0:
        amp = palette.texture_amplitude
        img += texture_rng.integers(-amp, amp + 1, size=(h, w), dtype=np.int16)

    for side in ("left", "right"):
        outer = sample.landmarks_2d[f"outer_{side}"]
        inner = sample.landmarks_2d[f"inner_{side}"]
        iris2 = sample.landmarks_2d[f"iris_{side}"]
        pupil2 = sample.landmarks_2d[f"pupil_{side}"]
        chord = inner - outer
        d = float(np.linalg.norm(chord))
        if d < 2.0:
            raise RenderError(f"eye corners nearly coincide on {side} eye")
        axis = chord / d
        center = 0.5 * (outer + inner)
        a = d / 2.0
        _ellipse_mask_into(img, center, axis, a, SCLERA_ASPECT * a, palette.sclera)
        r_iris = iris_radius_px(camera, sample.landmarks_3d[f"iris_{side}"],
                                eyes.iris_radius_mm)
        if (iris2[0] - r_iris < 0 or iris2[0] + r_iris > w - 1
                or iris2[1] - r_iris < 0 or iris2[1] + r_iris > h - 1):
            raise RenderError(f"iris_{side} disk leaves the frame")
        _disk_mask_into(img, iris2[0], iris2[1], r_iris, palette.iris)
        _disk_mask_into(img, pupil2[0], pupil2[1], PUPIL_TO_IRIS * r_iris, palette.pupil)

    if noise_sigma > 0.0:
        img = img + np.rint(noise_rng.normal(0.0, noise_sigma, size=(h, w))).astype(np.int16)
    return np.clip(img, 0, 255).astype(np.uint8)


def save_pgm(path, image: np.ndarray) -> None:
    """Write a binary PGM (P5); byte-identical for identical input."""
    a = np.asarray(image)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise ValidationError("save_pgm expects a 2D uint8 array")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def _parse_pnm(path, magics):
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, dims, maxval, single whitespace, then raw pixels
    fields: list[bytes] = []
    i = 0
    while len(fields) < 4 and i < len(data):
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        fields.append(data[i:j])
        i = j
    i += 1  # the single whitespace byte after maxval
    if len(fields) != 4 or fields[0] not in magics:
        raise ValidationError(f"not a binary {'/'.join(m.decode() for m in magics)}: {path}")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValidationError("only 8-bit samples supported")
    return fields[0], w, h, data[i:]


def load_pgm(path) -> np.ndarray:
    _, w, h, body = _parse_pnm(path, (b"P5",))
    pixels = np.frombuffer(body[:w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValidationError(f"truncated PGM: {path}")
    return pixels.reshape(h, w).copy()


def load_image(path) -> np.ndarray:
    """Read a binary PGM or PPM as grayscale (color reduced to luma)."""
    magic, w, h, body = _parse_pnm(path, (b"P5", b"P6"))
    ch = 1 if magic == b"P5" else 3
    pixels = np.frombuffer(body[:w * h * ch], dtype=np.uint8)
    if pixels.size != w * h * ch:
        raise ValidationError(f"truncated image: {path}")
    if ch == 1:
        return pixels.reshape(h, w).copy()
    rgb = pixels.reshape(h, w, 3).astype(np.float64)
    luma = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)
