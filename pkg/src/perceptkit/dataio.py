"""Scene data: camera model, disparity-based distance ground truth,
mask subsampling, a pinhole-consistent synthetic scene generator, and the
on-disk dataset format.

Distance ground truth follows the stereo relation D = b * f / d with
per-box median filtering over the valid disparities inside the box.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

IGNORE_LABEL = 255

# 19 segmentation classes (Cityscapes train ids) and the 8 instance classes
# detectors care about, plus two configurable extras to round the detection
# registry out to 10 labels. Registries are configuration, not constants.
DEFAULT_SEG_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain", "sky",
    "person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle",
)
DEFAULT_DET_CLASSES = (
    "person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle",
    "extra0", "extra1",
)


@dataclass(frozen=True)
class ClassRegistry:
    seg_classes: Tuple[str, ...] = DEFAULT_SEG_CLASSES
    det_classes: Tuple[str, ...] = DEFAULT_DET_CLASSES

    @property
    def num_seg(self) -> int:
        return len(self.seg_classes)

    @property
    def num_det(self) -> int:
        return len(self.det_classes)

    def det_id(self, name: str) -> int:
        """Detection label id; 0 is reserved for background."""
        return self.det_classes.index(name) + 1

    def det_name(self, det_id: int) -> str:
        return self.det_classes[det_id - 1]

    def seg_id(self, name: str) -> int:
        return self.seg_classes.index(name)

    def seg_id_for_det(self, det_id: int) -> Optional[int]:
        name = self.det_name(det_id)
        return self.seg_classes.index(name) if name in self.seg_classes else None


DEFAULT_REGISTRY = ClassRegistry()


class InvalidDisparityError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    """Stereo rig: baseline b in meters, focal length f in pixels."""

    b: float
    f: float

    def __post_init__(self):
        if self.b <= 0 or self.f <= 0:
            raise ValueError(f"baseline and focal length must be positive, got b={self.b}, f={self.f}")


class SceneBox(NamedTuple):
    class_id: int  # detection label, 1-based (0 = background)
    x: float
    y: float
    w: float
    h: float
    depth_m: Optional[float]

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class Scene:
    """One sample: image, boxes with class + depth, mask, disparity, camera."""

    image: np.ndarray  # (H, W, 3) uint8
    boxes: List[SceneBox]
    mask: np.ndarray  # (H, W) uint8, 255 = ignore
    disparity: np.ndarray  # (H, W) float32, <= 0 invalid
    camera: CameraModel
    scene_id: str = ""

    @property
    def size(self) -> Tuple[int, int]:
        h, w = self.image.shape[:2]
        return (w, h)


def distance_from_disparity(camera: CameraModel, d: float) -> float:
    """D = b * f / d for a positive disparity in pixels."""
    if d <= 0:
        raise InvalidDisparityError(f"disparity must be positive, got {d}")
    return camera.b * camera.f / d


def box_pixel_window(box: SceneBox, shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
    """Half-open pixel window (y0, y1, x0, x1) covered by a float box."""
    h, w = shape
    x0 = max(int(np.floor(box.x)), 0)
    y0 = max(int(np.floor(box.y)), 0)
    x1 = min(int(np.ceil(box.x + box.w)), w)
    y1 = min(int(np.ceil(box.y + box.h)), h)
    return y0, y1, x0, x1


def box_distance_gt(scene: Scene, box: SceneBox) -> Optional[float]:
    """Median of valid disparities inside the box, converted to meters.

    Returns None when the box holds no valid disparity; such boxes carry no
    depth ground truth and drop out of depth losses and metrics.
    """
    y0, y1, x0, x1 = box_pixel_window(box, scene.disparity.shape)
    if y1 <= y0 or x1 <= x0:
        return None
    patch = scene.disparity[y0:y1, x0:x1]
    valid = patch[patch > 0]
    if valid.size == 0:
        return None
    return distance_from_disparity(scene.camera, float(np.median(valid)))


def subsample_mask(mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """Nearest-neighbor subsampling: output (i, j) = input (factor*i, factor*j)."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask extents {h}x{w} not divisible by {factor}")
    return mask[::factor, ::factor]


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

# planted real-world extents (width, height) in meters per detection class
OBJECT_SIZES = {
    1: (0.6, 1.7),   # person
    2: (0.8, 1.8),   # rider
    3: (1.9, 1.5),   # car
    4: (2.5, 3.0),   # truck
    5: (2.6, 3.2),   # bus
    6: (3.0, 3.6),   # train
    7: (0.9, 1.4),   # motorcycle
    8: (0.7, 1.2),   # bicycle
}

OBJECT_COLORS = {
    1: (220, 20, 60), 2: (255, 0, 0), 3: (0, 0, 142), 4: (0, 0, 70),
    5: (0, 60, 100), 6: (0, 80, 100), 7: (0, 0, 230), 8: (119, 11, 32),
}

BACKGROUND_LAYOUT = (
    # (seg class id, color, planted distance in meters or None for invalid)
    (10, (70, 130, 180), None),   # sky, no disparity
    (2, (70, 70, 70), 50.0),      # building band
    (0, (128, 64, 128), 15.0),    # road
)


def object_size_for(class_id: int, depth_m: float, focal_px: float) -> Tuple[float, float]:
    """On-image (w, h) in pixels of a planted object at the given distance."""
    sw, sh = OBJECT_SIZES[class_id]
    return focal_px * sw / depth_m, focal_px * sh / depth_m


def synth_generate(
    seed: int,
    count: int,
    size: Tuple[int, int],
    camera: Optional[CameraModel] = None,
    registry: ClassRegistry = DEFAULT_REGISTRY,
    max_objects: int = 6,
    classes: Sequence[int] = tuple(OBJECT_SIZES),
    salt_fraction: float = 0.0,
    invalid_fraction: float = 0.0,
) -> List[Scene]:
    """Deterministic pinhole-consistent scenes.

    Each scene is a striped road/building/sky background plus 1..max_objects
    non-overlapping colored rectangles. For an object of class c at planted
    distance D the on-image extents are f*S/D for the fixed real size S of
    the class, and the disparity inside the box is exactly b*f/D, so the
    distance ground-truth pipeline can be checked end to end.
    """
    w, h = size
    if w % 32 or h % 32:
        raise ValueError(f"scene extents must be divisible by 32, got {w}x{h}")
    if camera is None:
        camera = CameraModel(b=0.22, f=0.6 * w)
    scenes = []
    for index in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
        image = np.zeros((h, w, 3), dtype=np.uint8)
        mask = np.zeros((h, w), dtype=np.uint8)
        disparity = np.zeros((h, w), dtype=np.float32)
        bands = (0.0, 0.35, 0.55, 1.0)
        for (cls, color, dist), top, bot in zip(BACKGROUND_LAYOUT, bands[:-1], bands[1:]):
            y0, y1 = int(top * h), int(bot * h)
            image[y0:y1] = color
            mask[y0:y1] = cls
            if dist is not None:
                disparity[y0:y1] = camera.b * camera.f / dist

        boxes: List[SceneBox] = []
        n_objects = int(rng.integers(1, max_objects + 1))
        for _ in range(n_objects):
            class_id = int(rng.choice(classes))
            sw, sh = OBJECT_SIZES[class_id]
            # keep the box inside the image and its area comfortably above
            # the small-box threshold
            d_fit = camera.f * max(sw / (0.45 * w), sh / (0.45 * h))
            d_area = camera.f * np.sqrt(sw * sh / 400.0)
            d_min, d_max = d_fit, max(d_area, d_fit * 1.2)
            for _try in range(40):
                depth = float(rng.uniform(d_min, d_max))
                bw, bh = object_size_for(class_id, depth, camera.f)
                x = float(rng.uniform(1.0, w - bw - 1.0))
                y = float(rng.uniform(1.0, h - bh - 1.0))
                # store the depth implied by the float32 disparity so the
                # median recovery is exact, not just float32-close
                disp32 = np.float32(camera.b * camera.f / depth)
                depth = camera.b * camera.f / float(disp32)
                candidate = SceneBox(class_id, x, y, bw, bh, depth)
                if all(_disjoint(candidate, other) for other in boxes):
                    boxes.append(candidate)
                    y0, y1, x0, x1 = box_pixel_window(candidate, (h, w))
                    image[y0:y1, x0:x1] = OBJECT_COLORS[class_id]
                    seg_id = registry.seg_id_for_det(class_id)
                    mask[y0:y1, x0:x1] = seg_id if seg_id is not None else IGNORE_LABEL
                    disparity[y0:y1, x0:x1] = disp32
                    break
        if invalid_fraction > 0:
            drop = rng.random((h, w)) < invalid_fraction
            disparity[drop] = 0.0
        if salt_fraction > 0:
            salt = (rng.random((h, w)) < salt_fraction) & (disparity > 0)
            disparity[salt] *= rng.uniform(0.2, 5.0, size=int(salt.sum())).astype(np.float32)
        scenes.append(
            Scene(
                image=image,
                boxes=boxes,
                mask=mask,
                disparity=disparity,
                camera=camera,
                scene_id=f"{index:04d}",
            )
        )
    return scenes


def _disjoint(a: SceneBox, b: SceneBox, margin: float = 2.0) -> bool:
    return (
        a.x + a.w + margin <= b.x
        or b.x + b.w + margin <= a.x
        or a.y + a.h + margin <= b.y
        or b.y + b.h + margin <= a.y
    )


# ---------------------------------------------------------------------------
# on-disk dataset format
# ---------------------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    header, raw = _parse_netpbm_header(data, b"P6")
    w, h = header
    return np.frombuffer(raw[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(path, mask: np.ndarray) -> None:
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    header, raw = _parse_netpbm_header(data, b"P5")
    w, h = header
    return np.frombuffer(raw[: w * h], dtype=np.uint8).reshape(h, w).copy()


def _parse_netpbm_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only 8-bit netpbm supported, got maxval {maxval}")
    return (w, h), data[pos:]


def write_disparity(path, disparity: np.ndarray) -> None:
    h, w = disparity.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(np.ascontiguousarray(disparity, dtype="<f4").tobytes())


def read_disparity(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = struct.unpack("<II", f.read(8))
        raw = f.read(w * h * 4)
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float32)


def save_dataset(scenes: Sequence[Scene], out_dir) -> List[Path]:
    """scenes/NNNN.{ppm,mask.pgm,disp.f32,boxes.txt} plus camera.txt."""
    out_dir = Path(out_dir)
    scene_dir = out_dir / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, scene in enumerate(scenes):
        stem = scene.scene_id or f"{i:04d}"
        paths = {
            "image": scene_dir / f"{stem}.ppm",
            "mask": scene_dir / f"{stem}.mask.pgm",
            "disp": scene_dir / f"{stem}.disp.f32",
            "boxes": scene_dir / f"{stem}.boxes.txt",
        }
        write_ppm(paths["image"], scene.image)
        write_pgm(paths["mask"], scene.mask)
        write_disparity(paths["disp"], scene.disparity)
        with open(paths["boxes"], "w") as f:
            for b in scene.boxes:
                depth = "nan" if b.depth_m is None else f"{b.depth_m:.9g}"
                f.write(f"{b.class_id} {b.x:.9g} {b.y:.9g} {b.w:.9g} {b.h:.9g} {depth}\n")
        written.extend(paths.values())
    if scenes:
        cam = scenes[0].camera
        cam_path = out_dir / "camera.txt"
        cam_path.write_text(f"{cam.b:.9g} {cam.f:.9g}\n")
        written.append(cam_path)
    return written


def load_dataset(root) -> List[Scene]:
    root = Path(root)
    cam_path = root / "camera.txt"
    if not cam_path.exists():
        raise FileNotFoundError(f"no camera.txt under {root}")
    b, f = (float(v) for v in cam_path.read_text().split())
    camera = CameraModel(b=b, f=f)
    scenes = []
    for img_path in sorted((root / "scenes").glob("*.ppm")):
        stem = img_path.name[: -len(".ppm")]
        boxes = []
        boxes_path = img_path.with_name(f"{stem}.boxes.txt")
        if boxes_path.exists():
            for line in boxes_path.read_text().splitlines():
                parts = line.split()
                if not parts:
                    continue
                depth = float(parts[5])
                boxes.append(
                    SceneBox(
                        int(parts[0]),
                        float(parts[1]),
                        float(parts[2]),
                        float(parts[3]),
                        float(parts[4]),
                        None if np.isnan(depth) else depth,
                    )
                )
        scenes.append(
            Scene(
                image=read_ppm(img_path),
                boxes=boxes,
                mask=read_pgm(img_path.with_name(f"{stem}.mask.pgm")),
                disparity=read_disparity(img_path.with_name(f"{stem}.disp.f32")),
                camera=camera,
                scene_id=stem,
            )
        )
    return scenes
