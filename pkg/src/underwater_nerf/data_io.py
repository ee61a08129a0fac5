"""Posed multi-view datasets: COLMAP text IO, image IO, scene configs and toy scenes.

Cameras follow the COLMAP/OpenCV convention: x right, y down, z forward, and
``Pose`` stores the world-to-camera transform ``x_cam = R @ x_world + t``.
Integer pixel coordinates address pixel centers.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.spatial.transform import Rotation

from .validation import check_image, check_rotation, check_vector

logger = logging.getLogger(__name__)

SPLITS = ("easy", "medium", "hard", "synthetic")
UNDISTORT_TOL = 1e-8
UNDISTORT_MAX_ITER = 50


class ColmapFormatError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    width: int = 1
    height: int = 1

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )
        if not np.isfinite(self.k1):
            raise ValueError("k1 must be finite")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = check_rotation(self.rotation)
        t = check_vector(self.translation, 3, "translation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_quaternion(cls, qvec, tvec):
        return cls(quaternion_to_rotation(qvec), tvec)

    @classmethod
    def look_at(cls, center, target, down=(0.0, 1.0, 0.0)):
        center = np.asarray(center, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - center
        forward /= np.linalg.norm(forward)
        right = np.cross(np.asarray(down, dtype=np.float64), forward)
        right /= np.linalg.norm(right)
        R = np.stack([right, np.cross(forward, right), forward])
        return cls(R, -R @ center)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self):
        """Unit viewing direction in world coordinates."""
        return self.rotation[2].copy()

    def quaternion(self):
        return rotation_to_quaternion(self.rotation)


@dataclass(frozen=True)
class DegradationParams:
    beta_D: tuple = (0.35, 0.15, 0.08)
    beta_B: tuple = (0.3, 0.15, 0.1)
    ambient: tuple = (0.1, 0.5, 0.6)

    def __post_init__(self):
        for name in ("beta_D", "beta_B"):
            vec = check_vector(getattr(self, name), 3, name, nonnegative=True)
            object.__setattr__(self, name, tuple(float(v) for v in vec))
        amb = check_vector(self.ambient, 3, "ambient", nonnegative=True)
        if np.any(amb > 1):
            raise ValueError(f"ambient must lie in [0, 1], got {amb}")
        object.__setattr__(self, "ambient", tuple(float(v) for v in amb))

    @classmethod
    def clear_water(cls):
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact scene components held back from a synthetic dataset."""

    clean: list
    depths: list
    params: DegradationParams

    def transmissions(self, index):
        z = self.depths[index][..., None]
        t_d = np.exp(-np.asarray(self.params.beta_D) * z)
        t_b = np.exp(-np.asarray(self.params.beta_B) * z)
        return t_d, t_b

    def ambient_map(self, index):
        h, w = self.depths[index].shape
        return np.broadcast_to(np.asarray(self.params.ambient), (h, w, 3)).copy()


@dataclass(frozen=True, eq=False)
class SceneDataset:
    images: list
    cameras: list
    near: float
    far: float
    split: str = "synthetic"
    view_ids: list = None
    ground_truth: GroundTruth = field(default=None, repr=False)

    def __post_init__(self):
        images = [check_image(im, f"images[{i}]") for i, im in enumerate(self.images)]
        for im in images:
            im.setflags(write=False)
        view_ids = list(self.view_ids) if self.view_ids is not None else list(range(len(images)))
        if not (len(images) == len(self.cameras) == len(view_ids)):
            raise ValueError("images, cameras and view_ids must have equal length")
        if len(images) < 2:
            raise ValueError(f"a scene needs at least 2 views, got {len(images)}")
        if len(set(view_ids)) != len(view_ids):
            raise ValueError("view_ids must be unique")
        if not (0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        for i, ((intr, _), im) in enumerate(zip(self.cameras, images)):
            if im.shape[:2] != (intr.height, intr.width):
                raise ValueError(
                    f"view {i}: image is {im.shape[1]}x{im.shape[0]} but camera says "
                    f"{intr.width}x{intr.height}"
                )
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "cameras", list(self.cameras))
        object.__setattr__(self, "view_ids", view_ids)

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images[0].shape[:2]

    @property
    def poses(self):
        return [pose for _, pose in self.cameras]

    def index_of(self, view_id):
        return self.view_ids.index(view_id)


# --- rotations ---------------------------------------------------------------


def quaternion_to_rotation(qvec, tol=1e-3):
    q = np.asarray(qvec, dtype=np.float64)
    norm = np.linalg.norm(q)
    if q.shape != (4,) or abs(norm - 1.0) > tol:
        raise ValueError(f"quaternion must have unit norm (tolerance {tol}), got norm {norm}")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R):
    """Inverse of ``quaternion_to_rotation`` as (qw, qx, qy, qz) with ``qw >= 0``."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


# --- distortion ----------------------------------------------------------------


def distort_pixel(intrinsics, ideal):
    """Apply SIMPLE_RADIAL distortion to ideal pinhole pixel(s) of shape (..., 2)."""
    ideal = np.asarray(ideal, dtype=np.float64)
    x = (ideal[..., 0] - intrinsics.cx) / intrinsics.fx
    y = (ideal[..., 1] - intrinsics.cy) / intrinsics.fy
    scale = 1.0 + intrinsics.k1 * (x * x + y * y)
    return np.stack([intrinsics.fx * x * scale + intrinsics.cx, intrinsics.fy * y * scale + intrinsics.cy], axis=-1)


def undistort_points(intrinsics, observed):
    """Vectorized fixed-point inversion of ``distort_pixel`` for shape (..., 2)."""
    observed = np.asarray(observed, dtype=np.float64)
    if intrinsics.k1 == 0.0:
        return observed.copy()
    xd = (observed[..., 0] - intrinsics.cx) / intrinsics.fx
    yd = (observed[..., 1] - intrinsics.cy) / intrinsics.fy
    x, y = xd.copy(), yd.copy()
    for _ in range(UNDISTORT_MAX_ITER):
        scale = 1.0 + intrinsics.k1 * (x * x + y * y)
        x, y = xd / scale, yd / scale
        ideal = np.stack([intrinsics.fx * x + intrinsics.cx, intrinsics.fy * y + intrinsics.cy], axis=-1)
        residual = np.abs(distort_pixel(intrinsics, ideal) - observed)
        if np.all(residual < UNDISTORT_TOL):
            return ideal
    raise ConvergenceError(
        f"undistortion did not converge in {UNDISTORT_MAX_ITER} iterations (k1={intrinsics.k1})"
    )


def undistort_pixel(intrinsics, observed):
    """Ideal pinhole pixel ``u`` with ``distort_pixel(u) == observed``."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != (2,):
        raise ValueError(f"observed must be a 2-vector, got shape {observed.shape}")
    u, v = observed
    if not (-0.5 <= u <= intrinsics.width - 0.5 and -0.5 <= v <= intrinsics.height - 0.5):
        raise ValueError(f"pixel {observed} outside the {intrinsics.width}x{intrinsics.height} image")
    return undistort_points(intrinsics, observed)


# --- COLMAP text format --------------------------------------------------------

_MODEL_PARAMS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "SIMPLE_RADIAL": 4}


def _intrinsics_from_colmap(model, width, height, params, lineno):
    if model not in _MODEL_PARAMS:
        raise ColmapFormatError(
            f"line {lineno}: unsupported camera model {model!r} "
            f"(supported: {', '.join(_MODEL_PARAMS)})"
        )
    if len(params) != _MODEL_PARAMS[model]:
        raise ColmapFormatError(
            f"line {lineno}: {model} expects {_MODEL_PARAMS[model]} params, got {len(params)}"
        )
    if model == "SIMPLE_PINHOLE":
        f, cx, cy = params
        return CameraIntrinsics(f, f, cx, cy, 0.0, width, height)
    if model == "PINHOLE":
        fx, fy, cx, cy = params
        return CameraIntrinsics(fx, fy, cx, cy, 0.0, width, height)
    f, cx, cy, k1 = params
    return CameraIntrinsics(f, f, cx, cy, k1, width, height)


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def read_colmap_cameras(path):
    cameras = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        try:
            cam_id, model = int(elems[0]), elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = [float(v) for v in elems[4:]]
        except (IndexError, ValueError) as exc:
            raise ColmapFormatError(f"{path}: line {lineno}: malformed camera line: {exc}") from None
        try:
            cameras[cam_id] = _intrinsics_from_colmap(model, width, height, params, lineno)
        except ColmapFormatError as exc:
            raise ColmapFormatError(f"{path}: {exc}") from None
        except ValueError as exc:
            raise ColmapFormatError(f"{path}: line {lineno}: {exc}") from None
    return cameras


def read_colmap_images(path):
    """Return a list of (qvec, tvec, camera_id, name) in file order."""
    lines = _read_lines(path)
    entries = []
    i = 0
    while i < len(lines):
        lineno, line = i + 1, lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        if len(elems) < 10:
            raise ColmapFormatError(f"{path}: line {lineno}: expected 10 fields, got {len(elems)}")
        try:
            qvec = np.array([float(v) for v in elems[1:5]])
            tvec = np.array([float(v) for v in elems[5:8]])
            cam_id = int(elems[8])
        except ValueError as exc:
            raise ColmapFormatError(f"{path}: line {lineno}: malformed image line: {exc}") from None
        norm = np.linalg.norm(qvec)
        if abs(norm - 1.0) > 1e-3:
            raise ColmapFormatError(f"{path}: line {lineno}: quaternion norm {norm:.6f} is not 1")
        name = " ".join(elems[9:])
        entries.append((qvec, tvec, cam_id, name))
        i += 1  # POINTS2D line, possibly empty
    return entries


def parse_colmap(cameras_path, images_path):
    """Parse COLMAP ``cameras.txt``/``images.txt`` into (intrinsics, pose, name) sorted by name."""
    cameras = read_colmap_cameras(cameras_path)
    out = []
    for qvec, tvec, cam_id, name in read_colmap_images(images_path):
        if cam_id not in cameras:
            raise ColmapFormatError(f"{images_path}: image {name!r} references unknown camera {cam_id}")
        out.append((cameras[cam_id], Pose.from_quaternion(qvec, tvec), name))
    out.sort(key=lambda entry: entry[2])
    return out


def _fmt(value):
    return repr(float(value))


def write_colmap(entries, cameras_path, images_path):
    """Write (intrinsics, pose, name) triples as COLMAP text files.

    Identical intrinsics share one camera id. Distortion-free cameras are
    written as PINHOLE, everything else as SIMPLE_RADIAL (which needs fx == fy).
    """
    cam_ids = {}
    cam_lines = ["# Camera list with one line of data per camera:", "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    img_lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for image_id, (intr, pose, name) in enumerate(entries, start=1):
        if intr not in cam_ids:
            cam_ids[intr] = len(cam_ids) + 1
            if intr.k1 == 0.0:
                model, params = "PINHOLE", (intr.fx, intr.fy, intr.cx, intr.cy)
            elif intr.fx == intr.fy:
                model, params = "SIMPLE_RADIAL", (intr.fx, intr.cx, intr.cy, intr.k1)
            else:
                raise ValueError("SIMPLE_RADIAL needs fx == fy when k1 != 0")
            cam_lines.append(
                " ".join([str(cam_ids[intr]), model, str(intr.width), str(intr.height)] + [_fmt(p) for p in params])
            )
        q = pose.quaternion()
        fields = [str(image_id)] + [_fmt(v) for v in q] + [_fmt(v) for v in pose.translation]
        img_lines.append(" ".join(fields + [str(cam_ids[intr]), name]))
        img_lines.append("")
    for path, lines in ((cameras_path, cam_lines), (images_path, img_lines)):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# --- images --------------------------------------------------------------------


def load_image(path):
    """Decode an 8- or 16-bit PNG or a JPEG into a float64 (H, W, 3) array in [0, 1]."""
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".png", ".jpg", ".jpeg"):
        raise ValueError(f"unsupported image format {ext!r}; use PNG or JPEG")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise OSError(f"could not decode image {path}")
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=-1)
    else:
        data = data[..., 2::-1]  # BGR(A) -> RGB
    return np.ascontiguousarray(data, dtype=np.float64) / scale


def save_image(path, image, bits=8):
    """Write an (H, W, 3) or (H, W) float image in [0, 1] as an 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    peak, dtype = (255.0, np.uint8) if bits == 8 else (65535.0, np.uint16)
    data = np.round(arr * peak).astype(dtype)
    if data.ndim == 3:
        data = np.ascontiguousarray(data[..., ::-1])
    if not cv2.imwrite(str(path), data):
        raise OSError(f"failed to write {path}")


# --- scene config and loading --------------------------------------------------

SCENE_CONFIG = "scene.cfg"
GROUND_TRUTH = "ground_truth.npz"
SCENE_KEYS = ("near", "far", "split", "image_dir", "colmap_dir")


def read_key_value(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    config = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        config[key] = value
    return config


def write_key_value(path, config):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.items():
            fh.write(f"{key} = {value}\n")


def default_depth_bounds(poses):
    """(0.05, 5) times the median distance from the cameras to the scene centroid.

    The centroid is the least-squares point closest to all optical axes.
    """
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for pose in poses:
        d = pose.optical_axis
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ pose.center
    if np.linalg.cond(A) > 1e8:
        raise ValueError("optical axes are near-parallel; set near/far in the scene config")
    centroid = np.linalg.solve(A, b)
    dist = np.median([np.linalg.norm(pose.center - centroid) for pose in poses])
    return 0.05 * dist, 5.0 * dist


def load_scene(scene_dir):
    """Load a scene directory: ``scene.cfg``, COLMAP text files and images."""
    cfg_path = os.path.join(scene_dir, SCENE_CONFIG)
    config = read_key_value(cfg_path) if os.path.exists(cfg_path) else {}
    unknown = set(config) - set(SCENE_KEYS)
    if unknown:
        raise ValueError(f"{cfg_path}: unknown keys {sorted(unknown)}")
    colmap_dir = os.path.join(scene_dir, config.get("colmap_dir", "colmap"))
    image_dir = os.path.join(scene_dir, config.get("image_dir", "images"))
    entries = parse_colmap(os.path.join(colmap_dir, "cameras.txt"), os.path.join(colmap_dir, "images.txt"))
    images = [load_image(os.path.join(image_dir, name)) for _, _, name in entries]
    cameras = [(intr, pose) for intr, pose, _ in entries]
    if "near" in config and "far" in config:
        near, far = float(config["near"]), float(config["far"])
    else:
        near, far = default_depth_bounds([pose for _, pose in cameras])
        logger.info("no near/far in %s, using defaults %.4g / %.4g", cfg_path, near, far)
    ground_truth = None
    gt_path = os.path.join(scene_dir, GROUND_TRUTH)
    if os.path.exists(gt_path):
        ground_truth = load_ground_truth(gt_path)
    return SceneDataset(
        images,
        cameras,
        near,
        far,
        split=config.get("split", "synthetic"),
        view_ids=[name for _, _, name in entries],
        ground_truth=ground_truth,
    )


def save_ground_truth(path, truth):
    p = truth.params
    np.savez_compressed(
        path,
        clean=np.stack(truth.clean),
        depth=np.stack(truth.depths),
        beta_D=np.asarray(p.beta_D),
        beta_B=np.asarray(p.beta_B),
        ambient=np.asarray(p.ambient),
    )


def load_ground_truth(path):
    with np.load(path) as data:
        params = DegradationParams(tuple(data["beta_D"]), tuple(data["beta_B"]), tuple(data["ambient"]))
        return GroundTruth(list(data["clean"]), list(data["depth"]), params)


# --- forward degradation -------------------------------------------------------


def synthesize_underwater(clean, depth, params):
    """Degrade a clean image: ``J * exp(-beta_D z) + (1 - exp(-beta_B z)) * A``, clamped to [0, 1]."""
    clean = check_image(clean, "clean")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != clean.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match image shape {clean.shape[:2]}")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ValueError("depth must be finite and nonnegative")
    z = depth[..., None]
    t_d = np.exp(-np.asarray(params.beta_D) * z)
    t_b = np.exp(-np.asarray(params.beta_B) * z)
    return np.clip(clean * t_d + (1.0 - t_b) * np.asarray(params.ambient), 0.0, 1.0)


# --- toy scenes ----------------------------------------------------------------


@dataclass(frozen=True)
class ToySceneConfig:
    size: int = 64
    n_views: int = 8
    seed: int = 0
    params: DegradationParams = DegradationParams()
    distance: float = 4.0  # camera arc radius around the plane center
    arc_degrees: float = 30.0
    fov_degrees: float = 40.0
    near: float = 2.5
    far: float = 6.0
    n_waves: int = 6
    min_wavelength: float = 1.0


def plane_texture(xy, seed, n_waves=6, min_wavelength=1.0):
    """Smooth procedural RGB texture on the plane, values in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    xy = np.asarray(xy, dtype=np.float64)
    out = np.full(xy.shape[:-1] + (3,), 0.5)
    for _ in range(n_waves):
        wavelength = rng.uniform(min_wavelength, 3.0 * min_wavelength)
        angle = rng.uniform(0.0, np.pi)
        k = 2.0 * np.pi / wavelength * np.array([np.cos(angle), np.sin(angle)])
        phase = xy @ k
        amp = rng.uniform(-1.0, 1.0, size=3) * (0.8 / n_waves)
        offset = rng.uniform(0.0, 2.0 * np.pi, size=3)
        out += amp * np.sin(phase[..., None] + offset)
    return np.clip(out, 0.05, 0.95)


def toy_cameras(config):
    f = 0.5 * config.size / np.tan(np.radians(config.fov_degrees) / 2.0)
    c = (config.size - 1) / 2.0
    intr = CameraIntrinsics(f, f, c, c, 0.0, config.size, config.size)
    angles = np.radians(np.linspace(-config.arc_degrees / 2.0, config.arc_degrees / 2.0, config.n_views))
    cameras = []
    for k, phi in enumerate(angles):
        # slight alternating elevation keeps the camera centers off a single line
        elevation = 0.1 * config.distance * (1 if k % 2 else -1) * np.sin(np.radians(config.arc_degrees) / 4)
        center = np.array([config.distance * np.sin(phi), elevation, -config.distance * np.cos(phi)])
        cameras.append((intr, Pose.look_at(center, np.zeros(3))))
    return cameras


def render_plane(intrinsics, pose, seed, n_waves=6, min_wavelength=1.0):
    """Render the textured plane z = 0; returns (clean image, range depth per pixel)."""
    h, w = intrinsics.height, intrinsics.width
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    ideal = undistort_points(intrinsics, np.stack([u, v], axis=-1))
    d_cam = np.stack(
        [(ideal[..., 0] - intrinsics.cx) / intrinsics.fx, (ideal[..., 1] - intrinsics.cy) / intrinsics.fy, np.ones_like(u)],
        axis=-1,
    )
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_world = d_cam @ pose.rotation
    o = pose.center
    with np.errstate(divide="ignore"):
        t = -o[2] / d_world[..., 2]
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("some pixels do not see the plane; narrow the field of view")
    hits = o + t[..., None] * d_world
    return plane_texture(hits[..., :2], seed, n_waves, min_wavelength), t


def make_toy_scene(config=None, **overrides):
    """Procedural plane scene with known components; returns (dataset, ground truth)."""
    config = dataclasses.replace(config or ToySceneConfig(), **overrides)
    if config.n_views < 2:
        raise ValueError(f"a toy scene needs at least 2 views, got {config.n_views}")
    cameras = toy_cameras(config)
    clean, depths, images = [], [], []
    for intr, pose in cameras:
        im, depth = render_plane(intr, pose, config.seed, config.n_waves, config.min_wavelength)
        clean.append(im)
        depths.append(depth)
        images.append(synthesize_underwater(im, depth, config.params))
    truth = GroundTruth(clean, depths, config.params)
    dataset = SceneDataset(
        images,
        cameras,
        config.near,
        config.far,
        split="synthetic",
        view_ids=[f"view_{i:03d}.png" for i in range(config.n_views)],
        ground_truth=truth,
    )
    return dataset, truth


def write_scene(scene_dir, dataset):
    """Write a dataset as images + COLMAP text + scene.cfg (+ ground truth when present)."""
    image_dir = os.path.join(scene_dir, "images")
    colmap_dir = os.path.join(scene_dir, "colmap")
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(colmap_dir, exist_ok=True)
    names = [str(v) if str(v).lower().endswith(".png") else f"{v}.png" for v in dataset.view_ids]
    for name, im in zip(names, dataset.images):
        save_image(os.path.join(image_dir, name), im)
    entries = [(intr, pose, name) for (intr, pose), name in zip(dataset.cameras, names)]
    write_colmap(entries, os.path.join(colmap_dir, "cameras.txt"), os.path.join(colmap_dir, "images.txt"))
    with open(os.path.join(colmap_dir, "points3D.txt"), "w", encoding="utf-8") as fh:
        fh.write("# 3D point list (empty)\n")
    write_key_value(
        os.path.join(scene_dir, SCENE_CONFIG),
        {"near": _fmt(dataset.near), "far": _fmt(dataset.far), "split": dataset.split, "image_dir": "images", "colmap_dir": "colmap"},
    )
    if dataset.ground_truth is not None:
        save_ground_truth(os.path.join(scene_dir, GROUND_TRUTH), dataset.ground_truth)
