"""Synthetic on-disk scenes for CLI and end-to-end tests."""

import numpy as np

from mono3dkit.dataio import DetectionEntry, write_depth, write_detections
from mono3dkit.pseudolabel import Detection2D

CLASSES = ("Pedestrian", "Car", "Cyclist")
RASTER_W, RASTER_H = 320, 240


def write_calib(path, fx, fy, cx, cy):
    line = f"P2: {fx} 0.0 {cx} 0.0 0.0 {fy} {cy} 0.0 0.0 0.0 1.0 0.0\n"
    path.write_text(line)


def build_scene(root, n_images=20, seed=123, dets_per_image=(1, 6)):
    """Create detections/, depth/ and calib/ dirs under `root`.

    Returns the list of image ids.  Depth rasters carry an invalid left
    band plus random speckle so the no-depth path gets exercised; scores
    are quantized to two decimals to survive label round trips.
    """
    rng = np.random.default_rng(seed)
    det_dir = root / "detections"
    depth_dir = root / "depth"
    calib_dir = root / "calib"
    for d in (det_dir, depth_dir, calib_dir):
        d.mkdir(parents=True, exist_ok=True)

    images = {}
    ids = []
    for i in range(n_images):
        image = f"{i:06d}"
        ids.append(image)

        depth = rng.uniform(4.0, 30.0, size=(RASTER_H, RASTER_W))
        depth[:, :8] = np.nan
        speckle = rng.random(size=depth.shape) < 0.01
        depth[speckle] = -1.0
        write_depth(depth, depth_dir / f"{image}.dpr")

        fx = float(rng.uniform(400.0, 800.0))
        fy = fx * float(rng.uniform(0.98, 1.02))
        cx = RASTER_W / 2 + float(rng.uniform(-5, 5))
        cy = RASTER_H / 2 + float(rng.uniform(-5, 5))
        write_calib(calib_dir / f"{image}.txt", fx, fy, cx, cy)

        entries = []
        for _ in range(int(rng.integers(*dets_per_image))):
            cls = CLASSES[int(rng.integers(0, len(CLASSES)))]
            left = float(rng.uniform(10, RASTER_W - 90))
            top = float(rng.uniform(10, RASTER_H - 90))
            right = left + float(rng.uniform(20, 70))
            bottom = top + float(rng.uniform(30, 70))
            score = round(float(rng.uniform(0.05, 0.99)), 2)
            yaw = float(rng.uniform(-np.pi, np.pi))
            entries.append(DetectionEntry(Detection2D(cls, left, top, right, bottom, score), yaw))
        images[image] = entries

    write_detections(images, det_dir / "scene.jsonl")
    return ids
