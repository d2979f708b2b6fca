"""Binary PGM/PPM writing, sample grids and the cluster palette."""

from __future__ import annotations

import numpy as np

from .data import denormalize_pixels

# index -> RGB; first entries follow the red/yellow/green/blue convention
PALETTE = np.array(
    [
        (230, 25, 75), (255, 225, 25), (60, 180, 75), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
        (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
        (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    ],
    dtype=np.uint8,
)


def write_pnm(path, pixels):
    """P5 for (h, w) uint8 arrays, P6 for (h, w, 3)."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())
    return path


def read_pnm(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=4)
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PNM files are supported")
    payload = parts[4]
    if magic == b"P5":
        return np.frombuffer(payload, dtype=np.uint8)[: w * h].reshape(h, w)
    if magic == b"P6":
        return np.frombuffer(payload, dtype=np.uint8)[: w * h * 3].reshape(h, w, 3)
    raise ValueError(f"unsupported PNM magic {magic!r}")


def write_png(path, pixels):
    """PNG via Pillow; returns None when Pillow is unavailable."""
    try:
        from PIL import Image
    except ImportError:
        return None
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path)
    return path


def image_grid(images, rows, cols, pad=2):
    """Tile (N, h, w, ch) images in [-1, 1] into a uint8 canvas, row-major."""
    images = denormalize_pixels(images)
    n, h, w, ch = images.shape
    canvas = np.zeros((rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad, ch), dtype=np.uint8)
    for k in range(min(n, rows * cols)):
        r, c = divmod(k, cols)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        canvas[y:y + h, x:x + w] = images[k]
    return canvas[..., 0] if ch == 1 else canvas


def write_grid(stem, images, rows, cols, png=False):
    """Write ``stem.pgm`` (or ``.ppm`` for RGB) and optionally ``stem.png``."""
    canvas = image_grid(images, rows, cols)
    ext = ".pgm" if canvas.ndim == 2 else ".ppm"
    paths = [write_pnm(stem + ext, canvas)]
    if png:
        p = write_png(stem + ".png", canvas)
        if p:
            paths.append(p)
    return paths


def assignment_overlay(assignment, grid, image_size):
    """RGB image where each grid point paints its block in its cluster's colour."""
    assignment = np.asarray(assignment)
    if assignment.max(initial=0) >= len(PALETTE):
        raise ValueError(f"palette holds {len(PALETTE)} colours, assignment uses {assignment.max() + 1}")
    gh, gw = grid
    sy, sx = image_size // gh, image_size // gw
    colors = PALETTE[assignment.reshape(gh, gw)]
    return np.repeat(np.repeat(colors, sy, axis=0), sx, axis=1)


def to_rgb(image):
    """(h, w, 1|3) image in [-1, 1] -> uint8 RGB."""
    u8 = denormalize_pixels(image)
    if u8.shape[-1] == 1:
        u8 = np.repeat(u8, 3, axis=-1)
    return u8


def paired_panel(images, overlays, pad=2):
    """One row per example: image on the left, overlay on the right."""
    n = len(images)
    h, w = overlays[0].shape[:2]
    canvas = np.zeros((n * h + (n + 1) * pad, 2 * w + 3 * pad, 3), dtype=np.uint8)
    for i in range(n):
        y = pad + i * (h + pad)
        canvas[y:y + h, pad:pad + w] = to_rgb(images[i])
        canvas[y:y + h, 2 * pad + w:2 * pad + 2 * w] = overlays[i]
    return canvas
