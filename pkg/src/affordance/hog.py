"""Per-cell HOG features and image pyramids for sliding-window detection.

Descriptors are the usual 9 unsigned orientation bins over 8x8-pixel cells
with 2x2-cell L2-Hys block normalisation.  Each cell keeps the average of
its normalised copies from the (up to four) blocks that contain it, so a
window descriptor is simply a slice of the image-level cell array and
detection scores are covariant with whole-cell shifts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage
from skimage.feature import hog as _sk_hog

from .errors import WindowTooSmall

CELL = 8
BINS = 9


def _as_float_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError("image must be (h, w) or (h, w, channels)")
    return img


def hog_cells(image: np.ndarray, cell: int = CELL, bins: int = BINS) -> np.ndarray:
    """(rows, cols, bins) block-normalised HOG for the whole image.

    Trailing pixels that do not fill a complete cell are ignored.  Images
    smaller than 2x2 cells raise ``WindowTooSmall``.
    """
    img = _as_float_image(image)
    nr, nc = img.shape[0] // cell, img.shape[1] // cell
    if nr < 2 or nc < 2:
        raise WindowTooSmall(f"need at least 2x2 cells of {cell}px, got {img.shape[:2]}")
    blocks = _sk_hog(img, orientations=bins, pixels_per_cell=(cell, cell), cells_per_block=(2, 2),
                     block_norm="L2-Hys", feature_vector=False,
                     channel_axis=-1 if img.ndim == 3 else None)
    # blocks: (nr-1, nc-1, 2, 2, bins); scatter every block copy back to its cell
    acc = np.zeros((nr, nc, bins))
    cnt = np.zeros((nr, nc, 1))
    for dr in (0, 1):
        for dc in (0, 1):
            acc[dr:dr + nr - 1, dc:dc + nc - 1] += blocks[:, :, dr, dc]
            cnt[dr:dr + nr - 1, dc:dc + nc - 1] += 1
    return acc / cnt


def extract_hog(image: np.ndarray, window: Tuple[int, int, int, int], cell: int = CELL) -> np.ndarray:
    """HOG descriptor of ``window`` = (row, col, height, width) in pixels, computed on the crop."""
    r, c, h, w = (int(v) for v in window)
    img = _as_float_image(image)
    if r < 0 or c < 0 or r + h > img.shape[0] or c + w > img.shape[1]:
        raise ValueError("window lies outside the image")
    if h < 2 * cell or w < 2 * cell:
        raise WindowTooSmall(f"window {h}x{w} is smaller than 2x2 cells")
    return hog_cells(img[r:r + h, c:c + w], cell)


def resize(image: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment (channels preserved)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    H, W = shape
    rows = (np.arange(H) + 0.5) * h / H - 0.5
    cols = (np.arange(W) + 0.5) * w / W - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    if img.ndim == 2:
        return ndimage.map_coordinates(img, [rr, cc], order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(img[..., k], [rr, cc], order=1, mode="nearest")
                     for k in range(img.shape[2])], axis=-1)


@dataclass(frozen=True)
class PyramidLevel:
    scale: float          # level pixels per original pixel
    cells: np.ndarray     # (rows, cols, bins)

    def window_box(self, row: int, col: int, size_cells: int, cell: int = CELL) -> Tuple[float, float, float]:
        """(top, left, side) in original-image pixels of a window at cell (row, col)."""
        return row * cell / self.scale, col * cell / self.scale, size_cells * cell / self.scale


def cell_colour(image: np.ndarray, shape: Tuple[int, int], cell: int = CELL) -> np.ndarray:
    """Mean colour (or intensity) of each complete cell, (rows, cols, channels)."""
    img = _as_float_image(image)
    if img.ndim == 2:
        img = img[..., None]
    nr, nc = shape
    return img[:nr * cell, :nc * cell].reshape(nr, cell, nc, cell, -1).mean(axis=(1, 3))


def pyramid(image: np.ndarray, window_cells: int, step: float = 2 ** 0.5,
            max_levels: int = 8, cell: int = CELL, colour_weight: float = 0.0) -> List[PyramidLevel]:
    """HOG levels at scales 1, 1/step, 1/step^2, ... while a window still fits.

    With ``colour_weight > 0`` every cell descriptor is extended by its
    mean colour times that weight.
    """
    img = _as_float_image(image)
    h, w = img.shape[:2]
    levels = []
    for k in range(max_levels):
        s = step ** (-k)
        H, W = int(round(h * s)), int(round(w * s))
        if H < window_cells * cell or W < window_cells * cell:
            break
        scaled = img if k == 0 else resize(img, (H, W))
        cells = hog_cells(scaled, cell)
        if colour_weight > 0:
            cells = np.concatenate([cells, colour_weight * cell_colour(scaled, cells.shape[:2], cell)],
                                   axis=2)
        levels.append(PyramidLevel(s, cells))
    return levels
