"""Run-length encoding of binary mask bitmaps.

Bitmaps are flattened row-major. The encoding is a list of alternating run
lengths starting with a run of True pixels; the final run of False pixels is
trimmed, so an all-False bitmap encodes to the single zero-length run [0].
"""
import numpy as np

from ..errors import CorruptRegion, ShapeError


def rle_encode(bitmap):
    """Encode an H x W boolean bitmap into (counts, height, width)."""
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2:
        raise ShapeError(f"bitmap must be 2-D, got shape {bitmap.shape}")
    flat = bitmap.reshape(-1).astype(bool)
    if flat.size == 0:
        return [0], bitmap.shape[0], bitmap.shape[1]
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if not flat[0]:
        counts = [0] + counts
    if len(counts) % 2 == 0:  # trailing run is False: trim it
        counts = counts[:-1]
    return counts, int(bitmap.shape[0]), int(bitmap.shape[1])


def rle_decode(counts, height, width):
    """Decode run counts back into an H x W boolean bitmap."""
    total = height * width
    counts = list(counts)
    if any(c < 0 for c in counts):
        raise CorruptRegion(f"negative run length in {counts}")
    if sum(counts) > total:
        raise CorruptRegion(
            f"runs cover {sum(counts)} pixels but grid has only {total}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = True
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return flat.reshape(height, width)


def rle_area(counts):
    """Number of True pixels without decoding."""
    return int(sum(counts[::2]))
