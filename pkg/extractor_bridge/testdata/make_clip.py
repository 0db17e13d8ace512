"""Regenerate clip_1s.avi: a 24-frame 64x64 formula-drawn test clip.

Every pixel is a closed-form function of (frame, row, column), so the clip
can be rebuilt from scratch without any stored randomness. The content has
a moving bright square plus smooth gradients, giving the featurizers
non-constant statistics across frames and windows.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

FRAMES = 24
SIZE = 64
FPS = 24.0


def render_frame(index: int) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
    phase = index / FRAMES
    blue = (128 + 100 * np.sin(2 * np.pi * (cols / SIZE + phase)))
    green = (128 + 100 * np.cos(2 * np.pi * (rows / SIZE - phase)))
    red = np.full((SIZE, SIZE), 64.0)
    top = int(8 + 40 * phase)
    left = int(48 - 40 * phase)
    red[top:top + 12, left:left + 12] = 255.0
    frame = np.stack([blue, green, red], axis=-1)
    return np.clip(frame, 0, 255).astype(np.uint8)


def main() -> None:
    out = Path(__file__).with_name("clip_1s.avi")
    writer = cv2.VideoWriter(str(out), cv2.VideoWriter_fourcc(*"MJPG"),
                             FPS, (SIZE, SIZE))
    if not writer.isOpened():
        raise RuntimeError("VideoWriter failed to open")
    for index in range(FRAMES):
        writer.write(render_frame(index))
    writer.release()
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
