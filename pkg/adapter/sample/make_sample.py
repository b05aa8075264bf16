"""Regenerate the bundled sample clip (6 s, 8 fps, 128x72, MJPG).

A bright square drifts across a dark gradient; the text "GOAL 12" is burned
in between 2.5 s and 4.0 s so OCR backends have something to find.
"""

from pathlib import Path

import cv2
import numpy as np

FPS = 8.0
SECONDS = 6.0
W, H = 128, 72
TEXT = "GOAL 12"
TEXT_SPAN = (2.5, 4.0)


def make(path: Path) -> None:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), FPS, (W, H))
    if not writer.isOpened():
        raise RuntimeError("MJPG writer unavailable")
    n = int(SECONDS * FPS)
    for i in range(n):
        t = i / FPS
        frame = np.zeros((H, W, 3), dtype=np.uint8)
        frame[:, :, 0] = np.linspace(20, 80, W, dtype=np.uint8)[None, :]
        frame[:, :, 2] = np.linspace(60, 10, H, dtype=np.uint8)[:, None]
        x = int((W - 24) * i / max(n - 1, 1))
        y = H // 3
        cv2.rectangle(frame, (x, y), (x + 20, y + 20), (40, 220, 240), thickness=-1)
        if TEXT_SPAN[0] <= t <= TEXT_SPAN[1]:
            cv2.rectangle(frame, (6, H - 26), (W - 6, H - 6), (0, 0, 0), thickness=-1)
            cv2.putText(frame, TEXT, (12, H - 11), cv2.FONT_HERSHEY_SIMPLEX, 0.5, (255, 255, 255), 1, cv2.LINE_AA)
        writer.write(frame)
    writer.release()


if __name__ == "__main__":
    out = Path(__file__).parent / "sample.avi"
    make(out)
    print(f"wrote {out} ({out.stat().st_size} bytes)")
