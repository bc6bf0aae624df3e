import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ebot.geometry import BoundingBox  # noqa: E402
from ebot.sequence import FrameDetections, Seed, Sequence  # noqa: E402
from ebot.tracklets import Tracklet  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def acceptance_line():
    """Record one ``PASS``/``FAIL`` line for the end-of-run acceptance summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def make_sequence(boxes_per_frame, frame_size=(100, 100), seq_id="s"):
    frames = tuple(
        FrameDetections(k, tuple(BoundingBox(*b) for b in boxes)) for k, boxes in enumerate(boxes_per_frame)
    )
    return Sequence(id=seq_id, frames=frames, frame_size=frame_size)


def make_tracklet(tid, boxes, scores=None, seed_frame=0):
    boxes = tuple(BoundingBox(*b) for b in boxes)
    if scores is None:
        scores = tuple(1.0 for _ in boxes)
    return Tracklet(tid, Seed(tid, seed_frame, boxes[seed_frame]), boxes, tuple(float(s) for s in scores))
