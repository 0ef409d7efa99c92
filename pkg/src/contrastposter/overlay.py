"""Text overlay rendering with an embedded fixed-metrics bitmap font.

A minimal stand-in for the final typography stage: visual texts are drawn
into their layout boxes with a 5x7 pixel font scaled to the box height, in
black or white depending on which contrasts more with the pixels underneath.
Overlong strings truncate with an ellipsis so a rendered box never overflows
its rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from contrastposter.imaging import luminance
from contrastposter.layout import LayoutSpec

GLYPH_W, GLYPH_H = 5, 7
ADVANCE = GLYPH_W + 1  # one blank column between glyphs
LINE_H = GLYPH_H + 1

# 5x7 glyph rows, most significant bit = leftmost column
FONT: dict[str, tuple[int, ...]] = {
    "A": (0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    " ": (0, 0, 0, 0, 0, 0, 0),
    ".": (0, 0, 0, 0, 0, 0x0C, 0x0C),
    ",": (0, 0, 0, 0, 0, 0x0C, 0x08),
    "!": (0x04, 0x04, 0x04, 0x04, 0x04, 0, 0x04),
    "?": (0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04),
    "-": (0, 0, 0, 0x1F, 0, 0, 0),
    "'": (0x0C, 0x04, 0x08, 0, 0, 0, 0),
    ":": (0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0),
    "…": (0, 0, 0, 0, 0, 0, 0x15),
    "(": (0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02),
    ")": (0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08),
    "/": (0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10),
    "+": (0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0),
    "&": (0x0C, 0x12, 0x14, 0x08, 0x15, 0x12, 0x0D),
    '"': (0x0A, 0x0A, 0x14, 0, 0, 0, 0),
    "#": (0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A),
}


@dataclass(frozen=True)
class OverlayBox:
    text: str
    rect: tuple[int, int, int, int]  # x, y, w, h in pixels
    scale: int
    emphasis: str


@dataclass(frozen=True)
class TextOverlayPlan:
    boxes: tuple[OverlayBox, ...]


def text_width(text: str, scale: int) -> int:
    if not text:
        return 0
    return (len(text) * ADVANCE - 1) * scale


def _fit_text(text: str, rect_w: int, scale: int) -> str:
    """Truncate with an ellipsis so the rendered string fits rect_w."""
    if text_width(text, scale) <= rect_w:
        return text
    for n in range(len(text) - 1, 0, -1):
        cand = text[:n] + "…"
        if text_width(cand, scale) <= rect_w:
            return cand
    return "…" if text_width("…", scale) <= rect_w else ""


def build_overlay_plan(layout: LayoutSpec, canvas_hw: tuple[int, int]) -> TextOverlayPlan:
    """Resolve normalized layout text boxes to pixel rects with fitted font scale."""
    h, w = canvas_hw
    boxes = []
    for tb in layout.text_boxes:
        bx, by, bw, bh = tb.bbox
        x0 = int(np.clip(round(bx * w), 0, w - 1))
        y0 = int(np.clip(round(by * h), 0, h - 1))
        x1 = int(np.clip(round((bx + bw) * w), x0 + 1, w))
        y1 = int(np.clip(round((by + bh) * h), y0 + 1, h))
        rect = (x0, y0, x1 - x0, y1 - y0)
        scale = max(1, (y1 - y0) // LINE_H)
        text = _fit_text(tb.content, x1 - x0, scale)
        boxes.append(OverlayBox(text=text, rect=rect, scale=scale, emphasis=tb.emphasis))
    return TextOverlayPlan(boxes=tuple(boxes))


def _draw_glyph(img: np.ndarray, ch: str, x: int, y: int, scale: int, color) -> None:
    rows = FONT.get(ch.upper(), FONT["?"])
    h, w = img.shape[:2]
    for ry, bits in enumerate(rows):
        for rx in range(GLYPH_W):
            if bits & (1 << (GLYPH_W - 1 - rx)):
                y0, x0 = y + ry * scale, x + rx * scale
                img[max(0, y0):min(h, y0 + scale), max(0, x0):min(w, x0 + scale)] = color


def render_text_overlay(image: np.ndarray, plan: TextOverlayPlan) -> np.ndarray:
    """Draw every planned box; fill color is black or white by luminance contrast."""
    img = np.array(image, dtype=np.uint8, copy=True)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=2)
    for box in plan.boxes:
        if not box.text:
            continue
        x, y, w, h = box.rect
        mean_lum = float(luminance(img[y:y + h, x:x + w]).mean())
        color = (255, 255, 255) if mean_lum < 127.5 else (0, 0, 0)
        # vertically center the single line inside the rect
        ty = y + max(0, (h - GLYPH_H * box.scale) // 2)
        tx = x
        for ch in box.text:
            _draw_glyph(img, ch, tx, ty, box.scale, color)
            tx += ADVANCE * box.scale
    return img
