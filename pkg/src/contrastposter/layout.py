"""Layout document produced by the arranger agent.

A LayoutSpec assigns exactly one visual element (with color attributes and
style tags) to every region of the canvas and places the visual texts in
normalized boxes.  The JSON schema shipped under assets/ is versioned; the
validator here enforces the structural rules, and its messages feed the
agent's repair retries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from importlib import resources

SCHEMA_VERSION = "1"
MAX_TEXTBOX_OVERLAP = 0.20  # fraction of the smaller box's area


@dataclass(frozen=True)
class LayoutRegion:
    region_id: int
    element: str
    description: str
    hues: tuple[float, ...]
    color_names: tuple[str, ...]
    style_tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class TextBox:
    content: str
    bbox: tuple[float, float, float, float]  # normalized x, y, w, h
    emphasis: str = "body"  # "title" | "body"


@dataclass(frozen=True)
class LayoutSpec:
    version: str
    regions: tuple[LayoutRegion, ...]
    global_style: tuple[str, ...]
    text_boxes: tuple[TextBox, ...] = ()
    rationale: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_dict(doc: dict) -> "LayoutSpec":
        regions = tuple(
            LayoutRegion(
                region_id=int(r["region_id"]),
                element=str(r["element"]),
                description=str(r.get("description", "")),
                hues=tuple(float(h) for h in _as_list(r.get("hues", r.get("hue", ())))),
                color_names=tuple(str(c) for c in _as_list(r.get("color_names", r.get("color_name", ())))),
                style_tags=tuple(str(s) for s in r.get("style_tags", ())),
            )
            for r in doc.get("regions", ())
        )
        boxes = tuple(
            TextBox(
                content=str(b["content"]),
                bbox=tuple(float(v) for v in b["bbox"]),
                emphasis=str(b.get("emphasis", "body")),
            )
            for b in doc.get("text_boxes", ())
        )
        return LayoutSpec(
            version=str(doc.get("version", "")),
            regions=regions,
            global_style=tuple(str(s) for s in doc.get("global_style", ())),
            text_boxes=boxes,
            rationale=str(doc.get("rationale", "")),
        )


def _as_list(value):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return value
    return (value,)


def load_layout_schema() -> dict:
    text = resources.files("contrastposter").joinpath("assets/layout_schema.json").read_text("utf-8")
    return json.loads(text)


def _bbox_overlap_fraction(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    smaller = min(aw * ah, bw * bh)
    if smaller <= 0:
        return 1.0 if inter > 0 else 0.0
    return inter / smaller


def validate_layout(
    layout: LayoutSpec, region_ids, visual_texts: list[str] | None = None
) -> list[str]:
    """Structural violations of a layout (empty list means valid).

    Checks: version, exact one-element-per-region coverage of the RegionSet's
    ids, normalized in-range bboxes, text contents drawn from the theme's
    visual texts, pairwise text box overlap of at most 20% of the smaller box,
    hue range, and emphasis values.
    """
    problems: list[str] = []
    if layout.version != SCHEMA_VERSION:
        problems.append(f"version must be '{SCHEMA_VERSION}', got '{layout.version}'")
    want = sorted(int(r) for r in region_ids)
    got = sorted(r.region_id for r in layout.regions)
    if got != want:
        problems.append(f"layout regions {got} do not match canvas regions {want}")
    if len(set(got)) != len(got):
        problems.append("duplicate region assignment")
    for r in layout.regions:
        if not r.element.strip():
            problems.append(f"region {r.region_id} has an empty element name")
        for h in r.hues:
            if not 0.0 <= h < 360.0:
                problems.append(f"region {r.region_id} hue {h} outside [0, 360)")
    for idx, box in enumerate(layout.text_boxes):
        x, y, w, h = box.bbox
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 and w > 0 and h > 0 and x + w <= 1.0 + 1e-9 and y + h <= 1.0 + 1e-9):
            problems.append(f"text box {idx} bbox {list(box.bbox)} not inside the unit square")
        if box.emphasis not in ("title", "body"):
            problems.append(f"text box {idx} emphasis '{box.emphasis}' not in (title, body)")
        if visual_texts is not None and box.content not in visual_texts:
            problems.append(f"text box {idx} content '{box.content}' is not one of the visual texts")
    for a in range(len(layout.text_boxes)):
        for b in range(a + 1, len(layout.text_boxes)):
            frac = _bbox_overlap_fraction(layout.text_boxes[a].bbox, layout.text_boxes[b].bbox)
            if frac > MAX_TEXTBOX_OVERLAP:
                problems.append(
                    f"text boxes {a} and {b} overlap by {frac:.0%} (max {MAX_TEXTBOX_OVERLAP:.0%})"
                )
    return problems
