"""The three-agent design loop: cognition, arranger, refiner.

Every exchange with the chat backend demands a JSON reply against an explicit
schema and gets up to three attempts, each retry carrying the previous parse
or validation error back into the conversation.  The prompt wording lives in
editable text assets; the schemas enforced here are the contract.

Color reasoning is grounded locally: hue relations (complementary, analogous)
are recomputed from the numeric hues the model supplies, never trusted from
its labels.
"""

from __future__ import annotations

import json
import os
import re
import urllib.request
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from contrastposter.layout import LayoutSpec, validate_layout
from contrastposter.models import VelocityModel, condition_lookup
from contrastposter.regions import RegionSet
from contrastposter.sampler import SamplerConfig, SamplerTrace, SamplerWorkspace, run_sampler

MAX_ATTEMPTS = 3
COMPLEMENTARY_MIN_DEG = 150.0
ANALOGOUS_MAX_DEG = 30.0


class AgentError(RuntimeError):
    """A step failed after all repair attempts."""


@dataclass(frozen=True)
class Theme:
    theme_text: str
    visual_texts: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.theme_text.strip():
            raise ValueError("theme text must be non-empty")


@dataclass(frozen=True)
class Element:
    name: str
    description: str
    hue: float
    color_name: str


@dataclass(frozen=True)
class ElementPair:
    scene_a: str
    scene_b: str
    element_a: Element
    element_b: Element
    relation: str  # complementary | analogous | other


@dataclass(frozen=True)
class RefinerVerdict:
    approved: bool
    contrast_score: int
    harmony_score: int
    feedback_target: str  # cognition | arranger | none
    feedback_text: str = ""

    def __post_init__(self):
        if not 1 <= self.contrast_score <= 10 or not 1 <= self.harmony_score <= 10:
            raise ValueError("scores must lie in 1..10")
        if self.approved and self.feedback_target != "none":
            raise ValueError("approved verdicts carry no feedback target")
        if self.feedback_target not in ("cognition", "arranger", "none"):
            raise ValueError(f"bad feedback target '{self.feedback_target}'")


@dataclass(frozen=True)
class NeedMoreElements:
    reason: str


def hue_relation(h1: float, h2: float) -> str:
    """Color-wheel relation from circular hue distance.

    Complementary at 150 degrees or more apart (opposite side of the wheel),
    analogous within 30 degrees, otherwise "other".  Inputs normalize mod 360.
    """
    if not (np.isfinite(h1) and np.isfinite(h2)):
        raise ValueError("hues must be finite")
    d = abs(h1 - h2) % 360.0
    d = min(d, 360.0 - d)
    if d >= COMPLEMENTARY_MIN_DEG:
        return "complementary"
    if d <= ANALOGOUS_MAX_DEG:
        return "analogous"
    return "other"


class ChatClient:
    """Interface: complete(role_name, messages) -> reply text."""

    def complete(self, role_name: str, messages: list[dict]) -> str:
        raise NotImplementedError


class MockChatClient(ChatClient):
    """Scripted replies consumed in order per role; records every call."""

    def __init__(self, fixture: dict | str):
        if isinstance(fixture, str):
            with open(fixture, "r", encoding="utf-8") as fh:
                fixture = json.load(fh)
        self.scripts: dict[str, list[str]] = {k: list(v) for k, v in fixture.items()}
        self.cursor: dict[str, int] = {k: 0 for k in self.scripts}
        self.calls: list[tuple[str, list[dict]]] = []

    def complete(self, role_name: str, messages: list[dict]) -> str:
        self.calls.append((role_name, [dict(m) for m in messages]))
        queue = self.scripts.get(role_name)
        if not queue:
            raise AgentError(f"mock fixture has no replies for role '{role_name}'")
        idx = self.cursor[role_name]
        if idx >= len(queue):
            raise AgentError(f"mock fixture exhausted for role '{role_name}' (consumed {idx})")
        self.cursor[role_name] = idx + 1
        return queue[idx]

    def calls_for(self, role_name: str) -> list[str]:
        """The opening prompt text of every recorded call for one role."""
        return [messages[0]["content"] for role, messages in self.calls if role == role_name]


class HttpChatClient(ChatClient):
    """Chat endpoint client: POST {"agent", "messages"} -> {"reply"}.

    The API key is read from the CHAT_API_KEY environment variable and sent as
    a bearer token.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, api_key_env: str = "CHAT_API_KEY"):
        self.endpoint = endpoint
        self.timeout = timeout
        self.api_key_env = api_key_env

    def complete(self, role_name: str, messages: list[dict]) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = json.dumps({"agent": role_name, "messages": messages}).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body, headers=headers)
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            obj = json.loads(resp.read().decode("utf-8"))
        if "reply" not in obj:
            raise AgentError("chat endpoint response missing 'reply'")
        return str(obj["reply"])


def _prompt_asset(name: str) -> str:
    return resources.files("contrastposter").joinpath(f"assets/prompts/{name}.txt").read_text("utf-8")


_JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


def _extract_json(text: str):
    """Parse the first JSON object found in a reply (tolerates code fences)."""
    m = _JSON_BLOCK.search(text)
    if not m:
        raise ValueError("no JSON object in reply")
    return json.loads(m.group(0))


def _chat_json(client: ChatClient, role: str, messages: list[dict], validate) -> object:
    """Call, parse, validate; on failure append the error and retry."""
    convo = list(messages)
    last_err = "no attempts made"
    for _ in range(MAX_ATTEMPTS):
        try:
            reply = client.complete(role, convo)
        except AgentError as exc:
            raise AgentError(f"role '{role}': {exc}; last validation error: {last_err}") from exc
        try:
            obj = _extract_json(reply)
            return validate(obj)
        except Exception as exc:
            last_err = str(exc)
            convo = convo + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": f"Reply rejected: {last_err}. Answer again with valid JSON only."},
            ]
    raise AgentError(f"role '{role}' failed after {MAX_ATTEMPTS} attempts: {last_err}")


def extract_theme(description: str, client: ChatClient) -> Theme:
    """Split the user description into the theme and the visual texts to render."""
    if not description.strip():
        raise ValueError("description must be non-empty")
    prompt = _prompt_asset("theme").replace("{description}", description)

    def validate(obj) -> Theme:
        theme = str(obj["theme"]).strip()
        texts = obj.get("visual_texts", [])
        if not isinstance(texts, list):
            raise ValueError("visual_texts must be a list")
        seen, ordered = set(), []
        for t in texts:
            t = str(t)
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        return Theme(theme_text=theme, visual_texts=tuple(ordered))

    return _chat_json(client, "theme", [{"role": "user", "content": prompt}], validate)


def _parse_element(obj: dict, warnings: list[str]) -> Element:
    hue = float(obj["hue"])
    if not 0.0 <= hue < 360.0:
        warnings.append(f"hue {hue} outside [0, 360), normalized")
        hue = hue % 360.0
    return Element(
        name=str(obj["name"]),
        description=str(obj.get("description", "")),
        hue=hue,
        color_name=str(obj.get("color_name", "")),
    )


def cognition_step(
    theme: Theme,
    client: ChatClient,
    feedback: str | None = None,
    warnings: list[str] | None = None,
) -> list[ElementPair]:
    """Contrastive element pairs via three chained calls: scenes, elements, colors.

    Relations are recomputed from the returned hues; the client's own labels
    are ignored.  At least two valid pairs are required.
    """
    warnings = warnings if warnings is not None else []
    fb = feedback or "none"

    scenes_prompt = _prompt_asset("cognition_scenes").replace("{theme}", theme.theme_text).replace(
        "{feedback}", fb
    )
    scenes = _chat_json(
        client,
        "cognition",
        [{"role": "user", "content": scenes_prompt}],
        lambda o: (str(o["scene_a"]), str(o["scene_b"])),
    )

    elements_prompt = (
        _prompt_asset("cognition_elements")
        .replace("{theme}", theme.theme_text)
        .replace("{scene_a}", scenes[0])
        .replace("{scene_b}", scenes[1])
    )

    def validate_elements(obj):
        pairs = obj["pairs"]
        if not isinstance(pairs, list) or len(pairs) < 2:
            raise ValueError("need at least 2 element pairs")
        return [
            (
                str(p["element_a"]["name"]),
                str(p["element_a"].get("description", "")),
                str(p["element_b"]["name"]),
                str(p["element_b"].get("description", "")),
            )
            for p in pairs
        ]

    raw_pairs = _chat_json(
        client, "cognition", [{"role": "user", "content": elements_prompt}], validate_elements
    )

    colors_prompt = _prompt_asset("cognition_colors").replace(
        "{pairs}", json.dumps([{"element_a": a, "element_b": b} for a, _, b, _ in raw_pairs])
    )

    def validate_colors(obj):
        pairs = obj["pairs"]
        if not isinstance(pairs, list) or len(pairs) < 2:
            raise ValueError("need at least 2 colored pairs")
        out = []
        for p in pairs:
            ea = _parse_element(p["element_a"], warnings)
            eb = _parse_element(p["element_b"], warnings)
            out.append(
                ElementPair(
                    scene_a=scenes[0],
                    scene_b=scenes[1],
                    element_a=ea,
                    element_b=eb,
                    relation=hue_relation(ea.hue, eb.hue),
                )
            )
        return out

    return _chat_json(client, "cognition", [{"role": "user", "content": colors_prompt}], validate_colors)


def arranger_step(
    pairs: list[ElementPair],
    rs: RegionSet,
    theme: Theme,
    client: ChatClient,
    feedback: str | None = None,
):
    """Layout for the canvas regions, or a NeedMoreElements request.

    The reply must either carry a schema-valid layout assigning exactly one
    element per region or ask the cognition agent for more material.
    """
    if not pairs:
        raise ValueError("arranger needs at least one element pair")
    prompt = (
        _prompt_asset("arranger")
        .replace("{theme}", theme.theme_text)
        .replace("{region_ids}", json.dumps(sorted(rs.region_ids)))
        .replace("{visual_texts}", json.dumps(list(theme.visual_texts)))
        .replace("{pairs}", json.dumps([_pair_dict(p) for p in pairs]))
        .replace("{feedback}", feedback or "none")
    )

    def validate(obj):
        action = obj.get("action", "layout")
        if action == "need_more_elements":
            return NeedMoreElements(reason=str(obj.get("reason", "insufficient elements")))
        layout = LayoutSpec.from_dict(obj["layout"])
        problems = validate_layout(layout, rs.region_ids, list(theme.visual_texts))
        if problems:
            raise ValueError("; ".join(problems))
        return layout

    return _chat_json(client, "arranger", [{"role": "user", "content": prompt}], validate)


def _pair_dict(p: ElementPair) -> dict:
    return {
        "scene_a": p.scene_a,
        "scene_b": p.scene_b,
        "element_a": {"name": p.element_a.name, "description": p.element_a.description,
                      "hue": p.element_a.hue, "color_name": p.element_a.color_name},
        "element_b": {"name": p.element_b.name, "description": p.element_b.description,
                      "hue": p.element_b.hue, "color_name": p.element_b.color_name},
        "relation": p.relation,
    }


def refiner_step(
    poster_image: np.ndarray,
    layout: LayoutSpec,
    theme: Theme,
    client: ChatClient,
    contrast_threshold: int = 7,
    harmony_threshold: int = 7,
) -> RefinerVerdict:
    """Approve or route feedback: low contrast -> cognition, low harmony -> arranger.

    Contrast is checked first.  An unparseable verdict after the retries is
    treated as a rejection routed to the arranger.
    """
    prompt = (
        _prompt_asset("refiner")
        .replace("{theme}", theme.theme_text)
        .replace("{layout}", layout.to_json())
    )
    messages = [
        {"role": "user", "content": prompt, "image": _image_attachment(poster_image)},
    ]

    def validate(obj):
        c = int(obj["contrast_score"])
        h = int(obj["harmony_score"])
        feedback = str(obj.get("feedback", ""))
        approved = c >= contrast_threshold and h >= harmony_threshold
        if approved:
            return RefinerVerdict(True, c, h, "none", "")
        target = "cognition" if c < contrast_threshold else "arranger"
        return RefinerVerdict(False, c, h, target, feedback)

    try:
        return _chat_json(client, "refiner", messages, validate)
    except AgentError as exc:
        return RefinerVerdict(False, 1, 1, "arranger", f"verdict unparseable: {exc}")


def _image_attachment(img: np.ndarray) -> dict:
    """Standard PNG attachment for live clients; mocks simply ignore it."""
    import base64
    import io

    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return {"type": "image_png_b64", "data": base64.b64encode(buf.getvalue()).decode("ascii")}


@dataclass
class LoopResult:
    image: np.ndarray
    latent: np.ndarray
    layout: LayoutSpec
    theme: Theme
    trace: SamplerTrace
    log: dict


def run_design_loop(
    description: str,
    rs: RegionSet,
    model: VelocityModel,
    sampler_cfg: SamplerConfig,
    client: ChatClient,
    latent_size: tuple[int, int],
    renderer=None,
    max_iterations: int = 3,
    contrast_threshold: int = 7,
    harmony_threshold: int = 7,
    max_element_requests: int = 2,
) -> LoopResult:
    """Full cognition -> arranger -> sample -> refine loop.

    Stops on approval or after max_iterations, returning the best-scoring
    iteration.  Refiner feedback is routed verbatim to exactly one agent for
    the next round.
    """
    from contrastposter.imaging import latent_to_image
    from contrastposter.regions import downsample_to_latent

    renderer = renderer or (lambda z: latent_to_image(z)[0])
    rs_latent = downsample_to_latent(rs, latent_size[1], latent_size[0])
    workspace = SamplerWorkspace(rs_latent, sampler_cfg)

    theme = extract_theme(description, client)
    warnings: list[str] = []
    iterations: list[dict] = []
    best = None
    cognition_feedback: str | None = None
    arranger_feedback: str | None = None
    pairs: list[ElementPair] = []

    for it in range(1, max_iterations + 1):
        record: dict = {"iteration": it}
        if it == 1 or cognition_feedback is not None:
            pairs = cognition_step(theme, client, feedback=cognition_feedback, warnings=warnings)
            record["cognition_feedback"] = cognition_feedback
        layout = None
        requests = 0
        arr_feedback = arranger_feedback
        while layout is None:
            result = arranger_step(pairs, rs, theme, client, feedback=arr_feedback)
            if isinstance(result, NeedMoreElements):
                requests += 1
                if requests > max_element_requests:
                    raise AgentError(
                        f"arranger escalated {requests} times in one iteration: {result.reason}"
                    )
                record.setdefault("element_requests", []).append(result.reason)
                pairs = pairs + cognition_step(theme, client, feedback=result.reason, warnings=warnings)
            else:
                layout = result
        record["arranger_feedback"] = arranger_feedback
        record["layout"] = layout.to_dict()

        conditions = {rid: condition_lookup(layout, rid) for rid in rs_latent.region_ids}
        latent, trace = run_sampler(rs_latent, conditions, model, sampler_cfg, workspace=workspace)
        image = renderer(latent)

        verdict = refiner_step(
            image, layout, theme, client,
            contrast_threshold=contrast_threshold, harmony_threshold=harmony_threshold,
        )
        record["verdict"] = {
            "approved": verdict.approved,
            "contrast_score": verdict.contrast_score,
            "harmony_score": verdict.harmony_score,
            "feedback_target": verdict.feedback_target,
            "feedback_text": verdict.feedback_text,
        }
        iterations.append(record)

        score = verdict.contrast_score + verdict.harmony_score
        candidate = (score, it, image, latent, layout, trace)
        if best is None or score > best[0]:
            best = candidate
        if verdict.approved:
            best = candidate
            break
        cognition_feedback = verdict.feedback_text if verdict.feedback_target == "cognition" else None
        arranger_feedback = verdict.feedback_text if verdict.feedback_target == "arranger" else None

    assert best is not None
    log = {
        "theme": {"theme_text": theme.theme_text, "visual_texts": list(theme.visual_texts)},
        "iterations": iterations,
        "chosen_iteration": best[1],
        "warnings": warnings,
    }
    return LoopResult(image=best[2], latent=best[3], layout=best[4], theme=theme, trace=best[5], log=log)
