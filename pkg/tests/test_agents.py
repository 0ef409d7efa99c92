"""Agent pipeline: theme extraction, cognition, arranger, refiner, the loop, hue logic."""

import json

import numpy as np
import pytest

import contrastposter as cp
from contrastposter.agents import (
    AgentError,
    MockChatClient,
    NeedMoreElements,
    arranger_step,
    cognition_step,
    extract_theme,
    refiner_step,
)
from contrastposter.layout import LayoutRegion, LayoutSpec, TextBox, validate_layout
from contrastposter.models import composed_field_target
from conftest import vertical_split

SCENES = json.dumps({"scene_a": "glacier", "scene_b": "desert"})
ELEMENTS = json.dumps(
    {
        "pairs": [
            {"element_a": {"name": "iceberg", "description": "towering blue iceberg"},
             "element_b": {"name": "sandstorm", "description": "rolling sandstorm"}},
            {"element_a": {"name": "meltwater", "description": "turquoise stream"},
             "element_b": {"name": "cracked earth", "description": "dry ground"}},
        ]
    }
)
COLORS = json.dumps(
    {
        "pairs": [
            {"element_a": {"name": "iceberg", "description": "towering blue iceberg", "hue": 210, "color_name": "blue"},
             "element_b": {"name": "sandstorm", "description": "rolling sandstorm", "hue": 40, "color_name": "amber"}},
            {"element_a": {"name": "meltwater", "description": "turquoise stream", "hue": 190, "color_name": "turquoise"},
             "element_b": {"name": "cracked earth", "description": "dry ground", "hue": 25, "color_name": "ochre"}},
        ]
    }
)


def layout_reply(region_ids=(0, 1)):
    regions = [
        {"region_id": region_ids[0], "element": "iceberg", "description": "towering blue iceberg",
         "hues": [210], "color_names": ["blue"], "style_tags": []},
        {"region_id": region_ids[1], "element": "sandstorm", "description": "rolling sandstorm",
         "hues": [40], "color_names": ["amber"], "style_tags": []},
    ]
    return json.dumps(
        {"action": "layout",
         "layout": {"version": "1", "regions": regions, "global_style": ["flat"],
                    "text_boxes": [{"content": "ACT NOW", "bbox": [0.2, 0.05, 0.6, 0.15], "emphasis": "title"}],
                    "rationale": "cold against hot"}}
    )


def refiner_reply(c, h, feedback=""):
    return json.dumps({"contrast_score": c, "harmony_score": h, "feedback": feedback})


THEME_REPLY = json.dumps({"theme": "climate change awareness", "visual_texts": ["ACT NOW"]})


class TestHueRelation:
    def test_paper_color_wheel_examples(self):
        # orange vs blue sit opposite; purple vs blue sit adjacent
        assert cp.hue_relation(30, 210) == "complementary"
        assert cp.hue_relation(270, 240) == "analogous"

    def test_identity_is_analogous(self):
        assert cp.hue_relation(0, 0) == "analogous"

    def test_symmetry_and_wraparound(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.uniform(0, 360, 2)
            assert cp.hue_relation(a, b) == cp.hue_relation(b, a)
            assert cp.hue_relation(a + 360, b) == cp.hue_relation(a, b)
            assert cp.hue_relation(a, b - 360) == cp.hue_relation(a, b)

    def test_boundaries(self):
        assert cp.hue_relation(0, 150) == "complementary"
        assert cp.hue_relation(0, 149.9) == "other"
        assert cp.hue_relation(0, 30) == "analogous"
        assert cp.hue_relation(0, 30.1) == "other"


class TestExtractTheme:
    def test_fixture_round_trip(self):
        client = MockChatClient({"theme": [THEME_REPLY]})
        theme = extract_theme("a poster about climate", client)
        assert theme.theme_text == "climate change awareness"
        assert theme.visual_texts == ("ACT NOW",)

    def test_deduplicates_visual_texts(self):
        reply = json.dumps({"theme": "t", "visual_texts": ["GO", "NOW", "GO"]})
        client = MockChatClient({"theme": [reply]})
        assert extract_theme("x", client).visual_texts == ("GO", "NOW")

    def test_three_malformed_replies_fail(self):
        client = MockChatClient({"theme": ["not json", "also not", "}{"]})
        with pytest.raises(AgentError, match="theme"):
            extract_theme("x", client)
        # each retry carried the parse error back
        assert len(client.calls) == 3
        assert "rejected" in client.calls[1][1][-1]["content"].lower()

    def test_repairs_after_one_bad_reply(self):
        client = MockChatClient({"theme": ["garbage", THEME_REPLY]})
        theme = extract_theme("x", client)
        assert theme.theme_text == "climate change awareness"


class TestCognition:
    def test_three_chained_calls_and_relations(self):
        client = MockChatClient({"cognition": [SCENES, ELEMENTS, COLORS]})
        pairs = cognition_step(cp.Theme("climate change awareness"), client)
        assert len(pairs) == 2
        first = pairs[0]
        assert first.element_a.name == "iceberg" and first.element_a.hue == 210
        assert first.element_b.name == "sandstorm" and first.element_b.hue == 40
        assert first.relation == "complementary"  # 170 degrees apart
        assert pairs[1].relation == "complementary"
        assert client.cursor["cognition"] == 3

    def test_analogous_pair_recomputed_locally(self):
        colors = json.dumps({"pairs": [
            {"element_a": {"name": "a", "hue": 200, "color_name": "x"},
             "element_b": {"name": "b", "hue": 220, "color_name": "y"}},
            {"element_a": {"name": "c", "hue": 0, "color_name": "x"},
             "element_b": {"name": "d", "hue": 90, "color_name": "y"}},
        ]})
        client = MockChatClient({"cognition": [SCENES, ELEMENTS, colors]})
        pairs = cognition_step(cp.Theme("t"), client)
        assert pairs[0].relation == "analogous"
        assert pairs[1].relation == "other"

    def test_out_of_range_hue_normalized_with_warning(self):
        colors = json.dumps({"pairs": [
            {"element_a": {"name": "a", "hue": 400, "color_name": "x"},
             "element_b": {"name": "b", "hue": 40, "color_name": "y"}},
            {"element_a": {"name": "c", "hue": 10, "color_name": "x"},
             "element_b": {"name": "d", "hue": 190, "color_name": "y"}},
        ]})
        client = MockChatClient({"cognition": [SCENES, ELEMENTS, colors]})
        warnings = []
        pairs = cognition_step(cp.Theme("t"), client, warnings=warnings)
        assert pairs[0].element_a.hue == 40.0
        assert any("400" in w for w in warnings)

    def test_fewer_than_two_pairs_fails(self):
        one_pair = json.dumps({"pairs": [{"element_a": {"name": "a"}, "element_b": {"name": "b"}}]})
        client = MockChatClient({"cognition": [SCENES, one_pair, one_pair, one_pair]})
        with pytest.raises(AgentError):
            cognition_step(cp.Theme("t"), client)


class TestArranger:
    def _rs(self, n=2):
        labels = np.zeros((6, 6), dtype=np.int32)
        for k in range(1, n):
            labels[:, 2 * k:] = k
        return cp.load_region_mask(labels)

    def _pairs(self):
        client = MockChatClient({"cognition": [SCENES, ELEMENTS, COLORS]})
        return cognition_step(cp.Theme("t", ("ACT NOW",)), client)

    def test_forced_assignment(self):
        client = MockChatClient({"arranger": [layout_reply()]})
        layout = arranger_step(self._pairs(), self._rs(), cp.Theme("t", ("ACT NOW",)), client)
        assert isinstance(layout, LayoutSpec)
        assert [r.region_id for r in layout.regions] == [0, 1]

    def test_need_more_elements_passthrough(self):
        reply = json.dumps({"action": "need_more_elements", "reason": "need a third element"})
        client = MockChatClient({"arranger": [reply]})
        res = arranger_step(self._pairs(), self._rs(3), cp.Theme("t", ("ACT NOW",)), client)
        assert isinstance(res, NeedMoreElements)
        assert "third" in res.reason

    def test_overlapping_text_boxes_rejected_then_repaired(self):
        bad = json.loads(layout_reply())
        bad["layout"]["text_boxes"] = [
            {"content": "ACT NOW", "bbox": [0.1, 0.1, 0.4, 0.4], "emphasis": "title"},
            {"content": "ACT NOW", "bbox": [0.25, 0.25, 0.4, 0.4], "emphasis": "body"},
        ]
        client = MockChatClient({"arranger": [json.dumps(bad), layout_reply()]})
        layout = arranger_step(self._pairs(), self._rs(), cp.Theme("t", ("ACT NOW",)), client)
        assert isinstance(layout, LayoutSpec)
        retry_msg = client.calls[1][1][-1]["content"]
        assert "overlap" in retry_msg

    def test_region_mismatch_rejected(self):
        client = MockChatClient({"arranger": [layout_reply((0, 5))] * 3})
        with pytest.raises(AgentError, match="region"):
            arranger_step(self._pairs(), self._rs(), cp.Theme("t", ("ACT NOW",)), client)


class TestRefiner:
    def _img(self):
        return np.zeros((8, 8, 3), dtype=np.uint8)

    def _layout(self):
        return LayoutSpec.from_dict(json.loads(layout_reply())["layout"])

    def test_approval(self):
        client = MockChatClient({"refiner": [refiner_reply(8, 8)]})
        v = refiner_step(self._img(), self._layout(), cp.Theme("t"), client)
        assert v.approved and v.feedback_target == "none"

    def test_low_contrast_routes_cognition(self):
        client = MockChatClient({"refiner": [refiner_reply(5, 9, "weak contrast")]})
        v = refiner_step(self._img(), self._layout(), cp.Theme("t"), client)
        assert not v.approved
        assert v.feedback_target == "cognition"
        assert v.feedback_text == "weak contrast"

    def test_low_harmony_routes_arranger(self):
        client = MockChatClient({"refiner": [refiner_reply(9, 5, "unbalanced")]})
        v = refiner_step(self._img(), self._layout(), cp.Theme("t"), client)
        assert v.feedback_target == "arranger"

    def test_contrast_checked_first(self):
        client = MockChatClient({"refiner": [refiner_reply(3, 3, "both weak")]})
        v = refiner_step(self._img(), self._layout(), cp.Theme("t"), client)
        assert v.feedback_target == "cognition"

    def test_unparseable_treated_as_arranger_rejection(self):
        client = MockChatClient({"refiner": ["garbage", "more garbage", "still bad"]})
        v = refiner_step(self._img(), self._layout(), cp.Theme("t"), client)
        assert not v.approved and v.feedback_target == "arranger"


def build_loop_fixture(refiner_replies, cognition_rounds=1, arranger_replies=None):
    fixture = {
        "theme": [THEME_REPLY],
        "cognition": [SCENES, ELEMENTS, COLORS] * cognition_rounds,
        "arranger": arranger_replies or [layout_reply()] * len(refiner_replies),
        "refiner": refiner_replies,
    }
    return MockChatClient(fixture)


def loop_model():
    labels = vertical_split(16, 16, 8)
    rs = cp.load_region_mask(labels)
    targets = {
        0: cp.GaussianTarget.point(np.array([3.0]), 1.0),
        1: cp.GaussianTarget.point(np.array([-3.0]), 1.0),
    }
    # the sampler runs at latent resolution, so the composed null lives there too
    null = composed_field_target(cp.downsample_to_latent(rs, 8, 8), targets, 1)
    model = cp.AnalyticGaussianVelocity(
        {"iceberg": targets[0], "sandstorm": targets[1]}, channels=1, null_target=null
    )
    return rs, model


class TestDesignLoop:
    def _run(self, client, max_iterations=3):
        rs, model = loop_model()
        cfg = cp.SamplerConfig(steps=8, tau=2, seed=4, channels=1)
        renders = []

        def renderer(z):
            from contrastposter.imaging import latent_to_image

            renders.append(1)
            return latent_to_image(z)[0]

        result = cp.run_design_loop(
            "a climate poster saying ACT NOW", rs, model, cfg, client,
            latent_size=(8, 8), renderer=renderer, max_iterations=max_iterations,
        )
        return result, renders, client

    def test_approval_at_first_iteration_runs_sampler_once(self):
        client = build_loop_fixture([refiner_reply(8, 8)])
        result, renders, _ = self._run(client)
        assert len(renders) == 1
        assert result.log["chosen_iteration"] == 1
        assert result.layout.regions[0].element == "iceberg"

    def test_never_approved_returns_best_of_three(self):
        client = build_loop_fixture(
            [refiner_reply(5, 9, "weak contrast"),
             refiner_reply(6, 5, "still weak"),
             refiner_reply(6, 9, "closer")],
            cognition_rounds=3,
        )
        result, renders, _ = self._run(client)
        assert len(renders) == 3
        assert result.log["chosen_iteration"] == 3  # 6+9 is the best total
        assert len(result.log["iterations"]) == 3

    def test_cognition_feedback_routed_verbatim(self):
        client = build_loop_fixture(
            [refiner_reply(5, 9, "make the iceberg icier"), refiner_reply(8, 8)],
            cognition_rounds=2,
        )
        result, renders, client = self._run(client)
        assert len(renders) == 2
        assert result.log["chosen_iteration"] == 2
        # the 4th cognition call is the second round's scene prompt
        second_round_scene_prompt = client.calls_for("cognition")[3]
        assert "make the iceberg icier" in second_round_scene_prompt

    def test_arranger_feedback_routed_verbatim(self):
        client = build_loop_fixture(
            [refiner_reply(9, 5, "rebalance the split"), refiner_reply(8, 8)],
            cognition_rounds=1,
            arranger_replies=[layout_reply(), layout_reply()],
        )
        result, renders, client = self._run(client)
        assert len(renders) == 2
        arranger_prompts = client.calls_for("arranger")
        assert "rebalance the split" in arranger_prompts[1]
        # cognition ran only once: feedback went to exactly one agent
        assert client.cursor["cognition"] == 3

    def test_need_more_elements_escalation(self):
        need = json.dumps({"action": "need_more_elements", "reason": "need contrast in texture"})
        client = build_loop_fixture(
            [refiner_reply(8, 8)],
            cognition_rounds=2,
            arranger_replies=[need, layout_reply()],
        )
        result, renders, client = self._run(client)
        assert len(renders) == 1
        assert result.log["iterations"][0]["element_requests"] == ["need contrast in texture"]
        # the escalation request reached cognition verbatim
        assert "need contrast in texture" in client.calls_for("cognition")[3]

    def test_layouts_always_schema_valid(self):
        client = build_loop_fixture([refiner_reply(8, 8)])
        result, _, _ = self._run(client)
        assert validate_layout(result.layout, (0, 1), ["ACT NOW"]) == []


class TestLayoutValidator:
    def _base(self):
        return LayoutSpec(
            version="1",
            regions=(
                LayoutRegion(0, "a", "", (10.0,), ("red",)),
                LayoutRegion(1, "b", "", (200.0,), ("blue",)),
            ),
            global_style=("flat",),
            text_boxes=(TextBox("GO", (0.1, 0.1, 0.3, 0.2), "title"),),
        )

    def test_valid(self):
        assert validate_layout(self._base(), (0, 1), ["GO"]) == []

    def test_version_mismatch(self):
        bad = LayoutSpec(version="2", regions=self._base().regions, global_style=())
        assert any("version" in p for p in validate_layout(bad, (0, 1), []))

    def test_region_mismatch(self):
        assert any("match" in p for p in validate_layout(self._base(), (0, 1, 2), ["GO"]))

    def test_bbox_out_of_range(self):
        bad = LayoutSpec(
            version="1", regions=self._base().regions, global_style=(),
            text_boxes=(TextBox("GO", (0.9, 0.9, 0.5, 0.5), "body"),),
        )
        assert any("unit square" in p for p in validate_layout(bad, (0, 1), ["GO"]))

    def test_content_not_in_visual_texts(self):
        assert any("visual texts" in p for p in validate_layout(self._base(), (0, 1), ["OTHER"]))

    def test_overlap_over_20_percent(self):
        bad = LayoutSpec(
            version="1", regions=self._base().regions, global_style=(),
            text_boxes=(
                TextBox("GO", (0.1, 0.1, 0.4, 0.4), "title"),
                TextBox("GO", (0.25, 0.25, 0.4, 0.4), "body"),  # 35% of the smaller box
            ),
        )
        assert any("overlap" in p for p in validate_layout(bad, (0, 1), ["GO"]))

    def test_hue_range(self):
        bad = LayoutSpec(
            version="1",
            regions=(LayoutRegion(0, "a", "", (400.0,), ()), LayoutRegion(1, "b", "", (), ())),
            global_style=(),
        )
        assert any("hue" in p for p in validate_layout(bad, (0, 1), []))
