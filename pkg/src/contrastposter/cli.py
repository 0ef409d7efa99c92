"""Command-line entry point: generate, sample-toy, metrics.

`generate` runs the full agent loop + hybrid sampler from one JSON config
(flags override config fields; only the chat API key comes from the
environment).  `sample-toy` drives the sampler directly from per-region
Gaussian targets, which is how the sampler acceptance cases run.  `metrics`
scores an existing poster against its mask.

Exit codes: 0 ok, 2 config error, 3 pipeline error, 4 backend unreachable.
Failures emit machine-readable error JSON (stderr, plus error.json in the
output directory when one is known).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from contrastposter import wire
from contrastposter.agents import AgentError, HttpChatClient, MockChatClient, run_design_loop
from contrastposter.imaging import latent_to_image, load_image_png, save_image_png, upscale_nearest
from contrastposter.layout import LayoutSpec
from contrastposter.metrics import default_style_extractor, metrics_report
from contrastposter.models import (
    AnalyticGaussianVelocity,
    Condition,
    GaussianTarget,
    RemoteVelocityModel,
    composed_field_target,
)
from contrastposter.overlay import build_overlay_plan, render_text_overlay
from contrastposter.regions import RegionError, RegionSet, load_mask_json, load_mask_png
from contrastposter.sampler import SamplerConfig, run_sampler

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3
EXIT_BACKEND = 4


class CliError(Exception):
    def __init__(self, code: int, stage: str, message: str):
        super().__init__(message)
        self.code = code
        self.stage = stage


def _load_mask(path: str) -> RegionSet:
    if path.endswith(".json"):
        return load_mask_json(path)
    return load_mask_png(path)


def _parse_target(spec: dict) -> GaussianTarget:
    if "mixture" in spec:
        return GaussianTarget.mixture(
            [(p["weight"], np.asarray(p["mean"], dtype=float), p.get("scale", 1.0)) for p in spec["mixture"]]
        )
    return GaussianTarget.point(np.asarray(spec["mean"], dtype=float), spec.get("scale", 1.0))


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _parse_run_config(path: str, overrides: argparse.Namespace) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, "config", f"cannot read config {path}: {exc}")
    base = os.path.dirname(os.path.abspath(path))

    problems = []
    for key in ("mask", "output_dir", "model", "agents", "description"):
        if key not in doc:
            problems.append(f"missing '{key}'")
    model = doc.get("model", {})
    sources = [k for k in ("analytic", "remote") if k in model]
    if len(sources) != 1:
        problems.append(f"model must set exactly one source of analytic/remote, got {sources}")
    client = doc.get("agents", {}).get("client", {})
    kinds = [k for k in ("mock", "live") if k in client]
    if len(kinds) != 1:
        problems.append(f"agents.client must set exactly one of mock/live, got {kinds}")
    if problems:
        raise CliError(EXIT_CONFIG, "config", "; ".join(problems))

    doc["mask"] = _resolve(base, doc["mask"])
    if "mock" in client and "fixture" in client["mock"]:
        client["mock"]["fixture"] = _resolve(base, client["mock"]["fixture"])
    if overrides.out is not None:
        doc["output_dir"] = overrides.out
    else:
        doc["output_dir"] = _resolve(base, doc["output_dir"])
    if overrides.seed is not None:
        doc["seed"] = overrides.seed
    if overrides.steps is not None:
        doc.setdefault("sampler", {})["steps"] = overrides.steps
    return doc


def _sampler_config(doc: dict) -> SamplerConfig:
    s = dict(doc.get("sampler", {}))
    try:
        return SamplerConfig(
            steps=s.get("steps", 50),
            tau=s.get("tau", 10),
            r_fraction=s.get("r_fraction", 1.0 / 32.0),
            w=s.get("w", 3.0),
            eta=s.get("eta", 0.1),
            mode=s.get("mode", "ode"),
            seed=doc.get("seed", 0),
            channels=s.get("channels", 3),
            strip_k=s.get("strip_k", 2.0),
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "config", f"invalid sampler config: {exc}")


def cmd_generate(args: argparse.Namespace) -> int:
    doc = _parse_run_config(args.config, args)
    out_dir = doc["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    try:
        return _generate_inner(doc, out_dir)
    except CliError:
        raise
    except (RegionError, OSError) as exc:
        raise CliError(EXIT_CONFIG, "mask", str(exc))
    except wire.BackendUnreachable as exc:
        raise CliError(EXIT_BACKEND, "backend", str(exc))
    except (AgentError, wire.BackendError, FloatingPointError, RuntimeError, ValueError, KeyError) as exc:
        raise CliError(EXIT_PIPELINE, "pipeline", str(exc))


def _generate_inner(doc: dict, out_dir: str) -> int:
    rs = _load_mask(doc["mask"])
    cfg = _sampler_config(doc)
    latent_size = tuple(doc.get("latent_size", [rs.height, rs.width]))

    model_doc = doc["model"]
    if "analytic" in model_doc:
        targets = {
            entry["match"]: _parse_target(entry) for entry in model_doc["analytic"]["targets"]
        }
        model = AnalyticGaussianVelocity(targets, channels=cfg.channels)
        renderer = None
    else:
        model = RemoteVelocityModel(
            model_doc["remote"]["endpoint"], model_doc["remote"].get("name", "default")
        )
        if model.channels != cfg.channels:
            raise CliError(
                EXIT_CONFIG, "config",
                f"backend produces {model.channels} channels, sampler config says {cfg.channels}",
            )
        renderer = lambda z: model.decode(z)  # noqa: E731

    agents_doc = doc["agents"]
    client_doc = agents_doc["client"]
    if "mock" in client_doc:
        client = MockChatClient(client_doc["mock"]["fixture"])
    else:
        client = HttpChatClient(client_doc["live"]["endpoint"])

    result = run_design_loop(
        doc["description"],
        rs,
        model,
        cfg,
        client,
        latent_size=latent_size,
        renderer=renderer,
        max_iterations=agents_doc.get("max_iterations", 3),
        contrast_threshold=agents_doc.get("contrast_threshold", 7),
        harmony_threshold=agents_doc.get("harmony_threshold", 7),
    )

    poster = result.image
    if poster.shape[:2] != (rs.height, rs.width):
        poster = upscale_nearest(poster, rs.height, rs.width)
    plan = build_overlay_plan(result.layout, (rs.height, rs.width))
    poster = render_text_overlay(poster, plan)

    save_image_png(os.path.join(out_dir, "poster.png"), poster)
    with open(os.path.join(out_dir, "layout.json"), "w", encoding="utf-8") as fh:
        fh.write(result.layout.to_json())
    if doc.get("trace", True):
        result.trace.meta["affine"] = latent_to_image(result.latent)[1]
        result.trace.dump_jsonl(os.path.join(out_dir, "trace.jsonl"))
    metrics_doc = doc.get("metrics", {"enabled": True})
    if metrics_doc.get("enabled", True):
        report = metrics_report(poster, rs, strip_k=metrics_doc.get("strip_k", 4))
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    with open(os.path.join(out_dir, "loop_log.json"), "w", encoding="utf-8") as fh:
        json.dump(result.log, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_sample_toy(args: argparse.Namespace) -> int:
    try:
        rs = _load_mask(args.mask)
    except (RegionError, OSError) as exc:
        raise CliError(EXIT_CONFIG, "mask", str(exc))
    try:
        with open(args.targets, "r", encoding="utf-8") as fh:
            tdoc = json.load(fh)
        channels = int(tdoc.get("channels", 1))
        region_targets = {int(k): _parse_target(v) for k, v in tdoc["regions"].items()}
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "targets", f"cannot parse targets: {exc}")
    if sorted(region_targets) != sorted(rs.region_ids):
        raise CliError(
            EXIT_CONFIG, "targets",
            f"target regions {sorted(region_targets)} do not match mask regions {sorted(rs.region_ids)}",
        )
    try:
        cfg = SamplerConfig(
            steps=args.steps, tau=args.tau, r_fraction=args.r_frac, w=args.w,
            eta=args.eta, mode=args.mode, seed=args.seed, channels=channels,
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc))

    conditions = {rid: Condition.prompt(f"region {rid}") for rid in rs.region_ids}
    targets = {f"region {rid}": region_targets[rid] for rid in rs.region_ids}
    null_target = composed_field_target(rs, region_targets, channels)
    model = AnalyticGaussianVelocity(targets, channels=channels, null_target=null_target)

    os.makedirs(args.out, exist_ok=True)
    try:
        latent, trace = run_sampler(rs, conditions, model, cfg)
    except (FloatingPointError, RuntimeError) as exc:
        raise CliError(EXIT_PIPELINE, "sampler", str(exc))
    img, affine = latent_to_image(latent)
    save_image_png(os.path.join(args.out, "image.png"), img)
    trace.meta["affine"] = affine
    trace.dump_jsonl(os.path.join(args.out, "trace.jsonl"))
    print(json.dumps({"image": os.path.join(args.out, "image.png"), "r_pixels": trace.meta["r_pixels"]}))
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    try:
        image = load_image_png(args.image)
        rs = _load_mask(args.mask)
    except (RegionError, OSError) as exc:
        raise CliError(EXIT_CONFIG, "inputs", str(exc))
    if image.shape[:2] != (rs.height, rs.width):
        raise CliError(
            EXIT_CONFIG, "inputs",
            f"image resolution {image.shape[:2]} does not match mask {(rs.height, rs.width)}",
        )
    report = metrics_report(
        image, rs, strip_k=args.strip_k,
        extractor=default_style_extractor(), features_path=args.features,
    )
    out = args.out or "metrics.json"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    print(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contrastposter", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the full agent + sampler pipeline from a config")
    g.add_argument("--config", required=True)
    g.add_argument("--out", default=None, help="override output directory")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--steps", type=int, default=None)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample-toy", help="drive the hybrid sampler with analytic targets")
    s.add_argument("--mask", required=True, help="indexed PNG or polygon JSON")
    s.add_argument("--targets", required=True, help="per-region Gaussian/mixture JSON")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--tau", type=int, default=10)
    s.add_argument("--r-frac", type=float, default=1.0 / 32.0, dest="r_frac")
    s.add_argument("--w", type=float, default=3.0)
    s.add_argument("--eta", type=float, default=0.1)
    s.add_argument("--mode", choices=["ode", "ancestral"], default="ode")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="toy_out")
    s.set_defaults(func=cmd_sample_toy)

    m = sub.add_parser("metrics", help="score a poster against its region mask")
    m.add_argument("--image", required=True)
    m.add_argument("--mask", required=True)
    m.add_argument("--features", default=None, help="external style-features JSON")
    m.add_argument("--strip-k", type=float, default=4.0, dest="strip_k")
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        payload = {"error": {"code": exc.code, "stage": exc.stage, "message": str(exc)}}
        sys.stderr.write(json.dumps(payload) + "\n")
        out_dir = getattr(args, "out", None)
        if args.command == "generate" and out_dir is None and getattr(args, "config", None):
            try:
                with open(args.config, "r", encoding="utf-8") as fh:
                    cfg_doc = json.load(fh)
                out_dir = cfg_doc.get("output_dir")
                if out_dir and not os.path.isabs(out_dir):
                    out_dir = os.path.join(os.path.dirname(os.path.abspath(args.config)), out_dir)
            except Exception:
                out_dir = None
        if out_dir:
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
                    json.dump(payload, fh, indent=2)
            except OSError:
                pass
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
