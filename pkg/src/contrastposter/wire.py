"""Wire protocol for remote velocity backends.

Latents travel as base64 of row-major little-endian 32-bit floats.  The
endpoints are POST /v1/velocity, /v1/decode and /v1/health; the schema file
shipped under assets/wire/ is the shared contract the backend bridge must also
satisfy, and the golden fixtures next to it are asserted byte-exact by both
test suites.
"""

from __future__ import annotations

import base64
import json
import urllib.error
import urllib.request
from importlib import resources

import numpy as np

VELOCITY_PATH = "/v1/velocity"
DECODE_PATH = "/v1/decode"
HEALTH_PATH = "/v1/health"


class BackendError(RuntimeError):
    """Backend replied but the payload violates the protocol."""


class BackendUnreachable(BackendError):
    """Transport failure talking to the backend."""


def encode_f32(arr: np.ndarray) -> str:
    """Base64 of the array as row-major little-endian float32."""
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of encode_f32; validates the byte count against the shape."""
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise BackendError(f"invalid base64 payload: {exc}") from exc
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise BackendError(f"payload holds {len(raw)} bytes, expected {expected} for shape {list(shape)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def velocity_request(z: np.ndarray, t: float, prompt: str | None, model: str) -> dict:
    return {
        "shape": [int(s) for s in z.shape],
        "latent_b64": encode_f32(z),
        "t": float(t),
        "prompt": prompt,
        "model": model,
    }


def post_json(url: str, payload: dict, timeout: float = 30.0) -> dict:
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", errors="replace")
        raise BackendError(f"backend returned HTTP {exc.code}: {detail}") from exc
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise BackendUnreachable(f"cannot reach backend at {url}: {exc}") from exc


def parse_velocity_response(obj: dict, expect_shape: tuple[int, ...]) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "velocity_b64" not in obj:
        raise BackendError("velocity response missing 'shape' or 'velocity_b64'")
    got = tuple(int(s) for s in obj["shape"])
    if got != tuple(expect_shape):
        raise BackendError(f"backend returned shape {list(got)}, expected {list(expect_shape)}")
    v = decode_f32(obj["velocity_b64"], got)
    if not np.isfinite(v).all():
        raise BackendError("backend returned non-finite velocity values")
    return v


def load_wire_schema() -> dict:
    """The shipped schema the backend bridge validates against as well."""
    text = resources.files("contrastposter").joinpath("assets/wire/schema.json").read_text("utf-8")
    return json.loads(text)


def validate_message(obj: dict, section: str, schema: dict | None = None) -> list[str]:
    """Check required keys and primitive types for one schema section.

    Returns a list of violations (empty means valid).  Deliberately a small
    structural check, not a full JSON-Schema engine.
    """
    schema = schema or load_wire_schema()
    spec = schema["messages"][section]
    problems = []
    for key, kind in spec["fields"].items():
        required = not kind.endswith("?")
        kind = kind.rstrip("?")
        if key not in obj or obj[key] is None:
            if required and key not in obj:
                problems.append(f"missing field '{key}'")
            continue
        val = obj[key]
        ok = {
            "string": lambda v: isinstance(v, str),
            "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "bool": lambda v: isinstance(v, bool),
            "int_array": lambda v: isinstance(v, list) and all(isinstance(x, int) for x in v),
        }[kind](val)
        if not ok:
            problems.append(f"field '{key}' must be {kind}")
    return problems
