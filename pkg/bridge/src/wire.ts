/**
 * Wire-protocol encoding and validation, shared with the Python engine.
 *
 * Tensors travel as base64 of row-major little-endian float32. The schema
 * file shipped with the engine is the single source of truth; the bridge
 * loads it at startup so both sides validate against identical rules.
 */

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import path from "node:path";

export type Shape = [number, number, number];

export interface WireSchema {
  messages: Record<string, { fields: Record<string, string> }>;
}

export function schemaPath(): string {
  if (process.env.BRIDGE_SCHEMA_PATH) return process.env.BRIDGE_SCHEMA_PATH;
  const here = path.dirname(fileURLToPath(import.meta.url));
  // dist/src/ -> bridge/ -> repo root -> shared asset
  return path.resolve(here, "../../..", "src/contrastposter/assets/wire/schema.json");
}

export function loadSchema(): WireSchema {
  return JSON.parse(readFileSync(schemaPath(), "utf-8")) as WireSchema;
}

export function encodeF32(values: Float32Array): string {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf.toString("base64");
}

export function decodeF32(payload: string, count: number): Float32Array {
  if (!/^[A-Za-z0-9+/]*={0,2}$/.test(payload) || payload.length % 4 !== 0) {
    throw new WireError(400, "invalid base64 payload");
  }
  const buf = Buffer.from(payload, "base64");
  if (buf.length !== count * 4) {
    throw new WireError(400, `payload holds ${buf.length} bytes, expected ${count * 4}`);
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}

export class WireError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** Structural check of one message against a schema section; returns violations. */
export function validateMessage(
  obj: Record<string, unknown>,
  section: string,
  schema: WireSchema
): string[] {
  const spec = schema.messages[section];
  const problems: string[] = [];
  for (const [key, kindRaw] of Object.entries(spec.fields)) {
    const required = !kindRaw.endsWith("?");
    const kind = kindRaw.replace(/\?$/, "");
    const val = obj[key];
    if (val === undefined || val === null) {
      if (required && !(key in obj)) problems.push(`missing field '${key}'`);
      continue;
    }
    const ok =
      kind === "string"
        ? typeof val === "string"
        : kind === "number"
          ? typeof val === "number" && Number.isFinite(val)
          : kind === "bool"
            ? typeof val === "boolean"
            : kind === "int_array"
              ? Array.isArray(val) && val.every((x) => Number.isInteger(x))
              : false;
    if (!ok) problems.push(`field '${key}' must be ${kind}`);
  }
  return problems;
}

export function parseShape(value: unknown): Shape {
  if (!Array.isArray(value) || value.length !== 3 || !value.every((x) => Number.isInteger(x))) {
    throw new WireError(400, "shape must be an integer array [C, H, W]");
  }
  const [c, h, w] = value as number[];
  if (c < 1 || h < 1 || w < 1 || c > 64 || h > 4096 || w > 4096) {
    throw new WireError(422, `unsupported shape [${c}, ${h}, ${w}]`);
  }
  return [c, h, w];
}
