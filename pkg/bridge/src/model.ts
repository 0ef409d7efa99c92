/**
 * Backend session: the loaded velocity model plus its prompt-embedding cache.
 *
 * The zero-model stub ships so protocol tests run without any ML runtime; a
 * real latent diffusion backbone plugs in by implementing VelocityBackend and
 * registering it in createSession. The cache maps prompt strings to their
 * (expensive) embeddings and must never change returned values.
 */

import type { Shape } from "./wire.js";

export interface VelocityBackend {
  readonly id: string;
  /** native latent channel count, reported by /v1/health */
  readonly channels: number;
  velocity(latent: Float32Array, shape: Shape, t: number, embedding: Float32Array | null): Float32Array;
  decode(latent: Float32Array, shape: Shape): { rgb: Uint8Array; height: number; width: number };
  embed(prompt: string): Float32Array;
}

const DECODE_UPSCALE = 8;
const DECODE_GAIN = 32; // latent unit -> intensity step; zero latent decodes mid-gray

/**
 * Shape-agnostic zero model: every velocity is exactly zero, and the decoder
 * maps latents affinely to RGB with an 8x nearest-neighbor upscale.
 */
export class ZeroStubBackend implements VelocityBackend {
  readonly id: string;
  readonly channels: number;

  constructor(channels = 4, id = "stub-zero") {
    this.channels = channels;
    this.id = id;
  }

  velocity(latent: Float32Array, shape: Shape): Float32Array {
    return new Float32Array(latent.length);
  }

  embed(prompt: string): Float32Array {
    // deterministic placeholder embedding (FNV-1a seeded); the zero model
    // ignores it, but the cache path is identical to a real backbone's
    const out = new Float32Array(8);
    let h = 0x811c9dc5;
    for (let i = 0; i < prompt.length; i++) {
      h ^= prompt.charCodeAt(i);
      h = Math.imul(h, 0x01000193) >>> 0;
      out[i % 8] = (h % 1000) / 1000;
    }
    return out;
  }

  decode(latent: Float32Array, shape: Shape): { rgb: Uint8Array; height: number; width: number } {
    const [c, h, w] = shape;
    const height = h * DECODE_UPSCALE;
    const width = w * DECODE_UPSCALE;
    const rgb = new Uint8Array(height * width * 3);
    const plane = (ch: number, y: number, x: number) => latent[(ch * h + y) * w + x];
    for (let y = 0; y < height; y++) {
      const sy = Math.floor(y / DECODE_UPSCALE);
      for (let x = 0; x < width; x++) {
        const sx = Math.floor(x / DECODE_UPSCALE);
        for (let k = 0; k < 3; k++) {
          let v: number;
          if (c >= 3) v = plane(k, sy, sx);
          else if (c === 2) v = k < 2 ? plane(k, sy, sx) : (plane(0, sy, sx) + plane(1, sy, sx)) / 2;
          else v = plane(0, sy, sx);
          const px = Math.round(128 + DECODE_GAIN * v);
          rgb[(y * width + x) * 3 + k] = Math.max(0, Math.min(255, px));
        }
      }
    }
    return { rgb, height, width };
  }
}

export class BackendSession {
  readonly backend: VelocityBackend;
  private embeddings = new Map<string, Float32Array>();

  constructor(backend: VelocityBackend) {
    this.backend = backend;
  }

  get cacheSize(): number {
    return this.embeddings.size;
  }

  embedding(prompt: string | null): Float32Array | null {
    if (prompt === null) return null; // the unconditional branch
    let e = this.embeddings.get(prompt);
    if (!e) {
      e = this.backend.embed(prompt);
      this.embeddings.set(prompt, e);
    }
    return e;
  }
}

/**
 * Resolve the session for a model id. Only the stub ships here; anything else
 * reports "model not loaded" so the server answers 503 per the protocol.
 */
export function createSession(modelId: string, stub: boolean): BackendSession | null {
  if (stub) return new BackendSession(new ZeroStubBackend(4, modelId || "stub-zero"));
  return null;
}
