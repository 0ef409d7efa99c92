/**
 * Reference wire-protocol server.
 *
 * POST /v1/velocity  {shape, latent_b64, t, prompt|null, model} -> {shape, velocity_b64}
 * POST /v1/decode    {shape, latent_b64}                         -> {png_b64}
 * POST /v1/health    {}                                          -> {ok, channels}
 *
 * Errors: 400 schema violation or bad payload, 422 unsupported shape,
 * 503 model not loaded. Flags: --stub (zero model), --port, --model-id.
 */

import http from "node:http";

import { BackendSession, createSession } from "./model.js";
import { encodePngRgb } from "./png.js";
import {
  WireError,
  WireSchema,
  decodeF32,
  encodeF32,
  loadSchema,
  parseShape,
  validateMessage,
} from "./wire.js";

interface ServerOptions {
  stub: boolean;
  modelId: string;
}

function jsonBody(req: http.IncomingMessage): Promise<Record<string, unknown>> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    req.on("data", (c: Buffer) => chunks.push(c));
    req.on("end", () => {
      try {
        const text = Buffer.concat(chunks).toString("utf-8") || "{}";
        resolve(JSON.parse(text) as Record<string, unknown>);
      } catch {
        reject(new WireError(400, "request body is not valid JSON"));
      }
    });
    req.on("error", reject);
  });
}

function reply(res: http.ServerResponse, status: number, obj: unknown): void {
  const body = JSON.stringify(obj);
  res.writeHead(status, { "Content-Type": "application/json", "Content-Length": Buffer.byteLength(body) });
  res.end(body);
}

function handleVelocity(
  payload: Record<string, unknown>,
  session: BackendSession,
  schema: WireSchema
): { status: number; body: unknown } {
  const problems = validateMessage(payload, "velocity_request", schema);
  if (problems.length) throw new WireError(400, problems.join("; "));
  const shape = parseShape(payload.shape);
  const t = payload.t as number;
  if (t < 0 || t > 1) throw new WireError(400, `t must lie in [0, 1], got ${t}`);
  const latent = decodeF32(payload.latent_b64 as string, shape[0] * shape[1] * shape[2]);
  const prompt = (payload.prompt ?? null) as string | null;
  const embedding = session.embedding(prompt);
  const velocity = session.backend.velocity(latent, shape, t, embedding);
  return { status: 200, body: { shape, velocity_b64: encodeF32(velocity) } };
}

function handleDecode(
  payload: Record<string, unknown>,
  session: BackendSession,
  schema: WireSchema
): { status: number; body: unknown } {
  const problems = validateMessage(payload, "decode_request", schema);
  if (problems.length) throw new WireError(400, problems.join("; "));
  const shape = parseShape(payload.shape);
  const latent = decodeF32(payload.latent_b64 as string, shape[0] * shape[1] * shape[2]);
  const { rgb, height, width } = session.backend.decode(latent, shape);
  const png = encodePngRgb(rgb, height, width);
  return { status: 200, body: { png_b64: png.toString("base64") } };
}

export function createBridgeServer(options: ServerOptions): http.Server {
  const schema = loadSchema();
  const session = createSession(options.modelId, options.stub);
  return http.createServer(async (req, res) => {
    try {
      if (req.method !== "POST") {
        reply(res, 405, { error: "POST only" });
        return;
      }
      const payload = await jsonBody(req);
      if (req.url === "/v1/health") {
        if (!session) {
          reply(res, 503, { ok: false, error: `model '${options.modelId}' not loaded` });
        } else {
          reply(res, 200, { ok: true, channels: session.backend.channels });
        }
        return;
      }
      if (req.url !== "/v1/velocity" && req.url !== "/v1/decode") {
        reply(res, 404, { error: `unknown path ${req.url}` });
        return;
      }
      if (!session) throw new WireError(503, `model '${options.modelId}' not loaded`);
      const out =
        req.url === "/v1/velocity"
          ? handleVelocity(payload, session, schema)
          : handleDecode(payload, session, schema);
      reply(res, out.status, out.body);
    } catch (err) {
      if (err instanceof WireError) {
        reply(res, err.status, { error: err.message });
      } else {
        reply(res, 500, { error: String(err) });
      }
    }
  });
}

function parseArgs(argv: string[]): ServerOptions & { port: number } {
  const opts = { stub: false, modelId: "", port: 8787 };
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--stub") opts.stub = true;
    else if (argv[i] === "--port") opts.port = Number(argv[++i]);
    else if (argv[i] === "--model-id") opts.modelId = argv[++i];
  }
  return opts;
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() as string);
if (invokedDirectly) {
  const opts = parseArgs(process.argv.slice(2));
  const server = createBridgeServer(opts);
  server.listen(opts.port, "127.0.0.1", () => {
    const addr = server.address();
    const port = typeof addr === "object" && addr ? addr.port : opts.port;
    process.stdout.write(
      JSON.stringify({ listening: port, model: opts.stub ? "stub-zero" : opts.modelId || null }) + "\n"
    );
  });
}
