/**
 * Client for the `verbatim bridge` stdio protocol.
 *
 * The bridge is a separate process speaking line-delimited JSON: the host
 * loop opens a session against an index directory, then per step sends the
 * model's raw logits (base64 little-endian float32) together with the token
 * it just emitted; the bridge advances the session and returns adjusted
 * logits for the next step. Token selection stays on this side — the bridge
 * only owns constraints, window bonuses, and provenance.
 *
 * Responses echo the request `id` and carry either `ok: true` plus the
 * result fields or `ok: false` with `error: {code, message}`; errors never
 * kill the served loop, so one client can keep multiple sessions open.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface } from "node:readline";

/** Error codes the bridge can return. */
export type BridgeErrorCode =
  | "bad_request"
  | "not_found"
  | "version_mismatch"
  | "format_error"
  | "bad_length"
  | "constraint_violation"
  | "state_error"
  | "internal";

export class BridgeError extends Error {
  readonly code: BridgeErrorCode;

  constructor(code: BridgeErrorCode, message: string) {
    super(message);
    this.name = "BridgeError";
    this.code = code;
  }
}

export interface BridgeClientOptions {
  /** Executable serving the protocol; defaults to $VERBATIM_BIN or "verbatim". */
  command?: string;
  /** Arguments for the executable; defaults to ["bridge"]. */
  args?: string[];
  env?: NodeJS.ProcessEnv;
}

export interface SpecialTokens {
  clue_open: number;
  clue_close: number;
  span_sep: number;
  evidence_open: number;
  evidence_close: number;
  eos: number;
}

export interface ProcessResult {
  /** Adjusted logits, or null when no raw array was sent or the session finished. */
  adjusted: Float32Array | null;
  finished: boolean;
}

interface Pending {
  resolve(body: Record<string, unknown>): void;
  reject(err: Error): void;
}

/** Encode float32 logits as the base64 little-endian payload the bridge expects. */
export function floatsToBase64(values: Float32Array): string {
  return Buffer.from(values.buffer, values.byteOffset, values.byteLength).toString("base64");
}

/** Decode a base64 payload from the bridge back into float32 logits. */
export function base64ToFloats(b64: string): Float32Array {
  const buf = Buffer.from(b64, "base64");
  if (buf.byteLength % 4 !== 0) {
    throw new Error(`payload length ${buf.byteLength} is not a multiple of 4`);
  }
  // Copy so the result does not alias the Buffer pool.
  return new Float32Array(buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength));
}

export class BridgeClient {
  private readonly child: ChildProcessWithoutNullStreams;
  private readonly pending = new Map<number, Pending>();
  private nextId = 1;
  private exited = false;
  private stderrTail = "";

  constructor(options: BridgeClientOptions = {}) {
    const command = options.command ?? process.env.VERBATIM_BIN ?? "verbatim";
    const args = options.args ?? ["bridge"];
    this.child = spawn(command, args, {
      stdio: ["pipe", "pipe", "pipe"],
      env: options.env ?? process.env,
    });
    const lines = createInterface({ input: this.child.stdout });
    lines.on("line", (line) => this.onLine(line));
    this.child.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString("utf8")).slice(-4096);
    });
    this.child.on("error", (err) => this.failAll(err));
    this.child.on("exit", (code) => {
      this.exited = true;
      if (this.pending.size > 0) {
        this.failAll(
          new Error(`bridge exited with code ${code}${this.stderrTail ? `: ${this.stderrTail}` : ""}`),
        );
      }
    });
  }

  /** Send one request and await its matching response body. */
  request(op: string, fields: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.exited) {
      return Promise.reject(new Error("bridge process has exited"));
    }
    const id = this.nextId++;
    const line = JSON.stringify({ id, op, ...fields });
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.child.stdin.write(line + "\n", (err) => {
        if (err) {
          this.pending.delete(id);
          reject(err);
        }
      });
    });
  }

  /**
   * Open a decoding session. `config` entries override the engine defaults;
   * unknown keys are rejected by the bridge.
   */
  async open(
    indexDir: string,
    query: string,
    config?: Record<string, unknown>,
  ): Promise<SessionHandle> {
    const body = await this.request("open", {
      index_dir: indexDir,
      query,
      ...(config === undefined ? {} : { config }),
    });
    return new SessionHandle(
      this,
      body.handle as number,
      body.extended_size as number,
      body.vocab as Record<string, unknown>,
      body.specials as SpecialTokens,
    );
  }

  /** Message of the most recent error the bridge recorded ("" if none). */
  async lastError(): Promise<string> {
    const body = await this.request("last_error");
    return body.message as string;
  }

  /** Close stdin and wait for the bridge process to exit. */
  async dispose(): Promise<void> {
    if (this.exited) {
      return;
    }
    this.child.stdin.end();
    await new Promise<void>((resolve) => {
      const timer = setTimeout(() => {
        this.child.kill("SIGKILL");
        resolve();
      }, 5000);
      this.child.once("exit", () => {
        clearTimeout(timer);
        resolve();
      });
    });
  }

  private onLine(line: string): void {
    let resp: Record<string, unknown>;
    try {
      resp = JSON.parse(line) as Record<string, unknown>;
    } catch {
      return; // not part of the protocol; ignore
    }
    const id = resp.id;
    if (typeof id !== "number") {
      return; // responses to requests this client never sent
    }
    const waiter = this.pending.get(id);
    if (!waiter) {
      return;
    }
    this.pending.delete(id);
    if (resp.ok === true) {
      waiter.resolve(resp);
    } else {
      const err = (resp.error ?? {}) as { code?: string; message?: string };
      waiter.reject(
        new BridgeError((err.code ?? "internal") as BridgeErrorCode, err.message ?? "unknown error"),
      );
    }
  }

  private failAll(err: Error): void {
    for (const waiter of this.pending.values()) {
      waiter.reject(err);
    }
    this.pending.clear();
  }
}

/**
 * One generation sequence owned by the bridge. A handle must not be shared
 * between concurrent drivers; distinct handles are independent.
 */
export class SessionHandle {
  constructor(
    private readonly client: BridgeClient,
    readonly handle: number,
    readonly extendedSize: number,
    readonly vocab: Record<string, unknown>,
    readonly specials: SpecialTokens,
  ) {}

  /**
   * Advance with the token emitted last (null on the first call), then adjust
   * `raw`. Passing `raw: null` advances without requesting adjusted logits —
   * used to deliver the final token of a sequence.
   */
  async processLogits(raw: Float32Array | null, lastToken: number | null): Promise<ProcessResult> {
    const body = await this.client.request("process", {
      handle: this.handle,
      raw: raw === null ? null : floatsToBase64(raw),
      last_token: lastToken,
    });
    const adjusted = body.adjusted;
    return {
      adjusted: typeof adjusted === "string" ? base64ToFloats(adjusted) : null,
      finished: body.finished as boolean,
    };
  }

  /** Raw variant of {@link processLogits} keeping base64 payloads untouched. */
  async processBase64(
    raw: string | null,
    lastToken: number | null,
  ): Promise<{ adjusted: string | null; finished: boolean }> {
    const body = await this.client.request("process", {
      handle: this.handle,
      raw,
      last_token: lastToken,
    });
    return {
      adjusted: (body.adjusted as string | null) ?? null,
      finished: body.finished as boolean,
    };
  }

  /** Release the session and return the final structured output. */
  async close(): Promise<Record<string, unknown>> {
    const body = await this.client.request("close", { handle: this.handle });
    return body.output as Record<string, unknown>;
  }
}
