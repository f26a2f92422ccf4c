// Session lifecycle and error surface of the bridge, driven end to end
// through a spawned process: open/process/close ordering, isolation between
// handles, constraint and length violations, and the last-error fetch.

import { mkdtempSync, readFileSync, rmSync, writeFileSync, cpSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { BridgeClient, BridgeError, floatsToBase64 } from "../src/client";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = join(here, "..", "fixtures");
const indexDir = join(fixtures, "idx");
const QUERY = "recite the launch checklist";

// Most negative finite float32; masked entries carry this, never -Infinity.
const SENTINEL = -3.4028234663852886e38;

const vocab: { terms: string[] } = JSON.parse(
  readFileSync(join(indexDir, "vocab.json"), "utf8"),
);
const idOf = (term: string) => {
  const at = vocab.terms.indexOf(term);
  if (at < 0) throw new Error(`term not in vocabulary: ${term}`);
  return at + 2; // ids 0 and 1 are reserved
};

let client: BridgeClient;

beforeAll(() => {
  client = new BridgeClient();
});

afterAll(async () => {
  await client.dispose();
});

async function expectBridgeError(p: Promise<unknown>, code: string): Promise<BridgeError> {
  try {
    await p;
  } catch (err) {
    expect(err).toBeInstanceOf(BridgeError);
    expect((err as BridgeError).code).toBe(code);
    return err as BridgeError;
  }
  throw new Error(`expected bridge error ${code}, got success`);
}

describe("open", () => {
  it("returns the vocabulary table and control-token ids", async () => {
    const session = await client.open(indexDir, QUERY);
    const table = session.vocab as { terms: string[] };
    expect(table.terms).toEqual(vocab.terms);
    const v = vocab.terms.length + 2;
    expect(session.specials).toEqual({
      clue_open: v,
      clue_close: v + 1,
      span_sep: v + 2,
      evidence_open: v + 3,
      evidence_close: v + 4,
      eos: v + 5,
    });
    expect(session.extendedSize).toBe(v + 6);
    await session.close();
  });

  it("a wrong path fails with not_found naming the path", async () => {
    const missing = join(fixtures, "no-such-index");
    const err = await expectBridgeError(client.open(missing, QUERY), "not_found");
    expect(err.message).toContain(missing);
    expect(await client.lastError()).toBe(err.message);
  });

  it("an index with a bumped format version fails with version_mismatch", async () => {
    const dir = mkdtempSync(join(tmpdir(), "verbatim-host-"));
    try {
      cpSync(indexDir, dir, { recursive: true });
      const blob = readFileSync(join(dir, "forward.fmx"));
      blob.writeUInt32LE(99, 4); // version field follows the 4-byte magic
      writeFileSync(join(dir, "forward.fmx"), blob);
      await expectBridgeError(client.open(dir, QUERY), "version_mismatch");
    } finally {
      rmSync(dir, { recursive: true, force: true });
    }
  });

  it("unknown config keys are rejected", async () => {
    await expectBridgeError(
      client.open(indexDir, QUERY, { no_such_knob: 1 }),
      "bad_request",
    );
  });

  it("two handles on one index advance independently", async () => {
    const a = await client.open(indexDir, QUERY);
    const b = await client.open(indexDir, QUERY);
    expect(a.handle).not.toBe(b.handle);

    // Move only session a past the opening token; b must still accept it.
    await a.processLogits(null, a.specials.clue_open);
    await a.processLogits(null, idOf("checklist"));
    const fromB = await b.processLogits(null, b.specials.clue_open);
    expect(fromB.finished).toBe(false);

    const outA = (await a.close()) as { clues: string[] };
    const outB = (await b.close()) as { clues: string[] };
    expect(outA.clues).toEqual([]); // span still open, nothing committed
    expect(outB.clues).toEqual([]);
  });
});

describe("process", () => {
  it("masks every token but the forced opener to the float32 sentinel", async () => {
    const session = await client.open(indexDir, QUERY);
    const raw = new Float32Array(session.extendedSize); // zeros
    const { adjusted, finished } = await session.processLogits(raw, null);
    expect(finished).toBe(false);
    expect(adjusted).not.toBeNull();
    for (let t = 0; t < adjusted!.length; t++) {
      if (t === session.specials.clue_open) {
        expect(adjusted![t]).toBeGreaterThan(SENTINEL);
      } else {
        expect(adjusted![t]).toBe(SENTINEL);
      }
    }
    await session.close();
  });

  it("rejects logits arrays of the wrong length", async () => {
    const session = await client.open(indexDir, QUERY);
    await expectBridgeError(
      session.processLogits(new Float32Array(5), null),
      "bad_length",
    );
    await session.close();
  });

  it("rejects payloads that are not base64", async () => {
    const session = await client.open(indexDir, QUERY);
    await expectBridgeError(session.processBase64("@@not-base64@@", null), "bad_request");
    await session.close();
  });

  it("a token outside the mask is a constraint violation", async () => {
    const session = await client.open(indexDir, QUERY);
    const err = await expectBridgeError(
      session.processLogits(null, idOf("the")), // first token must be clue_open
      "constraint_violation",
    );
    expect(await client.lastError()).toBe(err.message);
    await session.close();
  });

  it("returns raw logits unchanged once the answer stage begins", async () => {
    const session = await client.open(indexDir, QUERY);
    const sp = session.specials;
    for (const token of [sp.clue_open, idOf("checklist"), sp.clue_close, sp.evidence_open]) {
      await session.processLogits(null, token);
    }
    for (const term of "the launch checklist says ignition follows countdown".split(" ")) {
      await session.processLogits(null, idOf(term));
    }
    await session.processLogits(null, sp.evidence_close);

    // Arbitrary but deterministic raw values; answer stage must pass them through.
    const raw = new Float32Array(session.extendedSize);
    for (let i = 0; i < raw.length; i++) {
      raw[i] = Math.fround(Math.sin(i) * 3);
    }
    const b64 = floatsToBase64(raw);
    const step = await session.processBase64(b64, null);
    expect(step.adjusted).toBe(b64);
    await session.close();
  });
});

describe("close", () => {
  it("immediately after open returns an empty result", async () => {
    const session = await client.open(indexDir, QUERY);
    const output = (await session.close()) as {
      clues: string[];
      evidence: unknown[];
      answer: string;
    };
    expect(output.clues).toEqual([]);
    expect(output.evidence).toEqual([]);
    expect(output.answer).toBe("");
  });

  it("double close and use-after-close are state errors", async () => {
    const session = await client.open(indexDir, QUERY);
    await session.close();
    await expectBridgeError(session.close(), "state_error");
    await expectBridgeError(session.processLogits(null, 2), "state_error");
  });
});

describe("last_error", () => {
  it("starts empty on a fresh bridge", async () => {
    const fresh = new BridgeClient();
    try {
      expect(await fresh.lastError()).toBe("");
    } finally {
      await fresh.dispose();
    }
  });
});
