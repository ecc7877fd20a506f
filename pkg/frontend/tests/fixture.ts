/** In-memory fixture server implementing the service API contract used by
 * the labeler: pending-queue reads and annotation posts, with the same
 * semantics as the real service (human label becomes the final label, the
 * pair leaves the queue, unknown pairs 404).
 */

import type { FetchLike } from "../src/api.js";
import type { PendingItem } from "../src/types.js";

export interface FixturePair {
  item: PendingItem;
  status: "pending" | "labeled";
  humanLabel: number | null;
  finalLabel: number | null;
}

/** The running-example rows: (stub label, confidence); alpha = 0.5 queues
 * the 0.3 and 0.4 rows for human annotation. */
export const EXAMPLE_ROWS: ReadonlyArray<readonly [number, number]> = [
  [1, 0.3],
  [1, 0.4],
  [0, 0.45],
  [1, 0.2],
];

export function makeItems(
  rows: ReadonlyArray<readonly [number, number]> = EXAMPLE_ROWS,
): PendingItem[] {
  return rows.map(([stub, confidence], i) => ({
    pair_id: `img-${i}:sug-${i}`,
    image_id: `img-${i}`,
    suggestion_id: `sug-${i}`,
    presented_text: `${i} ${i + 1} ${i + 2}`,
    tokens: [i, i + 1, i + 2],
    stub_label: stub,
    confidence,
    topic_id: i % 2,
    features: [0.2 * i, 1 - 0.1 * i, 0.5, -0.3],
  }));
}

export class FixtureServer {
  pairs = new Map<string, FixturePair>();
  requests: { method: string; path: string; body?: unknown }[] = [];
  failNextSubmit: number | null = null; // HTTP status to fail the next POST with
  networkDown = false;
  generation = 1;

  constructor(items: PendingItem[] = makeItems()) {
    for (const item of items) {
      this.pairs.set(item.pair_id, {
        item,
        status: "pending",
        humanLabel: null,
        finalLabel: null,
      });
    }
  }

  pendingItems(): PendingItem[] {
    return [...this.pairs.values()]
      .filter((p) => p.status === "pending")
      .map((p) => p.item);
  }

  fetch: FetchLike = async (input, init) => {
    const url = new URL(input, "http://fixture");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, path: url.pathname, body });
    if (this.networkDown) {
      throw new TypeError("network request failed");
    }

    if (method === "GET" && url.pathname === "/annotations/pending") {
      const pending = this.pendingItems();
      const limitRaw = url.searchParams.get("limit");
      const limit = limitRaw === null ? pending.length : Number(limitRaw);
      return json(200, {
        generation: this.generation,
        items: pending.slice(0, limit),
        remaining: pending.length,
      });
    }

    if (method === "POST" && url.pathname === "/annotations") {
      if (this.failNextSubmit !== null) {
        const status = this.failNextSubmit;
        this.failNextSubmit = null;
        return json(status, { error: "injected failure", code: status });
      }
      const { pair_id, label } = body as { pair_id: string; label: number };
      const pair = this.pairs.get(pair_id);
      if (!pair || pair.status !== "pending") {
        return json(404, { error: `pair ${pair_id} is not in the annotation queue`, code: 404 });
      }
      if (label !== 0 && label !== 1) {
        return json(400, { error: "label must be 0 or 1", code: 400 });
      }
      pair.humanLabel = label;
      pair.finalLabel = label;
      pair.status = "labeled";
      return json(200, { pair_id, final_label: label, status: "labeled" });
    }

    if (method === "GET" && url.pathname === "/health") {
      return json(200, { status: "ok", generation: this.generation });
    }

    return json(404, { error: `no route ${method} ${url.pathname}`, code: 404 });
  };
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "content-type": "application/json" },
  });
}
