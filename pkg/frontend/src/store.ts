/** Queue state with optimistic label submission.
 *
 * Submitting removes the card immediately and posts in the background; a
 * failed POST restores the card at its original position.  A second submit
 * for the same pair while one is in flight is dropped, so every final label
 * originates from exactly one request.
 */

import type { ApiClient } from "./api.js";
import type { Label, PendingItem } from "./types.js";

export type SubmitOutcome = "submitted" | "duplicate" | "rolled_back";

export interface SubmitResult {
  outcome: SubmitOutcome;
  finalLabel?: number;
  error?: string;
}

type Listener = () => void;

export class QueueStore {
  items: PendingItem[] = [];
  remaining = 0;
  generation = 0;
  fetchError: string | null = null;
  lastSubmitError: string | null = null;
  labeled = 0;

  private inFlight = new Set<string>();
  private listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
  ) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  async refresh(limit = 20): Promise<void> {
    try {
      const response = await this.api.pending(limit);
      this.items = response.items;
      this.remaining = response.remaining;
      this.generation = response.generation;
      this.fetchError = null;
    } catch (error) {
      this.fetchError = error instanceof Error ? error.message : String(error);
    }
    this.notify();
  }

  /** Optimistically submit one label; duplicate submits are dropped. */
  async submitLabel(pairId: string, label: Label): Promise<SubmitResult> {
    if (this.inFlight.has(pairId)) {
      return { outcome: "duplicate" };
    }
    const index = this.items.findIndex((item) => item.pair_id === pairId);
    if (index < 0) {
      return { outcome: "duplicate" };
    }
    const snapshot = this.items[index]!;
    this.inFlight.add(pairId);
    this.items = this.items.filter((item) => item.pair_id !== pairId);
    this.remaining = Math.max(0, this.remaining - 1);
    this.lastSubmitError = null;
    this.notify();
    try {
      const result = await this.api.submitLabel(pairId, label, this.annotatorId);
      this.labeled += 1;
      return { outcome: "submitted", finalLabel: result.final_label };
    } catch (error) {
      // restore the card where it was
      const restored = this.items.slice();
      restored.splice(Math.min(index, restored.length), 0, snapshot);
      this.items = restored;
      this.remaining += 1;
      this.lastSubmitError = error instanceof Error ? error.message : String(error);
      return { outcome: "rolled_back", error: this.lastSubmitError };
    } finally {
      this.inFlight.delete(pairId);
      this.notify();
    }
  }
}
