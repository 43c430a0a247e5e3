import type { Formality, SpanMark } from "./api.js";

export interface QueryHistoryEntry {
  request: { text: string; formality: Formality };
  response: { translation: string; spans: SpanMark[] };
  timestamp: number;
}

/** Append-only record of the session's exchanges, newest reported first. */
export class SessionHistory {
  private readonly items: QueryHistoryEntry[] = [];

  append(entry: QueryHistoryEntry): void {
    this.items.push(entry);
  }

  entries(): readonly QueryHistoryEntry[] {
    return [...this.items].reverse();
  }

  get size(): number {
    return this.items.length;
  }
}
