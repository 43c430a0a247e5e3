import type { SpanMark } from "./api.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

interface Range {
  start: number;
  end: number;
  label: string;
}

function findRanges(translation: string, spans: SpanMark[]): Range[] {
  const ranges: Range[] = [];
  for (const span of spans) {
    if (!span.phrase) continue;
    let from = 0;
    while (true) {
      const at = translation.indexOf(span.phrase, from);
      if (at < 0) break;
      ranges.push({ start: at, end: at + span.phrase.length, label: span.label });
      from = at + span.phrase.length;
    }
  }
  ranges.sort((a, b) => a.start - b.start || b.end - a.end);
  const kept: Range[] = [];
  let cursor = 0;
  for (const range of ranges) {
    if (range.start >= cursor) {
      kept.push(range);
      cursor = range.end;
    }
  }
  return kept;
}

/** Translation as HTML with formal phrases marked in one style and
 * informal phrases in another. */
export function highlightTranslation(translation: string, spans: SpanMark[]): string {
  const ranges = findRanges(translation, spans);
  const parts: string[] = [];
  let cursor = 0;
  for (const range of ranges) {
    parts.push(escapeHtml(translation.slice(cursor, range.start)));
    const phrase = escapeHtml(translation.slice(range.start, range.end));
    parts.push(`<mark class="span-${range.label}">${phrase}</mark>`);
    cursor = range.end;
  }
  parts.push(escapeHtml(translation.slice(cursor)));
  return parts.join("");
}
