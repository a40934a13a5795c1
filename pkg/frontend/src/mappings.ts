// Identity-mapping table helpers: which sheets still need attention and
// which roster entries a sheet may legally take.

import type { Mapping } from "./api.js";

export interface RosterOption {
  roll: string;
  name: string;
  taken: boolean;
}

/** Sheets needing instructor attention come first, worst first. */
export function attentionOrder(mappings: Mapping[]): Mapping[] {
  const rank = (m: Mapping): number =>
    m.status === "unmapped" ? 0 : m.status === "manual" ? 1 : 2;
  return [...mappings].sort((a, b) => {
    const d = rank(a) - rank(b);
    if (d !== 0) return d;
    if (a.edit_distance !== b.edit_distance) {
      return b.edit_distance - a.edit_distance;
    }
    return a.bundle_id < b.bundle_id ? -1 : 1;
  });
}

export function unmappedCount(mappings: Mapping[]): number {
  return mappings.filter((m) => m.status === "unmapped").length;
}

/**
 * Options for one sheet's reassignment dropdown. A roll assigned to a
 * different sheet is present but disabled, so the bijection the server
 * enforces is visible before the request is made.
 */
export function rollOptions(
  roster: { roll: string; name: string }[],
  mappings: Mapping[],
  bundleId: string,
): RosterOption[] {
  const takenBy = new Map<string, string>();
  for (const m of mappings) {
    if (m.matched_roll !== null && m.status !== "unmapped") {
      takenBy.set(m.matched_roll, m.bundle_id);
    }
  }
  return roster.map((entry) => ({
    roll: entry.roll,
    name: entry.name,
    taken:
      takenBy.has(entry.roll) && takenBy.get(entry.roll) !== bundleId,
  }));
}
