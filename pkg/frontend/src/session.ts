/** Drives one annotator through their assignment, item by item. */

import { ApiClient, submitWithRetry } from "./api.js";
import type { ItemView, Progress, SubmitResult } from "./types.js";

export interface ScriptedOutcome {
  submitted: number;
  duplicates: number;
  requests: { transcript_id: string; chosen_candidate_id: number }[];
  progress: Progress;
}

/** Answer every pending item with choose(item); returns what was sent.
 *
 * This is the scripted counterpart of the interactive flow in main.ts
 * and is what the end-to-end test runs against a live service.
 */
export async function runScriptedSession(
  client: ApiClient,
  annotatorId: string,
  choose: (item: ItemView) => number,
): Promise<ScriptedOutcome> {
  const outcome: ScriptedOutcome = {
    submitted: 0,
    duplicates: 0,
    requests: [],
    progress: { answered: 0, total: 0 },
  };
  for (;;) {
    const next = await client.nextItem(annotatorId);
    outcome.progress = next.progress;
    if (next.done) return outcome;
    const chosen = choose(next.item);
    const result: SubmitResult = await submitWithRetry(client, {
      annotator_id: annotatorId,
      transcript_id: next.item.transcript_id,
      chosen_candidate_id: chosen,
    });
    outcome.requests.push({
      transcript_id: next.item.transcript_id,
      chosen_candidate_id: chosen,
    });
    if (result.status === "stored") outcome.submitted += 1;
    else outcome.duplicates += 1;
    outcome.progress = result.progress;
  }
}
