/** Runtime validation of server payloads.
 *
 * The client refuses to proceed on anything malformed, and additionally
 * rejects payloads that carry condition-revealing keys: the study is
 * blind, so a "strategy" or "target" field anywhere is a protocol bug.
 */

import type {
  DialogueTurnView,
  ItemView,
  NextPayload,
  Progress,
  SceneObjectView,
  SceneView,
  SubmitResult,
} from "./types.js";

export class PayloadError extends Error {}

const REVEALING_KEY = /strateg|target/i;

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function rejectRevealingKeys(v: unknown, path: string): void {
  if (Array.isArray(v)) {
    v.forEach((x, i) => rejectRevealingKeys(x, `${path}[${i}]`));
    return;
  }
  if (!isRecord(v)) return;
  for (const [key, val] of Object.entries(v)) {
    if (REVEALING_KEY.test(key)) {
      throw new PayloadError(
        `payload carries a condition-revealing key at ${path}.${key}`,
      );
    }
    rejectRevealingKeys(val, `${path}.${key}`);
  }
}

function asNumber(v: unknown, field: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new PayloadError(`${field} must be a finite number`);
  }
  return v;
}

function asInt(v: unknown, field: string): number {
  const n = asNumber(v, field);
  if (!Number.isInteger(n)) throw new PayloadError(`${field} must be an integer`);
  return n;
}

function asString(v: unknown, field: string): string {
  if (typeof v !== "string" || v.length === 0) {
    throw new PayloadError(`${field} must be a non-empty string`);
  }
  return v;
}

function parseProgress(raw: unknown): Progress {
  if (!isRecord(raw)) throw new PayloadError("progress must be an object");
  return {
    answered: asInt(raw.answered, "progress.answered"),
    total: asInt(raw.total, "progress.total"),
  };
}

function parseObject(raw: unknown, field: string): SceneObjectView {
  if (!isRecord(raw)) throw new PayloadError(`${field} must be an object`);
  const bbox = raw.bbox;
  if (!Array.isArray(bbox) || bbox.length !== 4) {
    throw new PayloadError(`${field}.bbox must be [x, y, w, h]`);
  }
  const [x, y, w, h] = bbox.map((v, i) => asNumber(v, `${field}.bbox[${i}]`));
  if (w <= 0 || h <= 0) throw new PayloadError(`${field}.bbox has empty extent`);
  const out: SceneObjectView = {
    id: asInt(raw.id, `${field}.id`),
    category: asString(raw.category, `${field}.category`),
    bbox: [x, y, w, h],
  };
  if (raw.color !== undefined) out.color = asString(raw.color, `${field}.color`);
  if (raw.size !== undefined) out.size = asString(raw.size, `${field}.size`);
  return out;
}

function parseScene(raw: unknown): SceneView {
  if (!isRecord(raw)) throw new PayloadError("scene must be an object");
  const grid = raw.grid;
  if (!Array.isArray(grid) || grid.length !== 2) {
    throw new PayloadError("scene.grid must be [rows, cols]");
  }
  const rows = asInt(grid[0], "scene.grid[0]");
  const cols = asInt(grid[1], "scene.grid[1]");
  if (!Array.isArray(raw.objects) || raw.objects.length === 0) {
    throw new PayloadError("scene.objects must be a non-empty list");
  }
  return {
    grid: [rows, cols],
    objects: raw.objects.map((o, i) => parseObject(o, `scene.objects[${i}]`)),
  };
}

function parseTurn(raw: unknown, field: string): DialogueTurnView {
  if (!isRecord(raw)) throw new PayloadError(`${field} must be an object`);
  return {
    question: asString(raw.question, `${field}.question`),
    answer: asString(raw.answer, `${field}.answer`),
  };
}

function parseItem(raw: unknown): ItemView {
  if (!isRecord(raw)) throw new PayloadError("item must be an object");
  const scene = parseScene(raw.scene);
  if (!Array.isArray(raw.candidate_ids) || raw.candidate_ids.length === 0) {
    throw new PayloadError("item.candidate_ids is missing or empty");
  }
  const candidates = raw.candidate_ids.map((c, i) =>
    asInt(c, `item.candidate_ids[${i}]`),
  );
  const known = new Set(scene.objects.map((o) => o.id));
  for (const c of candidates) {
    if (!known.has(c)) {
      throw new PayloadError(`candidate ${c} is not an object in the scene`);
    }
  }
  if (!Array.isArray(raw.dialogue)) {
    throw new PayloadError("item.dialogue must be a list");
  }
  return {
    transcript_id: asString(raw.transcript_id, "item.transcript_id"),
    game_id: asString(raw.game_id, "item.game_id"),
    scene,
    candidate_ids: candidates,
    dialogue: raw.dialogue.map((t, i) => parseTurn(t, `item.dialogue[${i}]`)),
  };
}

export function parseNextPayload(raw: unknown): NextPayload {
  rejectRevealingKeys(raw, "$");
  if (!isRecord(raw)) throw new PayloadError("response must be an object");
  if (typeof raw.done !== "boolean") {
    throw new PayloadError("response.done must be a boolean");
  }
  const progress = parseProgress(raw.progress);
  if (raw.done) return { done: true, progress };
  return { done: false, item: parseItem(raw.item), progress };
}

export function parseSubmitResult(raw: unknown): SubmitResult {
  rejectRevealingKeys(raw, "$");
  if (!isRecord(raw)) throw new PayloadError("response must be an object");
  if (raw.status !== "stored" && raw.status !== "duplicate") {
    throw new PayloadError("response.status must be stored or duplicate");
  }
  return { status: raw.status, progress: parseProgress(raw.progress) };
}
