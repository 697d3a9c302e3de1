/** Pure session-side state: candidate selection and scene layout. */

import type { ItemView, SceneView } from "./types.js";

/** Single-selection holder; re-selecting replaces the previous choice. */
export class Selection {
  private current: number | null = null;

  constructor(readonly candidateIds: readonly number[]) {
    if (candidateIds.length === 0) {
      throw new Error("no candidates to select from");
    }
  }

  select(candidateId: number): void {
    if (!this.candidateIds.includes(candidateId)) {
      throw new Error(`object ${candidateId} is not a candidate`);
    }
    this.current = candidateId;
  }

  clear(): void {
    this.current = null;
  }

  get selected(): number | null {
    return this.current;
  }
}

/** Map a 1-based keyboard digit to the nth candidate, or null. */
export function candidateForDigit(item: ItemView, digit: number): number | null {
  if (digit < 1 || digit > item.candidate_ids.length) return null;
  return item.candidate_ids[digit - 1];
}

export interface BoxLayout {
  id: number;
  x: number;
  y: number;
  w: number;
  h: number;
  label: string;
  candidate: boolean;
  /** 1-based keyboard shortcut; 0 for non-candidates. */
  shortcut: number;
}

export interface SceneLayout {
  width: number;
  height: number;
  boxes: BoxLayout[];
}

/** Geometry for the scene canvas; every candidate box is interactive. */
export function sceneLayout(
  scene: SceneView,
  candidateIds: readonly number[],
): SceneLayout {
  let width = 0;
  let height = 0;
  for (const obj of scene.objects) {
    width = Math.max(width, obj.bbox[0] + obj.bbox[2]);
    height = Math.max(height, obj.bbox[1] + obj.bbox[3]);
  }
  const order = new Map(candidateIds.map((id, i) => [id, i + 1]));
  const boxes = scene.objects.map((obj) => {
    const shortcut = order.get(obj.id) ?? 0;
    const descr = [obj.size, obj.color, obj.category]
      .filter((part): part is string => Boolean(part))
      .join(" ");
    return {
      id: obj.id,
      x: obj.bbox[0],
      y: obj.bbox[1],
      w: obj.bbox[2],
      h: obj.bbox[3],
      label: shortcut > 0 ? `${shortcut}. ${descr}` : descr,
      candidate: shortcut > 0,
      shortcut,
    };
  });
  return { width: width * 1.02, height: height * 1.02, boxes };
}

/** CSS class for an oracle answer; anything unexpected renders as "na". */
export function answerClass(answer: string): "yes" | "no" | "na" {
  if (answer === "yes") return "yes";
  if (answer === "no") return "no";
  return "na";
}
