/** Shapes of the annotation service payloads, mirrored field for field. */

export interface SceneObjectView {
  id: number;
  category: string;
  color?: string;
  size?: string;
  bbox: [number, number, number, number];
}

export interface SceneView {
  grid: [number, number];
  objects: SceneObjectView[];
}

export interface DialogueTurnView {
  question: string;
  answer: string;
}

export interface ItemView {
  transcript_id: string;
  game_id: string;
  scene: SceneView;
  candidate_ids: number[];
  dialogue: DialogueTurnView[];
}

export interface Progress {
  answered: number;
  total: number;
}

export type NextPayload =
  | { done: false; item: ItemView; progress: Progress }
  | { done: true; progress: Progress };

export interface AnnotationRequest {
  annotator_id: string;
  transcript_id: string;
  chosen_candidate_id: number;
}

export interface SubmitResult {
  status: "stored" | "duplicate";
  progress: Progress;
}
