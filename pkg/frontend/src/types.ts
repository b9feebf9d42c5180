// Wire types of the review service API. Field names and enum values must
// stay in lockstep with the service schema; verdicts round-trip verbatim.

export type ErrorClass =
  | "missing_annotation"
  | "false_label"
  | "incorrect_position"
  | "left_right_swap"
  | "visibility_error";

export type Difficulty = "easy" | "hard" | "impossible";

export const ERROR_CLASSES: ErrorClass[] = [
  "missing_annotation",
  "false_label",
  "incorrect_position",
  "left_right_swap",
  "visibility_error",
];

export const DIFFICULTIES: Difficulty[] = ["easy", "hard", "impossible"];

/** Classes that mark an annotation as faulty (mirrors the service rule). */
export const FAULTY_CLASSES: ReadonlySet<ErrorClass> = new Set([
  "missing_annotation",
  "false_label",
  "incorrect_position",
  "left_right_swap",
]);

export interface OverlayPayload {
  convention: "COCO17" | "MPII16";
  joint_names: string[];
  flip_pairs: [number, number][];
  /** per joint: [x, y, visibility(0|1|2)] */
  keypoints: [number, number, number][];
  flagged_joints: number[];
  bbox: [number, number, number, number];
  center?: [number, number];
  scale?: number;
}

export interface ReviewTask {
  task_id: string;
  pose_id: string;
  image_id: string;
  source: "flagged" | "random_sample" | "control";
  overlay: OverlayPayload;
}

export interface NextTaskResponse {
  done: boolean;
  task?: ReviewTask;
}

export interface VerdictPayload {
  verdict_id: string;
  annotator_id: string;
  pose_id: string;
  joint_index: number | null;
  error_classes: ErrorClass[];
  difficulty: Difficulty | null;
  free_text: string;
  source: string;
}

export interface StoredVerdict extends VerdictPayload {
  faulty: boolean;
  timestamp: number;
}

export interface SubmitResult {
  accepted: boolean;
  results: { verdict_id: string; stored: boolean }[];
}
