// Keyboard-only operation: every verdict action has a key. Sessions run
// to 160+ items, so hands stay on the keyboard.

import type { ReviewSession } from "./session.js";
import type { Difficulty, ErrorClass } from "./types.js";

export const CLASS_KEYS: Record<string, ErrorClass> = {
  m: "missing_annotation",
  f: "false_label",
  p: "incorrect_position",
  s: "left_right_swap",
  v: "visibility_error",
};

export const DIFFICULTY_KEYS: Record<string, Difficulty> = {
  e: "easy",
  h: "hard",
  i: "impossible",
};

export interface KeyResult {
  handled: boolean;
  submitted?: Promise<boolean>;
}

/**
 * Dispatch a key press to the session. Digits select joints 0-9, [ and ]
 * cycle the selection, letter keys toggle classes on the selected joint or
 * set the difficulty, Enter submits.
 */
export function handleKey(session: ReviewSession, key: string): KeyResult {
  if (!session.state) return { handled: false };
  if (key >= "0" && key <= "9") {
    session.selectJoint(Number(key));
    return { handled: true };
  }
  if (key === "[") {
    session.cycleJoint(-1);
    return { handled: true };
  }
  if (key === "]") {
    session.cycleJoint(1);
    return { handled: true };
  }
  const cls = CLASS_KEYS[key];
  if (cls) {
    session.toggleOnSelected(cls);
    return { handled: true };
  }
  const difficulty = DIFFICULTY_KEYS[key];
  if (difficulty) {
    session.setDifficulty(difficulty);
    return { handled: true };
  }
  if (key === "Enter") {
    if (!session.canSubmit) return { handled: true };
    return { handled: true, submitted: session.submit() };
  }
  return { handled: false };
}
