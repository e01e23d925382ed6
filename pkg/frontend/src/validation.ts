/**
 * Client-side mirror of the server's patch-path rules so obviously bad
 * edits fail inline before a round trip. The server stays authoritative.
 */

export const CORE_FIELDS = [
  "gloss_id",
  "handshape",
  "trajectory",
  "duration",
  "non_manual_markers",
  "emphasis",
] as const;

export const REJECTED_FIELDS = new Set([
  "speed",
  "intensity",
  "spatial_relation",
  "prosody_cue",
  "other_field_1",
  "other_field_2",
]);

export const EMPHASIS_LEVELS = ["none", "mild", "strong"] as const;
export const FINGERS = ["thumb", "index", "middle", "ring", "pinky"] as const;

export interface FieldError {
  path: string;
  message: string;
}

export function pathRoot(path: string): string {
  const m = /^([A-Za-z_][A-Za-z0-9_]*)/.exec(path);
  return m ? m[1]! : path;
}

export function isSemanticPath(path: string): boolean {
  return (CORE_FIELDS as readonly string[]).includes(pathRoot(path));
}

/** null means locally acceptable; the server may still reject. */
export function checkFieldEdit(path: string, value: unknown): FieldError | null {
  const root = pathRoot(path);
  if (REJECTED_FIELDS.has(root)) {
    return { path, message: `"${root}" was voted out of the schema` };
  }
  if (path === "emphasis") {
    if (!(EMPHASIS_LEVELS as readonly unknown[]).includes(value)) {
      return { path, message: `emphasis must be one of ${EMPHASIS_LEVELS.join(", ")}` };
    }
  }
  if (path === "duration") {
    if (typeof value !== "number" || !Number.isFinite(value) || value <= 0) {
      return { path, message: "duration must be a positive number of seconds" };
    }
  }
  if (path === "gloss_id") {
    if (typeof value !== "string" || value.length === 0) {
      return { path, message: "gloss_id must be a non-empty string" };
    }
  }
  const finger = /^handshape\.finger_config\.([a-z]+)$/.exec(path);
  if (finger) {
    if (!(FINGERS as readonly string[]).includes(finger[1]!)) {
      return { path, message: `unknown finger "${finger[1]}"` };
    }
    if (typeof value !== "number" || !(value >= 0 && value <= 1)) {
      return { path, message: "finger values must lie in [0, 1]" };
    }
  }
  const traj = /^trajectory\[\d+\]\.(x|y|z|t_offset)$/.exec(path);
  if (traj && (typeof value !== "number" || !Number.isFinite(value))) {
    return { path, message: `${traj[1]} must be a finite number` };
  }
  return null;
}
