/**
 * Shared types: the sign-ir/1 segment schema and the service wire messages.
 */

export interface FingerConfig {
  thumb: number;
  index: number;
  middle: number;
  ring: number;
  pinky: number;
}

export interface Handshape {
  type: string;
  finger_config: FingerConfig;
}

export interface TrajectoryPoint {
  x: number;
  y: number;
  z: number;
  t_offset: number;
}

export interface NonManualMarkers {
  facial_expression: string;
  head_movement: string;
  eye_gaze: string;
}

export type Emphasis = "none" | "mild" | "strong";

export interface ActionSegment {
  gloss_id: string;
  handshape: Handshape;
  trajectory: TrajectoryPoint[];
  duration: number;
  non_manual_markers: NonManualMarkers;
  emphasis: Emphasis;
  /** UI-only keys (camera_tag, comment, ...) survive untouched. */
  [extra: string]: unknown;
}

export interface Patch {
  target_segment: number;
  set: Record<string, unknown>;
}

export interface ResampleReport {
  t_min: number;
  t_max: number;
  frames_regenerated: number;
  elapsed_ms: number;
  context_len: number;
}

// --- wire messages ----------------------------------------------------------

export interface OkResponse {
  type: "ok";
  req_id: number;
  [key: string]: unknown;
}

export interface ErrorResponse {
  type: "error";
  req_id?: number;
  code: string;
  message: string;
  path?: string;
}

export interface FrameMessage {
  type: "frame";
  session: string;
  frame_index: number;
  joints: Record<string, [number, number, number]>;
  alpha: number;
  supersede: boolean;
  msg_id: number;
}

export interface ProgressMessage {
  type: "progress";
  session: string;
  frames: number;
  gloss: string | null;
  msg_id: number;
}

export interface SegmentsMessage {
  type: "segments";
  session: string;
  schema: string;
  segments: ActionSegment[];
  alphas: number[];
  msg_id: number;
}

export interface ResampleMessage {
  type: "resample";
  session: string;
  t_min: number;
  t_max: number;
  frames_regenerated: number;
  elapsed_ms: number;
  context_len: number;
  msg_id: number;
}

export interface EndOfStreamMessage {
  type: "end_of_stream";
  session: string;
  msg_id: number;
}

export type StreamMessage =
  | FrameMessage
  | ProgressMessage
  | SegmentsMessage
  | ResampleMessage
  | EndOfStreamMessage;

export type ServerMessage = OkResponse | ErrorResponse | StreamMessage;

export const SCHEMA_ID = "sign-ir/1";
