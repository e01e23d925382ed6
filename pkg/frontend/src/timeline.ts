/**
 * Timeline model: ordered, non-overlapping segment chips with per-segment
 * uncertainty, selection, and the editable-field listing for the forms panel.
 */

import type { ActionSegment } from "./types.js";
import { CORE_FIELDS, FINGERS } from "./validation.js";

export interface TimelineChip {
  index: number;
  label: string;
  start: number;
  end: number;
  duration: number;
  alpha: number;
  emphasis: string;
}

export class TimelineModel {
  private segments: ActionSegment[] = [];
  private alphas: number[] = [];
  private starts: number[] = [];
  selected: number | null = null;
  pendingEdits = new Map<string, unknown>();

  setSegments(segments: ActionSegment[], alphas: number[]): void {
    if (segments.length !== alphas.length) {
      throw new Error("segments and alphas must align");
    }
    for (const a of alphas) {
      if (!(a > 0 && a < 1)) throw new Error(`alpha ${a} outside (0, 1)`);
    }
    // Starts derive from cumulative durations, so chips are ordered and
    // non-overlapping by construction; reject nonpositive durations anyway.
    const starts: number[] = [];
    let t = 0;
    for (const seg of segments) {
      if (!(seg.duration > 0)) throw new Error("segment duration must be > 0");
      starts.push(t);
      t += seg.duration;
    }
    this.segments = segments;
    this.alphas = alphas;
    this.starts = starts;
    if (this.selected !== null && this.selected >= segments.length) {
      this.selected = null;
    }
  }

  isEmpty(): boolean {
    return this.segments.length === 0;
  }

  count(): number {
    return this.segments.length;
  }

  chips(): TimelineChip[] {
    return this.segments.map((seg, i) => ({
      index: i,
      label: seg.gloss_id,
      start: this.starts[i]!,
      end: this.starts[i]! + seg.duration,
      duration: seg.duration,
      alpha: this.alphas[i]!,
      emphasis: seg.emphasis,
    }));
  }

  select(index: number): void {
    if (index < 0 || index >= this.segments.length) {
      throw new Error(`segment ${index} out of range`);
    }
    this.selected = index;
    this.pendingEdits.clear();
  }

  segment(index: number): ActionSegment {
    const seg = this.segments[index];
    if (!seg) throw new Error(`segment ${index} out of range`);
    return seg;
  }

  alpha(index: number): number {
    const a = this.alphas[index];
    if (a === undefined) throw new Error(`segment ${index} out of range`);
    return a;
  }

  /**
   * Editable paths for the selected segment: exactly the six schema fields
   * (with their leaf subpaths for the form inputs). Rejected fields never
   * appear here.
   */
  editableFields(index: number): string[] {
    const seg = this.segment(index);
    const paths: string[] = ["gloss_id", "handshape.type"];
    for (const f of FINGERS) paths.push(`handshape.finger_config.${f}`);
    seg.trajectory.forEach((_, i) => {
      for (const c of ["x", "y", "z", "t_offset"]) paths.push(`trajectory[${i}].${c}`);
    });
    paths.push("duration");
    for (const m of ["facial_expression", "head_movement", "eye_gaze"]) {
      paths.push(`non_manual_markers.${m}`);
    }
    paths.push("emphasis");
    return paths;
  }

  editableRoots(): readonly string[] {
    return CORE_FIELDS;
  }
}
