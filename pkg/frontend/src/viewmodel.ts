// Pure snapshot -> drawing-data functions. Every number rendered by the
// UI is copied verbatim from a service snapshot; nothing is computed
// client-side beyond screen-coordinate scaling.

import type { StateSnapshot } from "./types.js";

export const CONCEPT_PALETTE = [
  "#e4572e", "#2e86ab", "#44af69", "#b14fc5",
  "#f4b41a", "#5d5179", "#1b998b", "#c1292e",
];

export type GlyphShape = "circle" | "square" | "triangle" | "diamond";

const SHAPE_CYCLE: GlyphShape[] = ["circle", "square", "triangle", "diamond"];

export interface MapGlyph {
  objectId: number;
  cx: number;
  cy: number;
  fill: string;
  shape: GlyphShape;
  label: string;
  isCandidate: boolean;
  isTarget: boolean;
  answer: string | null;
}

export interface IgBar {
  objectId: number;
  value: number | null;
  /** 0..1 relative to the tallest bar in the snapshot */
  fraction: number;
  exactText: string;
}

export interface AriPoint {
  step: number;
  ari: number;
  x: number;
  y: number;
  exactText: string;
}

/** Exact decimal text for a snapshot number; displayed verbatim. */
export function exactText(value: number | null): string {
  return value === null ? "-" : String(value);
}

export function shapeForClass(snapshot: StateSnapshot): Map<string, GlyphShape> {
  const classes = [...new Set(snapshot.objects.map((o) => o.class_name))].sort();
  return new Map(classes.map((name, i) => [name, SHAPE_CYCLE[i % SHAPE_CYCLE.length]]));
}

export function mapGlyphs(
  snapshot: StateSnapshot,
  width: number,
  height: number,
  padding = 30,
): MapGlyph[] {
  const xs = snapshot.objects.map((o) => o.x);
  const ys = snapshot.objects.map((o) => o.y);
  const minX = Math.min(...xs);
  const maxX = Math.max(...xs);
  const minY = Math.min(...ys);
  const maxY = Math.max(...ys);
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const shapes = shapeForClass(snapshot);
  const targetId = snapshot.question?.target_object_id ?? null;
  return snapshot.objects.map((o) => ({
    objectId: o.object_id,
    cx: padding + ((o.x - minX) / spanX) * (width - 2 * padding),
    // screen y grows downward; map y grows upward
    cy: height - padding - ((o.y - minY) / spanY) * (height - 2 * padding),
    fill: CONCEPT_PALETTE[o.map_concept % CONCEPT_PALETTE.length],
    shape: shapes.get(o.class_name) ?? "circle",
    label: `${o.class_name} #${o.object_id}`,
    isCandidate: o.is_candidate,
    isTarget: o.object_id === targetId,
    answer: o.answer,
  }));
}

export function igBars(snapshot: StateSnapshot): IgBar[] {
  const values = snapshot.candidates
    .map((c) => c.ig_value)
    .filter((v): v is number => v !== null);
  const top = values.length ? Math.max(...values) : 0;
  return snapshot.candidates.map((c) => ({
    objectId: c.object_id,
    value: c.ig_value,
    fraction: c.ig_value === null || top <= 0 ? 0 : Math.max(c.ig_value, 0) / top,
    exactText: exactText(c.ig_value),
  }));
}

export function ariSeries(
  snapshot: StateSnapshot,
  width: number,
  height: number,
  padding = 24,
): AriPoint[] {
  const steps = snapshot.history.map((h) => h.step);
  const minStep = Math.min(...steps);
  const maxStep = Math.max(...steps);
  const span = maxStep - minStep || 1;
  return snapshot.history.map((h) => ({
    step: h.step,
    ari: h.ari,
    x: padding + ((h.step - minStep) / span) * (width - 2 * padding),
    // ARI axis fixed to [-1, 1]
    y: height - padding - ((h.ari + 1) / 2) * (height - 2 * padding),
    exactText: exactText(h.ari),
  }));
}

export function currentAriText(snapshot: StateSnapshot): string {
  if (!snapshot.history.length) return "-";
  return exactText(snapshot.history[snapshot.history.length - 1].ari);
}
