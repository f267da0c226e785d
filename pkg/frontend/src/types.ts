/** Shapes of the control-server JSON this console consumes. */

export type LaneName = "RIGHT" | "LEFT";
export type VehicleMode = "LEAD" | "FREE" | "FORM" | "FOLLOW";

export interface VehicleView {
  id: number;
  x: number;
  lane: LaneName;
  v: number;
  mode: VehicleMode;
}

export interface SnapshotView {
  t_ms: number;
  vehicles: VehicleView[];
  train: number[];
  mode: "rba" | "mpr";
  /** [node, relay] pairs; empty outside mpr mode. */
  mpr_links: [number, number][];
}

export interface ServerReply {
  ok?: boolean;
  snapshot?: unknown;
  error?: string;
  reason?: string;
  [key: string]: unknown;
}

const LANES: readonly string[] = ["RIGHT", "LEFT"];
const MODES: readonly string[] = ["LEAD", "FREE", "FORM", "FOLLOW"];

function isVehicle(raw: unknown): raw is VehicleView {
  if (typeof raw !== "object" || raw === null) return false;
  const v = raw as Record<string, unknown>;
  return (
    typeof v.id === "number" &&
    typeof v.x === "number" &&
    typeof v.v === "number" &&
    typeof v.lane === "string" &&
    LANES.includes(v.lane) &&
    typeof v.mode === "string" &&
    MODES.includes(v.mode)
  );
}

function isIdPair(raw: unknown): raw is [number, number] {
  return (
    Array.isArray(raw) &&
    raw.length === 2 &&
    typeof raw[0] === "number" &&
    typeof raw[1] === "number"
  );
}

/**
 * Validate one snapshot payload; anything that does not match the known
 * schema is rejected (returns null) rather than guessed at.
 */
export function parseSnapshot(raw: unknown): SnapshotView | null {
  if (typeof raw !== "object" || raw === null) return null;
  const s = raw as Record<string, unknown>;
  if (typeof s.t_ms !== "number") return null;
  if (s.mode !== "rba" && s.mode !== "mpr") return null;
  if (!Array.isArray(s.vehicles) || !s.vehicles.every(isVehicle)) return null;
  if (!Array.isArray(s.train) || !s.train.every((n) => typeof n === "number")) return null;
  const links = s.mpr_links ?? [];
  if (!Array.isArray(links) || !links.every(isIdPair)) return null;
  return {
    t_ms: s.t_ms,
    vehicles: s.vehicles as VehicleView[],
    train: s.train as number[],
    mode: s.mode,
    mpr_links: links as [number, number][],
  };
}
