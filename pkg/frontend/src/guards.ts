/** Client-side mirrors of the server's command guards. */

import type { VehicleMode } from "./types.js";

export function canJoin(mode: VehicleMode): boolean {
  return mode === "FREE";
}

export function canLeave(mode: VehicleMode): boolean {
  return mode === "FOLLOW";
}
