/** Shared wire and view-state types for the render service client. */

export type AppearanceKey = [string, string] | "average";

export interface ViewState {
  x: number;
  y: number;
  z: number;
  yawDeg: number;
  pitchDeg: number;
  markersOn: boolean;
  appearanceKey: AppearanceKey;
  trajectoryId?: string;
}

export interface RenderRequestBody {
  pose: { position: [number, number, number]; yaw: number; pitch: number; roll: number };
  width: number;
  height: number;
  appearance_key: AppearanceKey;
  markers_on: boolean;
  trajectory_id?: string;
  n_samples: number;
  seed: number;
}

export interface RenderResponse {
  bytes: Uint8Array;
  renderMs: number;
  blockId: string;
  seed: number;
}

export interface ServiceInfo {
  block_id: string;
  seed: number;
  sequences: [string, string][];
  cameras: string[];
  block_bounds: { x: [number, number]; y: [number, number]; z: [number, number] };
}

export interface TrajectoryListing {
  trajectories: { id: string; points: [number, number, number][] }[];
}
