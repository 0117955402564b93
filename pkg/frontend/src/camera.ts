/** Camera state transitions: driving-style movement plus view presets.
 *
 * Yaw 0 looks along world +x; pitch is degrees below the horizon. All
 * updates are pure so interaction handling stays trivially testable.
 */

import type { ViewState } from "./types.js";

const DEG = Math.PI / 180;
export const PITCH_LIMIT = 89;

export function moveForward(s: ViewState, meters: number): ViewState {
  return {
    ...s,
    x: s.x + meters * Math.cos(s.yawDeg * DEG),
    y: s.y + meters * Math.sin(s.yawDeg * DEG),
  };
}

export function strafe(s: ViewState, meters: number): ViewState {
  // positive = to the driver's right
  return {
    ...s,
    x: s.x + meters * Math.sin(s.yawDeg * DEG),
    y: s.y - meters * Math.cos(s.yawDeg * DEG),
  };
}

export function elevate(s: ViewState, meters: number): ViewState {
  return { ...s, z: Math.max(0.2, s.z + meters) };
}

export function rotate(s: ViewState, dYawDeg: number, dPitchDeg: number): ViewState {
  const pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, s.pitchDeg + dPitchDeg));
  let yaw = (s.yawDeg + dYawDeg) % 360;
  if (yaw > 180) yaw -= 360;
  if (yaw < -180) yaw += 360;
  return { ...s, yawDeg: yaw, pitchDeg: pitch };
}

export function frontView(s: ViewState): ViewState {
  return { ...s, z: 1.6, pitchDeg: 12 };
}

export function topDownView(s: ViewState): ViewState {
  return { ...s, z: 40, pitchDeg: PITCH_LIMIT };
}

const KEY_STEP_M = 1.0;
const KEY_TURN_DEG = 5.0;

/** WASD drive, QE height, arrows look. Unknown keys return the state as is. */
export function applyKey(s: ViewState, key: string): ViewState {
  switch (key) {
    case "w": return moveForward(s, KEY_STEP_M);
    case "s": return moveForward(s, -KEY_STEP_M);
    case "a": return strafe(s, -KEY_STEP_M);
    case "d": return strafe(s, KEY_STEP_M);
    case "q": return elevate(s, 1.0);
    case "e": return elevate(s, -1.0);
    case "ArrowLeft": return rotate(s, KEY_TURN_DEG, 0);
    case "ArrowRight": return rotate(s, -KEY_TURN_DEG, 0);
    case "ArrowUp": return rotate(s, 0, -KEY_TURN_DEG);
    case "ArrowDown": return rotate(s, 0, KEY_TURN_DEG);
    default: return s;
  }
}

export function defaultState(appearanceKey: ViewState["appearanceKey"]): ViewState {
  return {
    x: -10, y: 0, z: 1.6, yawDeg: 0, pitchDeg: 12,
    markersOn: false, appearanceKey,
  };
}
