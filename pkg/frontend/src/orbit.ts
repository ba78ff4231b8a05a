/** Orbit-camera state and its world-from-camera pose.
 *
 * Conventions match the render service: right-handed, y-up, camera looks
 * along its local -z axis; poses are row-major 4x4 world-from-camera.
 */

export interface Orbit {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  fovDeg: number;
}

export const DEFAULT_ORBIT: Orbit = {
  azimuthDeg: 30,
  elevationDeg: 10,
  distance: 2.3,
  fovDeg: 36,
};

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function lookAtPose(
  eye: Vec3,
  target: Vec3 = [0, 0, 0],
  up: Vec3 = [0, 1, 0],
): number[] {
  let z = sub(eye, target);
  z = scale(z, 1 / norm(z));
  let x = cross(up, z);
  let nx = norm(x);
  if (nx < 1e-9) {
    x = cross([0, 0, 1], z);
    nx = norm(x);
  }
  x = scale(x, 1 / nx);
  const y = cross(z, x);
  // row-major 4x4 with basis vectors as columns
  return [
    x[0], y[0], z[0], eye[0],
    x[1], y[1], z[1], eye[1],
    x[2], y[2], z[2], eye[2],
    0, 0, 0, 1,
  ];
}

export function orbitPose(o: Orbit, target: Vec3 = [0, 0, 0]): number[] {
  const az = (o.azimuthDeg * Math.PI) / 180;
  const el = (o.elevationDeg * Math.PI) / 180;
  const eye: Vec3 = [
    target[0] + o.distance * Math.cos(el) * Math.sin(az),
    target[1] + o.distance * Math.sin(el),
    target[2] + o.distance * Math.cos(el) * Math.cos(az),
  ];
  return lookAtPose(eye, target);
}

export function clampOrbit(o: Orbit): Orbit {
  return {
    azimuthDeg: ((o.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-89, Math.min(89, o.elevationDeg)),
    distance: Math.max(0.05, o.distance),
    fovDeg: Math.max(5, Math.min(120, o.fovDeg)),
  };
}
