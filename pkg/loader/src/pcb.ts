import { readFileSync } from 'node:fs';
import { FormatError } from './errors.js';

const PCB_MAGIC = 'VGPC';
const PCB_VERSION = 1;
const HEADER_BYTES = 12;

export interface PointCloud {
  count: number;
  /** Flat xyz triples, count * 3 entries, little-endian float32 as written. */
  points: Float32Array;
}

/** Parse point-cloud bytes: 4-byte magic, uint32 version, uint32 count, f32 triples. */
export function decodePcb(data: Uint8Array): PointCloud {
  if (data.length < HEADER_BYTES) {
    throw new FormatError(`point-cloud blob too short: ${data.length} bytes`);
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = String.fromCharCode(data[0], data[1], data[2], data[3]);
  if (magic !== PCB_MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(magic)}, expected ${JSON.stringify(PCB_MAGIC)}`);
  }
  const version = view.getUint32(4, true);
  if (version !== PCB_VERSION) {
    throw new FormatError(`unsupported point-cloud version ${version}`);
  }
  const count = view.getUint32(8, true);
  const expected = HEADER_BYTES + count * 12;
  if (data.length !== expected) {
    throw new FormatError(
      `size mismatch: ${data.length} bytes for ${count} points, expected ${expected}`,
    );
  }
  const points = new Float32Array(count * 3);
  for (let i = 0; i < points.length; i++) {
    points[i] = view.getFloat32(HEADER_BYTES + i * 4, true);
  }
  return { count, points };
}

export function readPcb(path: string): PointCloud {
  return decodePcb(readFileSync(path));
}
