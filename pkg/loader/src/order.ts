import { createHash } from 'node:crypto';

const MASK64 = (1n << 64n) - 1n;

/** Advance a splitmix64 state; returns [nextState, output]. */
export function splitmix64(state: bigint): [bigint, bigint] {
  state = (state + 0x9e3779b97f4a7c15n) & MASK64;
  let z = state;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return [state, (z ^ (z >> 31n)) & MASK64];
}

/**
 * Deterministic permutation of [0, n) shared with the dataset writer.
 *
 * Fisher-Yates driven by splitmix64 with `j = next() % (i + 1)`, descending
 * i. Pure 64-bit integer math, so it reproduces the writer's order exactly.
 */
export function iterationOrder(n: number, shuffleSeed: number | bigint): number[] {
  if (!Number.isInteger(n) || n < 0) {
    throw new RangeError(`n must be a non-negative integer, got ${n}`);
  }
  const idx = Array.from({ length: n }, (_, i) => i);
  let state = BigInt(shuffleSeed) & MASK64;
  for (let i = n - 1; i > 0; i--) {
    let z: bigint;
    [state, z] = splitmix64(state);
    const j = Number(z % BigInt(i + 1));
    const tmp = idx[i];
    idx[i] = idx[j];
    idx[j] = tmp;
  }
  return idx;
}

/**
 * SHA-256 over uint32-LE labels visited in `iterationOrder`.
 *
 * The cross-language handshake: matching the writer's verify output proves
 * both the labels and the shuffle order were read back correctly.
 */
export function labelStreamDigest(labels: number[], shuffleSeed: number | bigint): string {
  const order = iterationOrder(labels.length, shuffleSeed);
  const buf = Buffer.alloc(labels.length * 4);
  for (let i = 0; i < order.length; i++) {
    buf.writeUInt32LE(labels[order[i]] >>> 0, i * 4);
  }
  return createHash('sha256').update(buf).digest('hex');
}
