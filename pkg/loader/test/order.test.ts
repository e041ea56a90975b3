import { describe, expect, it } from 'vitest';
import { iterationOrder, labelStreamDigest, splitmix64 } from '../src/order.js';

describe('splitmix64', () => {
  it('matches the reference output stream from state 0', () => {
    // Known-answer vector for the standard splitmix64 constants.
    let state = 0n;
    const outs: bigint[] = [];
    for (let i = 0; i < 3; i++) {
      let z: bigint;
      [state, z] = splitmix64(state);
      outs.push(z);
    }
    expect(outs).toEqual([0xe220a8397b1dcdafn, 0x6e789e6aa1b965f4n, 0x06c45d188009454fn]);
  });

  it('wraps the state at 64 bits', () => {
    const [state] = splitmix64((1n << 64n) - 1n);
    expect(state).toBe(0x9e3779b97f4a7c15n - 1n);
  });
});

describe('iterationOrder', () => {
  it('reproduces the writer-side permutation for n=8, seed=2024', () => {
    expect(iterationOrder(8, 2024)).toEqual([4, 7, 1, 2, 6, 3, 0, 5]);
  });

  it('is a permutation of [0, n)', () => {
    for (const seed of [0, 1, 999]) {
      const order = iterationOrder(50, seed);
      expect([...order].sort((a, b) => a - b)).toEqual(Array.from({ length: 50 }, (_, i) => i));
    }
  });

  it('matches a hand-run Fisher-Yates for n=4, seed=0', () => {
    const idx = [0, 1, 2, 3];
    let state = 0n;
    for (let i = 3; i > 0; i--) {
      let z: bigint;
      [state, z] = splitmix64(state);
      const j = Number(z % BigInt(i + 1));
      [idx[i], idx[j]] = [idx[j], idx[i]];
    }
    expect(iterationOrder(4, 0)).toEqual(idx);
  });

  it('handles the degenerate sizes', () => {
    expect(iterationOrder(0, 5)).toEqual([]);
    expect(iterationOrder(1, 5)).toEqual([0]);
    expect(() => iterationOrder(-1, 0)).toThrow(RangeError);
  });
});

describe('labelStreamDigest', () => {
  it('matches digests frozen from the writer implementation', () => {
    expect(labelStreamDigest([3, 1, 4, 1, 5, 9, 2, 6], 0)).toBe(
      'e3e9e3f59b42ce22e3895c6f67e374fe19c1e7b4d1f9e9fea930d148266013d3',
    );
    expect(labelStreamDigest([0, 1, 2, 3], 7)).toBe(
      '69e7343ddb776d559d84b85e1d012bbb2d8da8f9396ca86e94eb0e98eeeb5e83',
    );
  });

  it('depends on the seed through the visit order', () => {
    const labels = [0, 1, 2, 3, 4, 5];
    expect(labelStreamDigest(labels, 0)).not.toBe(labelStreamDigest(labels, 1));
  });
});
