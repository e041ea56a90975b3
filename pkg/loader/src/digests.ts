import { createHash } from 'node:crypto';
import { openDataset } from './dataset.js';

/**
 * Content-digest every sample reachable through the public API and print a
 * JSON summary. A writer-side process computing the same digests from its own
 * decoders proves byte-level agreement over the full dataset.
 */
export function datasetDigests(manifestPath: string): Record<string, unknown> {
  const ds = openDataset(manifestPath);
  const pointsHash = createHash('sha256');
  const pixelsHash = createHash('sha256');
  const labelsHash = createHash('sha256');
  let pointTotal = 0;
  for (const batch of ds.iterate(8)) {
    for (const sample of batch) {
      const f4 = Buffer.alloc(sample.points.length * 4);
      for (let i = 0; i < sample.points.length; i++) {
        f4.writeFloatLE(sample.points[i], i * 4);
      }
      pointsHash.update(f4);
      pixelsHash.update(sample.image.pixels);
      const lab = Buffer.alloc(8);
      lab.writeUInt32LE(sample.imageLabel >>> 0, 0);
      lab.writeUInt32LE(sample.cloudLabel >>> 0, 4);
      labelsHash.update(lab);
      pointTotal += sample.pointCount;
    }
  }
  return {
    records: ds.length,
    point_total: pointTotal,
    labels_digest_seed0: ds.labelDigest(0),
    points_sha256: pointsHash.digest('hex'),
    pixels_sha256: pixelsHash.digest('hex'),
    labels_sha256: labelsHash.digest('hex'),
  };
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('digests.js') || entry.endsWith('digests.ts')) {
  const manifestPath = process.argv[2];
  if (!manifestPath) {
    console.error('usage: node digests.js <manifest.json>');
    process.exit(2);
  }
  try {
    console.log(JSON.stringify(datasetDigests(manifestPath)));
  } catch (err) {
    console.error(JSON.stringify({ error: (err as Error).message }));
    process.exit(3);
  }
}
