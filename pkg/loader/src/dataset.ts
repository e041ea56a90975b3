import { readFileSync } from 'node:fs';
import * as path from 'node:path';
import { FormatError } from './errors.js';
import { iterationOrder, labelStreamDigest } from './order.js';
import { readPcb } from './pcb.js';
import { DecodedImage, readPng } from './png.js';

const SUPPORTED_FORMAT_VERSION = 1;

export interface DatasetRecord {
  category_id: number;
  instance_id: number;
  point_cloud: string;
  image: string;
  image_label: number;
  cloud_label: number;
  [key: string]: unknown;
}

export interface Manifest {
  format_version: number;
  generator: string;
  params: Record<string, unknown>;
  records: DatasetRecord[];
  shuffle: { mode: string; seed: number } | null;
  digest: string;
  [key: string]: unknown;
}

export interface LoadedSample {
  image: DecodedImage;
  /** Flat xyz triples straight off disk, pointCount * 3 entries. */
  points: Float32Array;
  pointCount: number;
  /** The consistency label both files share before any shuffle ablation. */
  label: number;
  imageLabel: number;
  cloudLabel: number;
  meta: DatasetRecord;
}

export class Dataset {
  readonly root: string;
  readonly manifest: Manifest;

  constructor(root: string, manifest: Manifest) {
    this.root = root;
    this.manifest = manifest;
  }

  get length(): number {
    return this.manifest.records.length;
  }

  /** Resolve a manifest-relative path, rejecting anything outside the root. */
  private resolveInside(rel: string): string {
    const abs = path.resolve(this.root, rel);
    const offset = path.relative(this.root, abs);
    if (offset.startsWith('..') || path.isAbsolute(offset)) {
      throw new FormatError(`record path escapes the dataset root: ${rel}`);
    }
    return abs;
  }

  get(index: number): LoadedSample {
    if (!Number.isInteger(index) || index < 0 || index >= this.length) {
      throw new RangeError(`index ${index} out of range for ${this.length} records`);
    }
    const rec = this.manifest.records[index];
    const cloud = readPcb(this.resolveInside(rec.point_cloud));
    const image = readPng(this.resolveInside(rec.image));
    return {
      image,
      points: cloud.points,
      pointCount: cloud.count,
      label: rec.category_id,
      imageLabel: rec.image_label,
      cloudLabel: rec.cloud_label,
      meta: rec,
    };
  }

  cloudLabels(): number[] {
    return this.manifest.records.map((r) => r.cloud_label);
  }

  /** The handshake digest the writer's verify command reports for this seed. */
  labelDigest(shuffleSeed: number | bigint): string {
    return labelStreamDigest(this.cloudLabels(), shuffleSeed);
  }

  /**
   * Yield batches of samples. With a seed, visit records in the shared
   * deterministic shuffle order; without one, in manifest order.
   */
  *iterate(batchSize: number, shuffleSeed?: number | bigint): Generator<LoadedSample[]> {
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      throw new RangeError(`batchSize must be a positive integer, got ${batchSize}`);
    }
    const order =
      shuffleSeed === undefined
        ? Array.from({ length: this.length }, (_, i) => i)
        : iterationOrder(this.length, shuffleSeed);
    for (let s = 0; s < order.length; s += batchSize) {
      yield order.slice(s, s + batchSize).map((i) => this.get(i));
    }
  }
}

export function openDataset(manifestPath: string): Dataset {
  let manifest: Manifest;
  try {
    manifest = JSON.parse(readFileSync(manifestPath, 'utf-8'));
  } catch (err) {
    throw new FormatError(`unreadable manifest ${manifestPath}: ${(err as Error).message}`);
  }
  if (manifest.format_version !== SUPPORTED_FORMAT_VERSION) {
    throw new FormatError(
      `unsupported manifest format_version ${JSON.stringify(manifest.format_version)}`,
    );
  }
  if (!Array.isArray(manifest.records)) {
    throw new FormatError('manifest has no records array');
  }
  return new Dataset(path.dirname(path.resolve(manifestPath)), manifest);
}
