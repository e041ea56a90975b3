export { FormatError } from './errors.js';
export { splitmix64, iterationOrder, labelStreamDigest } from './order.js';
export { decodePcb, readPcb, PointCloud } from './pcb.js';
export { decodePng, readPng, DecodedImage } from './png.js';
export { openDataset, Dataset, DatasetRecord, LoadedSample, Manifest } from './dataset.js';
