/**
 * The .glrf feature-file contract shared with the engine.
 *
 * Little-endian layout:
 *   magic "GLRF" | version u32 = 1 | n u32 | d u32 | num_classes u32
 *   | features n*d float32 row-major | labels n*u32
 */

import * as fs from 'fs'
import * as path from 'path'

export const FEATURE_MAGIC = 'GLRF'
export const FEATURE_VERSION = 1
const HEADER_BYTES = 4 + 4 * 4

export interface FeatureDataset {
  n: number
  dim: number
  numClasses: number
  features: Float32Array // n * dim, row-major
  labels: Uint32Array // n
}

export function encodeGlrf(dataset: FeatureDataset): Buffer {
  const { n, dim, numClasses, features, labels } = dataset
  if (n < 1) throw new Error('refusing to write an empty feature file')
  if (features.length !== n * dim) {
    throw new Error(`features length ${features.length} != n*d = ${n * dim}`)
  }
  if (labels.length !== n) throw new Error(`labels length ${labels.length} != n`)
  for (const label of labels) {
    if (label >= numClasses) {
      throw new Error(`label ${label} outside declared class count ${numClasses}`)
    }
  }
  const buf = Buffer.alloc(HEADER_BYTES + n * dim * 4 + n * 4)
  buf.write(FEATURE_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(FEATURE_VERSION, 4)
  buf.writeUInt32LE(n, 8)
  buf.writeUInt32LE(dim, 12)
  buf.writeUInt32LE(numClasses, 16)
  let pos = HEADER_BYTES
  for (let i = 0; i < features.length; i++, pos += 4) {
    buf.writeFloatLE(features[i], pos)
  }
  for (let i = 0; i < n; i++, pos += 4) {
    buf.writeUInt32LE(labels[i], pos)
  }
  return buf
}

export function decodeGlrf(buf: Buffer): FeatureDataset {
  if (buf.length < HEADER_BYTES) throw new Error('truncated header')
  if (buf.toString('ascii', 0, 4) !== FEATURE_MAGIC) {
    throw new Error(`bad magic ${buf.toString('ascii', 0, 4)}`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== FEATURE_VERSION) throw new Error(`unsupported version ${version}`)
  const n = buf.readUInt32LE(8)
  const dim = buf.readUInt32LE(12)
  const numClasses = buf.readUInt32LE(16)
  const expected = HEADER_BYTES + n * dim * 4 + n * 4
  if (buf.length !== expected) {
    throw new Error(`expected ${expected} bytes for n=${n} d=${dim}, got ${buf.length}`)
  }
  const features = new Float32Array(n * dim)
  let pos = HEADER_BYTES
  for (let i = 0; i < features.length; i++, pos += 4) {
    features[i] = buf.readFloatLE(pos)
  }
  const labels = new Uint32Array(n)
  for (let i = 0; i < n; i++, pos += 4) {
    labels[i] = buf.readUInt32LE(pos)
    if (labels[i] >= numClasses) {
      throw new Error(`label ${labels[i]} outside declared class count ${numClasses}`)
    }
  }
  return { n, dim, numClasses, features, labels }
}

/** Write atomically: temp file in the target directory, then rename. */
export function writeGlrf(filePath: string, dataset: FeatureDataset): void {
  const blob = encodeGlrf(dataset)
  const tmp = path.join(
    path.dirname(filePath),
    `.${path.basename(filePath)}.tmp`,
  )
  fs.writeFileSync(tmp, blob)
  fs.renameSync(tmp, filePath)
}

export function readGlrf(filePath: string): FeatureDataset {
  return decodeGlrf(fs.readFileSync(filePath))
}
