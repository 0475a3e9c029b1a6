/**
 * Walk a class-labeled image directory and write one .glrf feature file.
 *
 * Layout expectation: one subdirectory per class under the input directory;
 * class indices follow the lexicographically sorted subdirectory names, and
 * images within a class are processed in sorted filename order, so the
 * output is a pure function of the directory contents.
 */

import * as fs from 'fs'
import * as path from 'path'
import { createEncoder, DEFAULT_ENCODER, Encoder } from './encoder'
import { IMAGE_EXTENSIONS, loadImage, resizeToSquare } from './images'
import { FeatureDataset, writeGlrf } from './glrf'

export interface ExportSpec {
  inputDir: string
  outputPath: string
  encoderName?: string
  imageSide?: number
  batchSize?: number
}

export interface ClassListing {
  name: string
  label: number
  images: string[]
}

export function listClasses(inputDir: string): ClassListing[] {
  const entries = fs
    .readdirSync(inputDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (entries.length === 0) {
    throw new Error(`no class subdirectories under ${inputDir}`)
  }
  return entries.map((name, label) => {
    const dir = path.join(inputDir, name)
    const images = fs
      .readdirSync(dir)
      .filter((f) => IMAGE_EXTENSIONS.has(path.extname(f).toLowerCase()))
      .sort()
      .map((f) => path.join(dir, f))
    if (images.length === 0) {
      throw new Error(`class directory ${dir} holds no images`)
    }
    return { name, label, images }
  })
}

export interface ExportResult {
  dataset: FeatureDataset
  encoder: Encoder
  classNames: string[]
}

export function exportDataset(spec: ExportSpec): ExportResult {
  const side = spec.imageSide ?? 256
  if (side < 8) throw new Error('image side must be >= 8')
  const encoder = createEncoder(spec.encoderName ?? DEFAULT_ENCODER)
  const classes = listClasses(spec.inputDir)
  const rows: Float32Array[] = []
  const labels: number[] = []
  for (const cls of classes) {
    for (const imagePath of cls.images) {
      const rgb = resizeToSquare(loadImage(imagePath), side)
      rows.push(encoder.encode(rgb, side))
      labels.push(cls.label)
    }
  }
  const n = rows.length
  const dim = encoder.featureDim
  const features = new Float32Array(n * dim)
  rows.forEach((row, i) => features.set(row, i * dim))
  const dataset: FeatureDataset = {
    n,
    dim,
    numClasses: classes.length,
    features,
    labels: Uint32Array.from(labels),
  }
  writeGlrf(spec.outputPath, dataset)
  return { dataset, encoder, classNames: classes.map((c) => c.name) }
}
