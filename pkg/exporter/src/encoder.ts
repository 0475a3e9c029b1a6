/**
 * Frozen image encoders.
 *
 * The built-in encoder is a small convolutional stack with weights generated
 * once from a fixed seed: four 3x3 stride-2 ReLU stages, a final frozen
 * batch-normalization (constant per-channel statistics and affine), ReLU,
 * then global average pooling down to one vector per image.  It stands in
 * for a pretrained backbone in environments where model weights cannot be
 * downloaded; what matters to the engine is the tap point (post final
 * batch-norm, pooled) and the .glrf contract, not the backbone identity.
 * Heavier pretrained encoders can be registered under new names.
 *
 * The weights are deterministic (mulberry32 PRNG) and never updated; a
 * checksum exposes that invariant to tests.
 */

export interface Encoder {
  readonly name: string
  readonly featureDim: number
  /** rgb: side*side*3 floats in [0, 1], channels last. */
  encode(rgb: Float64Array, side: number): Float32Array
  /** FNV-1a over the weight bytes; constant for a frozen encoder. */
  weightsChecksum(): string
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function uniformArray(rand: () => number, count: number, bound: number): Float32Array {
  const out = new Float32Array(count)
  for (let i = 0; i < count; i++) out[i] = (2 * rand() - 1) * bound
  return out
}

function fnv1a(buffers: Float32Array[]): string {
  let hash = 0x811c9dc5
  for (const arr of buffers) {
    const bytes = new Uint8Array(arr.buffer, arr.byteOffset, arr.byteLength)
    for (const b of bytes) {
      hash ^= b
      hash = Math.imul(hash, 0x01000193) >>> 0
    }
  }
  return hash.toString(16).padStart(8, '0')
}

interface ConvStage {
  cin: number
  cout: number
  kernel: Float32Array // 3*3*cin*cout
  bias: Float32Array // cout
}

class FrozenCnnEncoder implements Encoder {
  readonly name: string
  readonly featureDim: number
  private stages: ConvStage[]
  private bnMean: Float32Array
  private bnInvStd: Float32Array
  private bnScale: Float32Array
  private bnShift: Float32Array

  constructor(name: string, channels: number[], seed: number) {
    this.name = name
    const rand = mulberry32(seed)
    this.stages = []
    let cin = 3
    for (const cout of channels) {
      const fanIn = 9 * cin
      this.stages.push({
        cin,
        cout,
        kernel: uniformArray(rand, 9 * cin * cout, Math.sqrt(6 / fanIn)),
        bias: uniformArray(rand, cout, 0.1),
      })
      cin = cout
    }
    const last = channels[channels.length - 1]
    this.featureDim = last
    // Frozen batch-norm statistics and affine parameters.
    this.bnMean = uniformArray(rand, last, 0.05)
    this.bnInvStd = new Float32Array(last)
    for (let i = 0; i < last; i++) this.bnInvStd[i] = 1 / Math.sqrt(0.5 + rand())
    this.bnScale = new Float32Array(last)
    for (let i = 0; i < last; i++) this.bnScale[i] = 0.5 + rand()
    this.bnShift = uniformArray(rand, last, 0.1)
  }

  weightsChecksum(): string {
    const parts: Float32Array[] = []
    for (const s of this.stages) parts.push(s.kernel, s.bias)
    parts.push(this.bnMean, this.bnInvStd, this.bnScale, this.bnShift)
    return fnv1a(parts)
  }

  encode(rgb: Float64Array, side: number): Float32Array {
    if (rgb.length !== side * side * 3) {
      throw new Error(`expected ${side * side * 3} values, got ${rgb.length}`)
    }
    let h = side
    let w = side
    let act: Float64Array = rgb
    let channels = 3
    for (const stage of this.stages) {
      const oh = Math.ceil(h / 2)
      const ow = Math.ceil(w / 2)
      const next = new Float64Array(oh * ow * stage.cout)
      conv3x3Stride2(act, h, w, channels, stage, next, oh, ow)
      act = next
      h = oh
      w = ow
      channels = stage.cout
    }
    // Final frozen batch-norm, ReLU, global average pool.
    const pooled = new Float32Array(channels)
    const pixels = h * w
    for (let c = 0; c < channels; c++) {
      let sum = 0
      for (let p = 0; p < pixels; p++) {
        const z =
          (act[p * channels + c] - this.bnMean[c]) * this.bnInvStd[c] *
            this.bnScale[c] +
          this.bnShift[c]
        sum += z > 0 ? z : 0
      }
      pooled[c] = sum / pixels
    }
    return pooled
  }
}

function conv3x3Stride2(
  input: Float64Array,
  h: number,
  w: number,
  cin: number,
  stage: ConvStage,
  out: Float64Array,
  oh: number,
  ow: number,
): void {
  const { kernel, bias, cout } = stage
  for (let oy = 0; oy < oh; oy++) {
    const cy = oy * 2
    for (let ox = 0; ox < ow; ox++) {
      const cx = ox * 2
      const base = (oy * ow + ox) * cout
      for (let co = 0; co < cout; co++) out[base + co] = bias[co]
      for (let ky = -1; ky <= 1; ky++) {
        const iy = cy + ky
        if (iy < 0 || iy >= h) continue
        for (let kx = -1; kx <= 1; kx++) {
          const ix = cx + kx
          if (ix < 0 || ix >= w) continue
          const inBase = (iy * w + ix) * cin
          const kBase = ((ky + 1) * 3 + (kx + 1)) * cin * cout
          for (let ci = 0; ci < cin; ci++) {
            const v = input[inBase + ci]
            if (v === 0) continue
            const kRow = kBase + ci * cout
            for (let co = 0; co < cout; co++) {
              out[base + co] += v * kernel[kRow + co]
            }
          }
        }
      }
      for (let co = 0; co < cout; co++) {
        if (out[base + co] < 0) out[base + co] = 0 // ReLU
      }
    }
  }
}

const REGISTRY: Record<string, () => Encoder> = {
  'frozen-cnn-64': () => new FrozenCnnEncoder('frozen-cnn-64', [8, 16, 32, 64], 0x5eed),
  'frozen-cnn-32': () => new FrozenCnnEncoder('frozen-cnn-32', [8, 16, 32], 0x5eed),
}

export const DEFAULT_ENCODER = 'frozen-cnn-64'

export function createEncoder(name: string): Encoder {
  const factory = REGISTRY[name]
  if (!factory) {
    throw new Error(
      `unknown encoder ${name}; available: ${Object.keys(REGISTRY).join(', ')}`,
    )
  }
  return factory()
}
