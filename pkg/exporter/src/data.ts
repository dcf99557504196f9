/**
 * Seeded synthetic two-class image set: a bright blob sits in the top-left
 * quadrant for class 0 and in the bottom-right for class 1, over Gaussian
 * pixel noise. Easy enough for a tiny CNN to clear 95% in a few epochs.
 */

export const IMAGE_SIZE = 8;

export class Rng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** mulberry32 */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  normal(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    v = this.next();
    const r = Math.sqrt(-2.0 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  }

  int(bound: number): number {
    return Math.floor(this.next() * bound);
  }
}

export interface ToyDataset {
  /** [count][h][w][1] row-major. */
  samples: Float32Array;
  labels: Uint32Array;
  sampleShape: number[];
}

export function makeToyDataset(count: number, seed: number): ToyDataset {
  const rng = new Rng(seed);
  const px = IMAGE_SIZE * IMAGE_SIZE;
  const samples = new Float32Array(count * px);
  const labels = new Uint32Array(count);
  for (let n = 0; n < count; n++) {
    const label = rng.int(2);
    labels[n] = label;
    const base = n * px;
    for (let p = 0; p < px; p++) {
      samples[base + p] = 0.3 * rng.normal();
    }
    const ci = (label === 0 ? 1 : 5) + rng.int(2);
    const cj = (label === 0 ? 1 : 5) + rng.int(2);
    for (let di = 0; di < 2; di++) {
      for (let dj = 0; dj < 2; dj++) {
        samples[base + (ci + di) * IMAGE_SIZE + (cj + dj)] += 2.0;
      }
    }
  }
  return { samples, labels, sampleShape: [IMAGE_SIZE, IMAGE_SIZE, 1] };
}
