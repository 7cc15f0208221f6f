/**
 * Bar-chart rendering of raw feature vectors, the universal fallback for
 * objects without image assets. Pure string builders so they are testable
 * without a DOM.
 */

export interface BarScale {
  min: number;
  max: number;
}

/** Common value range across panels so bars are visually comparable. */
export function sharedScale(vectors: number[][]): BarScale {
  let min = 0;
  let max = 0;
  for (const vector of vectors) {
    for (const v of vector) {
      if (v < min) min = v;
      if (v > max) max = v;
    }
  }
  if (min === max) max = min + 1;
  return { min, max };
}

const WIDTH = 180;
const HEIGHT = 120;
const PAD = 4;

export function featureBarChart(values: number[], scale: BarScale): string {
  const inner = HEIGHT - 2 * PAD;
  const span = scale.max - scale.min;
  const zeroY = PAD + (scale.max / span) * inner;
  const slot = (WIDTH - 2 * PAD) / Math.max(values.length, 1);
  const barWidth = Math.max(slot * 0.7, 1);
  const bars = values
    .map((value, i) => {
      const x = PAD + i * slot + (slot - barWidth) / 2;
      const scaled = (Math.abs(value) / span) * inner;
      const y = value >= 0 ? zeroY - scaled : zeroY;
      const cls = value >= 0 ? "bar pos" : "bar neg";
      return `<rect class="${cls}" x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${barWidth.toFixed(2)}" height="${scaled.toFixed(2)}"><title>f${i} = ${value}</title></rect>`;
    })
    .join("");
  const axis = `<line class="axis" x1="${PAD}" y1="${zeroY.toFixed(2)}" x2="${WIDTH - PAD}" y2="${zeroY.toFixed(2)}"/>`;
  return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" xmlns="http://www.w3.org/2000/svg" role="img">${axis}${bars}</svg>`;
}

/** Panel body: the asset image when one exists, bars otherwise. */
export function objectPanel(
  label: string,
  features: number[],
  asset: string | null,
  scale: BarScale,
): string {
  const body = asset
    ? `<img src="${asset}" alt="${label}"/>`
    : featureBarChart(features, scale);
  return `<figure class="object-panel">${body}<figcaption>${label}</figcaption></figure>`;
}
