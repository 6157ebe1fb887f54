import { scaleLinear } from "d3-scale";
import { line } from "d3-shape";

export const WIDTH = 760;
export const HEIGHT = 480;
export const MARGIN = { top: 24, right: 200, bottom: 44, left: 72 };

export const PALETTE = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export interface Series {
  label: string;
  points: [number, number][]; // [x, y] pairs, already in data order
}

/**
 * Multi-series line chart.  Every data point is drawn exactly where the
 * input says (no resampling or smoothing) and each path carries its raw
 * values in data attributes so consumers can verify the render without
 * rasterizing it.
 */
export function lineChart(
  series: Series[],
  xLabel: string,
  yLabel: string,
): string {
  const xs = series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = series.flatMap((s) => s.points.map((p) => p[1]));
  const x = scaleLinear()
    .domain([Math.min(...xs), Math.max(...xs)])
    .range([MARGIN.left, WIDTH - MARGIN.right])
    .nice();
  const ySpan = [Math.min(...ys, 0), Math.max(...ys)];
  const y = scaleLinear()
    .domain(ySpan)
    .range([HEIGHT - MARGIN.bottom, MARGIN.top])
    .nice();

  const toPath = line<[number, number]>()
    .x((p) => x(p[0]))
    .y((p) => y(p[1]));

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
  );

  // axes
  const [x0, x1] = x.range();
  const [y0, y1] = y.range();
  parts.push(
    `<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`,
    `<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`,
  );
  for (const tick of x.ticks(8)) {
    const px = x(tick);
    parts.push(
      `<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="black"/>`,
      `<text x="${px}" y="${y0 + 18}" text-anchor="middle">${tick}</text>`,
    );
  }
  for (const tick of y.ticks(8)) {
    const py = y(tick);
    parts.push(
      `<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="black"/>`,
      `<text x="${x0 - 8}" y="${py + 4}" text-anchor="end">${tick}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 8}" text-anchor="middle">${escapeXml(xLabel)}</text>`,
    `<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" transform="rotate(-90 16 ${(y0 + y1) / 2})">${escapeXml(yLabel)}</text>`,
  );

  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    const data = s.points.map((p) => `${p[0]}:${p[1]}`).join(";");
    parts.push(
      `<path class="series" data-group="${escapeXml(s.label)}" data-points="${data}" d="${toPath(s.points) ?? ""}" fill="none" stroke="${color}" stroke-width="1.5"/>`,
    );
    for (const [px, py] of s.points) {
      parts.push(
        `<circle cx="${x(px)}" cy="${y(py)}" r="2" fill="${color}"/>`,
      );
    }
    const ly = MARGIN.top + 16 * i;
    parts.push(
      `<line x1="${WIDTH - MARGIN.right + 12}" y1="${ly - 4}" x2="${WIDTH - MARGIN.right + 32}" y2="${ly - 4}" stroke="${color}" stroke-width="2"/>`,
      `<text class="legend" x="${WIDTH - MARGIN.right + 38}" y="${ly}">${escapeXml(s.label)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

export interface Bar {
  label: string;
  segments: { name: string; value: number; color: string }[];
}

/** Stacked bar chart; bar heights are linear in the input values. */
export function stackedBars(bars: Bar[], yLabel: string): string {
  const totals = bars.map((b) =>
    b.segments.reduce((acc, s) => acc + s.value, 0),
  );
  const top = Math.max(...totals, 0);
  const y = scaleLinear()
    .domain([0, top > 0 ? top : 1])
    .range([HEIGHT - MARGIN.bottom, MARGIN.top])
    .nice();
  const y0 = HEIGHT - MARGIN.bottom;
  const plotWidth = WIDTH - MARGIN.left - MARGIN.right;
  const step = plotWidth / Math.max(bars.length, 1);
  const barWidth = step * 0.6;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
    `<line x1="${MARGIN.left}" y1="${y0}" x2="${WIDTH - MARGIN.right}" y2="${y0}" stroke="black"/>`,
    `<line x1="${MARGIN.left}" y1="${y0}" x2="${MARGIN.left}" y2="${MARGIN.top}" stroke="black"/>`,
  );
  for (const tick of y.ticks(8)) {
    const py = y(tick);
    parts.push(
      `<line x1="${MARGIN.left - 5}" y1="${py}" x2="${MARGIN.left}" y2="${py}" stroke="black"/>`,
      `<text x="${MARGIN.left - 8}" y="${py + 4}" text-anchor="end">${tick}</text>`,
    );
  }
  parts.push(
    `<text x="16" y="${(y0 + MARGIN.top) / 2}" text-anchor="middle" transform="rotate(-90 16 ${(y0 + MARGIN.top) / 2})">${escapeXml(yLabel)}</text>`,
  );

  bars.forEach((bar, i) => {
    const cx = MARGIN.left + step * (i + 0.5);
    let cumulative = 0;
    const total = bar.segments.reduce((acc, s) => acc + s.value, 0);
    const segs = bar.segments
      .map((s) => `${s.name}=${s.value}`)
      .join(";");
    parts.push(
      `<g class="bar" data-host="${escapeXml(bar.label)}" data-total="${total}" data-segments="${escapeXml(segs)}">`,
    );
    for (const segment of bar.segments) {
      const base = y(cumulative);
      const topY = y(cumulative + segment.value);
      parts.push(
        `<rect x="${cx - barWidth / 2}" y="${topY}" width="${barWidth}" height="${base - topY}" fill="${segment.color}"/>`,
      );
      cumulative += segment.value;
    }
    parts.push(
      `</g>`,
      `<text x="${cx}" y="${y0 + 16}" text-anchor="middle">${escapeXml(bar.label)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}
