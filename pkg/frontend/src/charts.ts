/** Canvas line charts: temperature + target, fan state, heater duty with a
 * dashed running-mean overlay. No chart library; the series are small. */

import type { Series } from './viewModel.js';

interface Line {
  values: number[];
  color: string;
  dashed?: boolean;
  step?: boolean;
}

const MARGIN = { left: 44, right: 10, top: 8, bottom: 18 };

function drawPanel(
  canvas: HTMLCanvasElement,
  t: number[],
  lines: Line[],
  yLabel: string,
  yRange?: [number, number],
): void {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = '11px system-ui, sans-serif';
  ctx.fillStyle = '#9aa5b1';
  ctx.fillText(yLabel, 4, 12);
  if (t.length === 0) return;

  const values = lines.flatMap((l) => l.values);
  let lo = yRange ? yRange[0] : Math.min(...values);
  let hi = yRange ? yRange[1] : Math.max(...values);
  if (hi - lo < 1e-9) {
    hi += 0.5;
    lo -= 0.5;
  }
  const pad = yRange ? 0 : (hi - lo) * 0.08;
  lo -= pad;
  hi += pad;

  const tMin = t[0]!;
  const tMax = t[t.length - 1]! || 1;
  const x = (ti: number) =>
    MARGIN.left + ((ti - tMin) / Math.max(tMax - tMin, 1)) * (width - MARGIN.left - MARGIN.right);
  const y = (v: number) =>
    height - MARGIN.bottom - ((v - lo) / (hi - lo)) * (height - MARGIN.top - MARGIN.bottom);

  // axis ticks
  ctx.strokeStyle = '#2c3440';
  ctx.fillStyle = '#9aa5b1';
  for (const frac of [0, 0.5, 1]) {
    const v = lo + frac * (hi - lo);
    const py = y(v);
    ctx.beginPath();
    ctx.moveTo(MARGIN.left, py);
    ctx.lineTo(width - MARGIN.right, py);
    ctx.stroke();
    ctx.fillText(v.toFixed(1), 4, py + 4);
  }

  for (const line of lines) {
    ctx.strokeStyle = line.color;
    ctx.lineWidth = 1.5;
    ctx.setLineDash(line.dashed ? [5, 4] : []);
    ctx.beginPath();
    line.values.forEach((v, i) => {
      const px = x(t[i]!);
      const py = y(v);
      if (i === 0) {
        ctx.moveTo(px, py);
      } else if (line.step) {
        ctx.lineTo(px, y(line.values[i - 1]!));
        ctx.lineTo(px, py);
      } else {
        ctx.lineTo(px, py);
      }
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function drawCharts(
  temperature: HTMLCanvasElement,
  fan: HTMLCanvasElement,
  heater: HTMLCanvasElement,
  series: Series,
): void {
  drawPanel(temperature, series.t, [
    { values: series.target, color: '#e0b341', step: true },
    { values: series.temperature, color: '#5bc8af' },
  ], 'Temperature (degC)');
  drawPanel(fan, series.t, [
    { values: series.fanOn, color: '#7aa2f7', step: true },
  ], 'Fan', [0, 1]);
  drawPanel(heater, series.t, [
    { values: series.heaterDuty, color: '#f7768e', step: true },
    { values: series.heaterMean, color: '#f7768e', dashed: true },
  ], 'Heater duty (mean dashed)', [0, 1]);
}
