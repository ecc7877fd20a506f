/** SVG sparkline for synthetic image feature vectors. */

export function sparklinePoints(
  values: number[],
  width = 120,
  height = 28,
): string {
  if (values.length === 0) return "";
  if (values.length === 1) return `0,${height / 2} ${width},${height / 2}`;
  const min = Math.min(...values);
  const max = Math.max(...values);
  const span = max - min || 1;
  return values
    .map((v, i) => {
      const x = (i / (values.length - 1)) * width;
      const y = height - ((v - min) / span) * height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export function sparklineSvg(values: number[], width = 120, height = 28): string {
  return (
    `<svg class="sparkline" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="1.5" ` +
    `points="${sparklinePoints(values, width, height)}"/></svg>`
  );
}
