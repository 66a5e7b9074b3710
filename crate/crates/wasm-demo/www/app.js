import init, {
  series_with_pivots,
  match_window_against_templates,
  train_and_forecast,
} from "./pkg/driftcast_wasm.js";

const css = (name) =>
  getComputedStyle(document.documentElement).getPropertyValue(name).trim();

function clearCanvas(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function extent(arrays) {
  let lo = Infinity;
  let hi = -Infinity;
  for (const a of arrays) {
    for (const v of a) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return [lo, hi];
}

function drawGrid(ctx, w, h) {
  ctx.strokeStyle = css("--grid");
  ctx.lineWidth = 1;
  for (let i = 1; i < 5; i++) {
    const y = (h * i) / 5;
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(w, y);
    ctx.stroke();
  }
}

function drawSeries(ctx, values, color, xOf, yOf, width = 1.5) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = xOf(i);
    const y = yOf(v);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

// ---------------------------------------------------------------- pivots

const pivotInputs = {
  threshold: document.getElementById("pivot-threshold"),
  seed: document.getElementById("pivot-seed"),
  walk: document.getElementById("pivot-walk"),
};

function renderPivots() {
  const threshold = Number(pivotInputs.threshold.value);
  const walk = Number(pivotInputs.walk.value);
  document.getElementById("pivot-threshold-out").value = threshold.toFixed(4);
  document.getElementById("pivot-walk-out").value = walk.toFixed(2);

  const response = JSON.parse(
    series_with_pivots(
      JSON.stringify({
        seed: Number(pivotInputs.seed.value),
        len: 672,
        threshold,
        walk_sigma: walk,
      })
    )
  );
  const canvas = document.getElementById("pivot-canvas");
  const ctx = clearCanvas(canvas);
  const { width: w, height: h } = canvas;
  drawGrid(ctx, w, h);
  const [lo, hi] = extent([response.closes]);
  const xOf = (i) => (i / (response.closes.length - 1)) * (w - 16) + 8;
  const yOf = (v) => h - 12 - ((v - lo) / (hi - lo)) * (h - 24);

  // Connect pivots to show the zigzag legs under the price line.
  if (response.pivots.length > 1) {
    ctx.strokeStyle = css("--muted");
    ctx.lineWidth = 1;
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    response.pivots.forEach((p, k) => {
      const x = xOf(p.index);
      const y = yOf(p.value);
      if (k === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }

  drawSeries(ctx, response.closes, css("--accent"), xOf, yOf, 1.2);
  let peaks = 0;
  for (const p of response.pivots) {
    const isPeak = p.kind === "peak";
    if (isPeak) peaks += 1;
    ctx.fillStyle = isPeak ? css("--peak") : css("--valley");
    ctx.beginPath();
    ctx.arc(xOf(p.index), yOf(p.value), 4, 0, Math.PI * 2);
    ctx.fill();
  }
  document.getElementById("pivot-count").textContent =
    `${response.pivots.length} pivots (${peaks} peaks, ${response.pivots.length - peaks} valleys)`;
}

// ---------------------------------------------------------------- matching

const matchInputs = {
  offset: document.getElementById("match-offset"),
  size: document.getElementById("match-size"),
  seed: document.getElementById("match-seed"),
};

function renderMatch() {
  const size = Number(matchInputs.size.value);
  matchInputs.offset.max = String(672 - size);
  const offset = Math.min(Number(matchInputs.offset.value), 672 - size);
  document.getElementById("match-offset-out").value = String(offset);

  const response = JSON.parse(
    match_window_against_templates(
      JSON.stringify({
        seed: Number(matchInputs.seed.value),
        len: 672,
        offset,
        size,
      })
    )
  );

  // Left: normalized window vs the winning template shape.
  const canvas = document.getElementById("match-window-canvas");
  const ctx = clearCanvas(canvas);
  const { width: w, height: h } = canvas;
  drawGrid(ctx, w, h);
  const xOf = (i) => (i / (response.normalized.length - 1)) * (w - 16) + 8;
  const yOf = (v) => h - 12 - v * (h - 24);
  drawSeries(ctx, response.best_shape, css("--peak"), xOf, yOf, 1.5);
  drawSeries(ctx, response.normalized, css("--accent"), xOf, yOf, 1.5);
  document.getElementById("match-best").textContent =
    `best match: ${response.best_name} (id ${response.best_id})`;

  // Right: distance bars.
  const bars = document.getElementById("match-bars-canvas");
  const bctx = clearCanvas(bars);
  const bw = bars.width;
  const bh = bars.height;
  const max = Math.max(...response.scores.map((s) => s.distance), 1e-9);
  const slot = bw / response.scores.length;
  bctx.font = "10px ui-monospace, monospace";
  response.scores.forEach((s, i) => {
    const height = (s.distance / max) * (bh - 40);
    const x = i * slot + 6;
    bctx.fillStyle = s.id === response.best_id ? css("--peak") : css("--grid");
    bctx.fillRect(x, bh - 22 - height, slot - 12, height);
    bctx.fillStyle = css("--muted");
    bctx.save();
    bctx.translate(x + (slot - 12) / 2 + 3, bh - 8);
    bctx.fillText(String(s.id), -4, 0);
    bctx.restore();
  });
}

// ---------------------------------------------------------------- forecast

const fcInputs = {
  cell: document.getElementById("fc-cell"),
  attention: document.getElementById("fc-attention"),
  epochs: document.getElementById("fc-epochs"),
  hidden: document.getElementById("fc-hidden"),
  seed: document.getElementById("fc-seed"),
  button: document.getElementById("fc-train"),
  status: document.getElementById("fc-status"),
};

function renderForecast(response) {
  const canvas = document.getElementById("fc-canvas");
  const ctx = clearCanvas(canvas);
  const { width: w, height: h } = canvas;
  drawGrid(ctx, w, h);

  const tail = response.history.slice(-32);
  const horizon = response.target.length;
  const total = tail.length + horizon;
  const [lo, hi] = extent([tail, response.target, response.forecast, response.persistence]);
  const xOf = (i) => (i / (total - 1)) * (w - 16) + 8;
  const yOf = (v) => h - 12 - ((v - lo) / (hi - lo)) * (h - 24);

  drawSeries(ctx, tail, css("--muted"), xOf, yOf, 1.2);
  const shift = (values) => values.map((v, i) => ({ i: i + tail.length, v }));
  const drawShifted = (values, color, dash) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.8;
    if (dash) ctx.setLineDash(dash);
    ctx.beginPath();
    // Connect the forecast to the last history point.
    ctx.moveTo(xOf(tail.length - 1), yOf(tail[tail.length - 1]));
    for (const { i, v } of shift(values)) ctx.lineTo(xOf(i), yOf(v));
    ctx.stroke();
    ctx.setLineDash([]);
  };
  drawShifted(response.persistence, css("--peak"), [5, 4]);
  drawShifted(response.target, css("--valley"));
  drawShifted(response.forecast, css("--accent"));

  const curve = document.getElementById("fc-curve-canvas");
  const cctx = clearCanvas(curve);
  drawGrid(cctx, curve.width, curve.height);
  const losses = response.curve.map((p) => p.train_loss);
  const pv = response.curve.map((p) => p.val_pvrmse);
  if (losses.length > 1) {
    const [llo, lhi] = extent([losses]);
    const [plo, phi] = extent([pv]);
    const cx = (i) => (i / (losses.length - 1)) * (curve.width - 16) + 8;
    drawSeries(cctx, losses, css("--accent"), cx, (v) =>
      curve.height - 12 - ((v - llo) / (lhi - llo)) * (curve.height - 24));
    drawSeries(cctx, pv, css("--valley"), cx, (v) =>
      curve.height - 12 - ((v - plo) / (phi - plo)) * (curve.height - 24));
  }

  const m = response.model_metrics;
  const p = response.persistence_metrics;
  const gain = (1 - m.rmse / p.rmse) * 100;
  document.getElementById("fc-metrics").textContent =
    `             rmse        pvrmse      smape\n` +
    `model        ${m.rmse.toFixed(5)}    ${m.pvrmse.toFixed(5)}    ${m.smape.toFixed(2)}\n` +
    `persistence  ${p.rmse.toFixed(5)}    ${p.pvrmse.toFixed(5)}    ${p.smape.toFixed(2)}\n` +
    `model vs persistence rmse: ${gain >= 0 ? "-" : "+"}${Math.abs(gain).toFixed(1)}%`;
}

function trainForecast() {
  fcInputs.button.disabled = true;
  fcInputs.status.textContent = "training…";
  // Let the UI paint before the synchronous wasm call.
  setTimeout(() => {
    try {
      const response = JSON.parse(
        train_and_forecast(
          JSON.stringify({
            seed: Number(fcInputs.seed.value),
            epochs: Number(fcInputs.epochs.value),
            cell: fcInputs.cell.value,
            attention: fcInputs.attention.checked,
            hidden: Number(fcInputs.hidden.value),
          })
        )
      );
      renderForecast(response);
      fcInputs.status.textContent = "";
    } catch (error) {
      fcInputs.status.textContent = String(error);
    } finally {
      fcInputs.button.disabled = false;
    }
  }, 30);
}

// ---------------------------------------------------------------- wiring

await init();

for (const input of [pivotInputs.threshold, pivotInputs.walk]) {
  input.addEventListener("input", renderPivots);
}
document.getElementById("pivot-regen").addEventListener("click", renderPivots);
pivotInputs.seed.addEventListener("change", renderPivots);

for (const input of [matchInputs.offset, matchInputs.size, matchInputs.seed]) {
  input.addEventListener("input", renderMatch);
}

for (const input of [fcInputs.epochs, fcInputs.hidden]) {
  input.addEventListener("input", () => {
    document.getElementById("fc-epochs-out").value = fcInputs.epochs.value;
    document.getElementById("fc-hidden-out").value = fcInputs.hidden.value;
  });
}
fcInputs.button.addEventListener("click", trainForecast);

renderPivots();
renderMatch();
trainForecast();
