import init, { waveletKernel, gaussianNoise, homogenize, frechetDiagonal } from "./pkg/waveletgan_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const list = (id) => Float64Array.from($(id).value.split(",").map((s) => Number(s.trim())));

function fail(el, e) {
  el.textContent = String(e.message ?? e);
  el.className = "error";
}

function plotKernel() {
  const info = $("k-info");
  const canvas = $("k-plot");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let k;
  try {
    k = waveletKernel(num("k-scale"), num("k-width"), num("k-sigma"));
  } catch (e) {
    return fail(info, e);
  }
  const amax = Math.max(...k.map(Math.abs)) || 1;
  const mid = canvas.height / 2;
  const step = canvas.width / k.length;
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(0, mid);
  ctx.lineTo(canvas.width, mid);
  ctx.stroke();
  ctx.fillStyle = "#2a6";
  k.forEach((v, j) => {
    const h = (v / amax) * (mid - 10);
    ctx.fillRect(j * step + step * 0.15, mid - Math.max(h, 0), step * 0.7, Math.abs(h));
  });
  const sum = k.reduce((a, b) => a + b, 0);
  info.className = "";
  info.textContent = `${k.length} taps, centre ${k[(k.length - 1) / 2].toFixed(5)}, sum ${sum.toExponential(3)}`;
}

function drawImage(canvas, values, size) {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const small = new ImageData(size, size);
  values.forEach((v, i) => {
    const g = Math.round((255 * (v - lo)) / span);
    small.data.set([g, g, g, 255], 4 * i);
  });
  const tmp = document.createElement("canvas");
  tmp.width = tmp.height = size;
  tmp.getContext("2d").putImageData(small, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function runHomogenize() {
  const size = 28;
  const info = $("h-info");
  try {
    const noise = gaussianNoise(size, size, num("h-seed"));
    const out = homogenize(noise, size, size, list("h-scales"), num("h-width"));
    drawImage($("h-in"), noise, size);
    drawImage($("h-out"), out, size);
    const sd = (xs) => Math.sqrt(xs.reduce((a, v) => a + v * v, 0) / xs.length);
    info.className = "";
    info.textContent = `Left: 28x28 Gaussian noise (rms ${sd(noise).toFixed(3)}). Right: channel average of its wavelet responses (rms ${sd(out).toFixed(3)}).`;
  } catch (e) {
    fail(info, e);
  }
}

function runFrechet() {
  const out = $("f-out");
  try {
    const d = frechetDiagonal(list("f-mua"), list("f-vara"), list("f-mub"), list("f-varb"));
    out.className = "";
    out.textContent = `distance ${d.toPrecision(8)}`;
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const id of ["k-scale", "k-width", "k-sigma"]) $(id).addEventListener("input", plotKernel);
for (const id of ["h-scales", "h-width", "h-seed"]) $(id).addEventListener("input", runHomogenize);
for (const id of ["f-mua", "f-vara", "f-mub", "f-varb"]) $(id).addEventListener("input", runFrechet);
plotKernel();
runHomogenize();
runFrechet();
